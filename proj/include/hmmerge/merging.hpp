#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "hmmerge/hmm.hpp"
#include "hmmerge/priors.hpp"

namespace hmmerge {

struct SearchConfig {
  /// Consecutive non-improving merges tolerated before stopping (1 = stop at the first drop).
  int lookahead = 5;
  /// 1 = best-first; larger values run beam_merge.
  int beam_width = 1;
  /// Samples incorporated per on-line step.
  int batch_size = 1;
  /// Samples incorporated before the first on-line merge.
  int warmup = 10;
  /// Restrict on-line merging to states with identical emission supports, then finish
  /// with one unconstrained batch pass.
  bool same_emission_phase = true;
  bool forbid_loops = false;
  bool allow_self_loops = true;
  /// Every state keeps exactly one output symbol.
  bool single_output = false;
  /// Recompute exact Viterbi counts every this many merges.
  std::optional<int> reparse_interval;
  /// Scale existing counts by this factor before each on-line increment.
  std::optional<double> count_decay;

  void validate() const;
};

using StatePair = std::pair<StateId, StateId>;

struct MergeCandidate {
  StatePair pair{};
  double objective_delta = 0.0;
  /// States whose per-state score terms change (the pair and their predecessors).
  std::vector<StateId> affected;
};

/// One accepted merge: `step <n> merge <q1> <q2> delta <d> objective <o> states <count>`.
struct MergeStep {
  int step = 0;
  StatePair pair{};
  double delta = 0.0;
  double objective = 0.0;
  std::size_t states = 0;
};

void write_trace(std::ostream& out, const std::vector<MergeStep>& trace);

/// Working model of the merging search.
///
/// Counts are the persistent state: the structure is the support of the count tables
/// and parameters are derived from counts on demand. State ids are stable for the
/// lifetime of a search; a merged state keeps the smaller id of its parents and the
/// other id becomes dead. Per-state score terms are cached and updated locally.
class MergeState {
 public:
  struct Row {
    TransitionRow out;      // target -> count (targets may be kFinal)
    EmissionRow emit;       // symbol -> count
    std::set<StateId> in;   // predecessors (may contain kInitial)
    bool alive = true;
  };

  MergeState() = default;
  explicit MergeState(Alphabet alphabet);

  const Alphabet& alphabet() const noexcept { return alphabet_; }
  std::size_t num_states() const noexcept { return alive_count_; }
  std::size_t num_transitions() const noexcept { return total_transitions_; }
  std::size_t num_emissions() const noexcept { return total_emissions_; }
  std::size_t samples_seen() const noexcept { return samples_seen_; }
  const std::vector<StateId>& alive_states() const;
  bool alive(StateId q) const;
  const Row& state(StateId q) const { return rows_.at(static_cast<std::size_t>(q)); }
  const TransitionRow& initial() const noexcept { return initial_; }
  const std::vector<MergeStep>& trace() const noexcept { return trace_; }
  const std::set<StatePair>& disallowed() const noexcept { return disallowed_; }
  void disallow(StatePair pair);

  /// Incorporated samples with their (possibly decayed) weights.
  const std::vector<std::pair<Sequence, double>>& samples() const noexcept { return samples_; }

  /// Appends a dedicated chain for `x` carrying `weight` on every element.
  void add_chain(const Sequence& x, double weight);
  /// Adds `weight` along an existing path (states in order).
  void add_path(const Sequence& x, const std::vector<StateId>& path, double weight);
  void record_sample(const Sequence& x, double weight, bool count_as_seen = true);
  void scale_counts(double factor);

  /// Merges the pair in place with optimistic count addition.
  void merge(StatePair pair);
  void push_trace(const MergeStep& step) { trace_.push_back(step); }

  /// Objective from cached per-state terms (recomputed if `config` differs from the cache).
  Score score(const PriorConfig& config) const;
  /// Objective change of merging `pair`, touching only affected states.
  MergeCandidate score_merge(StatePair pair, const PriorConfig& config) const;

  /// Dense export. `ids[k]` is the internal id of exported state k.
  struct Export {
    Hmm hmm;
    ViterbiCounts counts;
    std::vector<StateId> ids;
  };
  /// ML parameters.
  Export export_ml() const;
  /// Parameters estimated for `config` (MAP for joint_map, ML otherwise).
  Export export_model(const PriorConfig& config) const;
  Hmm to_hmm() const { return export_ml().hmm; }

  /// Recomputes exact Viterbi counts from the stored samples and drops elements
  /// that no Viterbi path uses. Throws UnparseableSample.
  void refresh();

  /// Canonical structure fingerprint (used to deduplicate beam entries).
  std::vector<long long> fingerprint() const;

 private:
  struct CachedScore {
    PriorConfig config;
    std::vector<double> terms;  // [2q] likelihood, [2q+1] parameter prior; last two: initial prior, prior sum
    double initial_term = 0.0;
    double sum = 0.0;  // likelihood sum
  };

  Alphabet alphabet_;
  TransitionRow initial_;
  std::vector<Row> rows_;
  std::size_t alive_count_ = 0;
  std::size_t total_transitions_ = 0;
  std::size_t total_emissions_ = 0;
  std::size_t samples_seen_ = 0;
  std::vector<std::pair<Sequence, double>> samples_;
  std::set<StatePair> disallowed_;
  std::vector<MergeStep> trace_;
  mutable std::optional<CachedScore> cache_;
  mutable std::optional<std::vector<StateId>> alive_list_;

  TransitionRow& out_row(StateId from) { return from == kInitial ? initial_ : rows_[static_cast<std::size_t>(from)].out; }
  const CachedScore& ensure_cache(const PriorConfig& config) const;
  double global_prior(const PriorConfig& config, std::size_t states, std::size_t transitions,
                      std::size_t emissions) const;
  void invalidate();
  void recount_totals();
};

/// Initial model: one chain per distinct sample, counts equal to multiplicities.
/// Throws EmptyCorpus.
MergeState build_initial_model(const Corpus& corpus);
MergeState build_initial_model(const Corpus& corpus, const Alphabet& alphabet);

/// Adds samples to the model: a sample the current model parses has its Viterbi path
/// counts incremented, any other sample gets a fresh chain.
MergeState incorporate_samples(MergeState state, const Corpus& new_samples, const SearchConfig& search = {});

/// Unscored candidate pairs after filtering.
std::vector<MergeCandidate> candidate_merges(const MergeState& state, const SearchConfig& search,
                                             bool same_emission_only = false);

/// Whether merging `pair` would put the merged state on a directed cycle
/// (`self_loop` reports a self-loop separately).
struct LoopCheck {
  bool cycle = false;
  bool self_loop = false;
};
LoopCheck merge_creates_loop(const MergeState& state, StatePair pair);

MergeState merge_states(MergeState state, StatePair pair);
MergeCandidate score_candidate(const MergeState& state, StatePair pair, const PriorConfig& config);

/// Best-first merging with lookahead. Returns the best-scoring model seen.
/// `config.lambda` is used as given; the caller applies the lambda schedule.
MergeState best_first_merge(MergeState state, const PriorConfig& config, const SearchConfig& search,
                            bool same_emission_only = false);

/// Beam search over merge sequences with disallowed-merge lists.
MergeState beam_merge(MergeState state, const PriorConfig& config, const SearchConfig& search,
                      bool same_emission_only = false);

/// Batch induction: initial model, then best-first (or beam) merging with the lambda
/// schedule applied to the corpus size.
MergeState batch_merge(const Corpus& corpus, const PriorConfig& config, const SearchConfig& search);

/// On-line induction over the samples in order.
MergeState online_merge(const Corpus& stream, const PriorConfig& config, const SearchConfig& search);
MergeState online_merge(const Corpus& stream, const Alphabet& alphabet, const PriorConfig& config,
                        const SearchConfig& search);

MergeState refresh_counts(MergeState state);

}  // namespace hmmerge

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hmmerge {

/// Non-sentinel states are dense indices 0..N-1; the two sentinels are negative.
using StateId = std::int32_t;
inline constexpr StateId kInitial = -1;
inline constexpr StateId kFinal = -2;

using SymbolId = std::int32_t;

/// A sample as read from a corpus: a sequence of symbol tokens.
using Sample = std::vector<std::string>;
/// A sample encoded against an alphabet.
using Sequence = std::vector<SymbolId>;

std::string join(const Sample& sample);

/// Ordered output alphabet. Symbols are non-empty and contain no whitespace.
class Alphabet {
 public:
  Alphabet() = default;
  explicit Alphabet(const std::vector<std::string>& symbols);

  /// Returns the id of `symbol`, adding it if necessary.
  SymbolId add(const std::string& symbol);
  std::optional<SymbolId> find(std::string_view symbol) const;
  /// Throws UnknownSymbol.
  SymbolId at(std::string_view symbol) const;
  const std::string& symbol(SymbolId id) const { return symbols_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const noexcept { return symbols_.size(); }
  const std::vector<std::string>& symbols() const noexcept { return symbols_; }

  Sequence encode(const Sample& sample) const;
  std::optional<Sequence> try_encode(const Sample& sample) const;
  Sample decode(const Sequence& sequence) const;

  bool operator==(const Alphabet& other) const { return symbols_ == other.symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, SymbolId> index_;
};

/// target -> value. Used for log-probabilities in Hmm and for counts in ViterbiCounts.
using TransitionRow = std::map<StateId, double>;
using EmissionRow = std::map<SymbolId, double>;

/// Discrete-output first-order HMM with distinguished initial and final states.
///
/// Parameters are stored as natural-log probabilities. The structure of the model
/// is the support of the tables: a transition or emission that is not stored has
/// probability exactly zero.
class Hmm {
 public:
  Hmm() = default;
  Hmm(Alphabet alphabet, std::size_t num_states);

  const Alphabet& alphabet() const noexcept { return alphabet_; }
  std::size_t num_states() const noexcept { return trans_.size(); }

  /// Outgoing transitions of `from`, which may be kInitial.
  const TransitionRow& transitions(StateId from) const;
  const EmissionRow& emissions(StateId state) const;

  /// Sets p(from -> to) = prob. A probability of zero removes the transition.
  void set_transition(StateId from, StateId to, double prob);
  void set_emission(StateId state, SymbolId symbol, double prob);
  void set_transition_log(StateId from, StateId to, double logprob);
  void set_emission_log(StateId state, SymbolId symbol, double logprob);

  double transition_logprob(StateId from, StateId to) const;
  double emission_logprob(StateId state, SymbolId symbol) const;

  /// Structure sizes. Transitions include those leaving the initial state.
  std::size_t num_transitions() const;
  std::size_t num_emissions() const;

  /// Checks the sentinel rules and that every non-empty row sums to one.
  /// Throws FormatError describing the first violation.
  void validate(double tolerance = 1e-9) const;

  /// Same state count, same structure, parameters equal within `tolerance` (in probability space).
  bool approx_equal(const Hmm& other, double tolerance) const;

 private:
  Alphabet alphabet_;
  TransitionRow initial_;
  std::vector<TransitionRow> trans_;
  std::vector<EmissionRow> emit_;

  TransitionRow& row(StateId from);
};

struct Path {
  std::vector<StateId> states;
  double logprob = 0.0;
};

/// Per-state transition and emission counts, indexed like the Hmm they were collected on.
struct ViterbiCounts {
  TransitionRow initial;
  std::vector<TransitionRow> trans;
  std::vector<EmissionRow> emit;

  ViterbiCounts() = default;
  explicit ViterbiCounts(std::size_t num_states) : trans(num_states), emit(num_states) {}

  std::size_t num_states() const noexcept { return trans.size(); }
  TransitionRow& transitions(StateId from) { return from == kInitial ? initial : trans.at(static_cast<std::size_t>(from)); }
  const TransitionRow& transitions(StateId from) const {
    return from == kInitial ? initial : trans.at(static_cast<std::size_t>(from));
  }
  void add_transition(StateId from, StateId to, double count) { transitions(from)[to] += count; }
  void add_emission(StateId state, SymbolId symbol, double count) {
    emit.at(static_cast<std::size_t>(state))[symbol] += count;
  }
  void add(const ViterbiCounts& other, double weight = 1.0);
  double total() const;
};

/// Multiset of samples, in input order (repeats encode multiplicity).
struct Corpus {
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  /// Distinct samples in first-appearance order with their multiplicities.
  std::vector<std::pair<Sample, std::size_t>> distinct() const;
  /// Symbols in first-appearance order.
  Alphabet alphabet() const;
  std::size_t max_length() const;
  std::size_t total_symbols() const;
};

/// log P(x | M) by the forward recursion. Throws UnknownSymbol.
double string_log_prob(const Hmm& hmm, const Sequence& x);
double string_log_prob(const Hmm& hmm, const Sample& x);
/// Like string_log_prob but returns -inf for symbols outside the alphabet.
double string_log_prob_or_zero(const Hmm& hmm, const Sample& x);

/// Most probable generating path; ties go to the lexicographically smallest state sequence.
std::optional<Path> viterbi_path(const Hmm& hmm, const Sequence& x);
std::optional<Path> viterbi_path(const Hmm& hmm, const Sample& x);

/// Structural parseability: some path with all-nonzero factors generates x.
bool parses(const Hmm& hmm, const Sample& x);

/// Counts along the Viterbi path of every corpus sample. Throws UnparseableSample.
ViterbiCounts viterbi_counts(const Hmm& hmm, const Corpus& corpus);

/// Maximum-likelihood parameters from counts over the structure of `structure`.
/// Zero-count elements get probability zero; states with no counts are dropped and
/// the remaining states are renumbered densely in their original order.
Hmm ml_estimates(const ViterbiCounts& counts, const Hmm& structure);

/// Draws a string. Throws MaxLengthExceeded when the walk exceeds `max_length` symbols.
Sample sample(const Hmm& hmm, std::mt19937_64& rng, std::size_t max_length = 1000);
Sample sample(const Hmm& hmm, std::uint64_t seed, std::size_t max_length = 1000);

/// Length cap used for sampling from models trained on strings of at most `longest` symbols.
std::size_t sampling_length_cap(std::size_t longest);

/// Removes elements whose expected count is below `threshold`, then trims states that are
/// unreachable, cannot reach the final state, or emit nothing, and renormalizes.
/// A threshold of zero returns the model unchanged. Throws EmptyModel.
Hmm prune(const Hmm& hmm, const ViterbiCounts& expected_counts, double threshold);

/// Removes useless states (same trimming as prune) without dropping any element.
Hmm trim(const Hmm& hmm);

}  // namespace hmmerge

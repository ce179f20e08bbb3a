#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "hmmerge/hmm.hpp"

namespace hmmerge {

struct BwConfig {
  std::size_t n_states = 6;
  /// When set, n_states = ceil(multiplier * longest training sample).
  std::optional<double> states_multiplier;
  int max_iters = 1000;
  /// Stop once the corpus log-likelihood improves by less than this (nats).
  double tol = 1e-6;
  int restarts = 10;
  std::uint64_t seed = 1;
  double prune_threshold = 1e-3;

  void validate() const;
  /// State count for a corpus whose longest sample has `longest` symbols.
  std::size_t states_for(std::size_t longest) const;
};

/// Fully connected model with rows drawn by normalizing independent uniform(0,1) draws.
Hmm random_init(std::size_t n_states, const Alphabet& alphabet, std::uint64_t seed);

struct ForwardBackward {
  ViterbiCounts expected;  // posterior expected counts
  double log_likelihood = 0.0;
  /// posteriors[t][q] = P(state q at time t | x).
  std::vector<std::vector<double>> posteriors;
};

/// Scaled forward-backward for one string. Throws ZeroProbabilitySample.
ForwardBackward forward_backward(const Hmm& hmm, const Sequence& x);

/// Summed expected counts and log-likelihood over a corpus (weights per sample).
/// Throws ZeroProbabilitySample listing every offender.
ForwardBackward expected_counts(const Hmm& hmm, const Corpus& corpus);

/// Reestimates a row set from expected counts, keeping the support of `hmm`.
/// Rows with no expected mass keep their previous parameters.
Hmm reestimate(const Hmm& hmm, const ViterbiCounts& expected);

struct BwResult {
  Hmm hmm;
  /// Corpus log-likelihood before each reestimation and after the last one.
  std::vector<double> log_likelihoods;
  int iterations = 0;
};

BwResult bw_train(const Hmm& init, const Corpus& corpus, const BwConfig& config);

struct RestartReport {
  int restart = 0;
  std::uint64_t seed = 0;
  int iterations = 0;
  double train_ll = 0.0;
  double test_ll = 0.0;
  std::size_t states_after_prune = 0;
  std::size_t parse_in = 0;
  std::size_t parse_out = 0;
  Hmm trained;
  Hmm pruned;
};

/// Runs `config.restarts` random restarts. Cross-parse columns are filled when a
/// target is given (with `mc` Monte-Carlo samples); test_ll is NaN when `test` is empty.
std::vector<RestartReport> bw_experiment(const Corpus& train, const Corpus& test, const BwConfig& config,
                                         const Hmm* target = nullptr, std::size_t mc = 100);

/// `restart,seed,iters,train_ll,test_ll,states_after_prune,parse_in,parse_out`.
void write_restart_report(std::ostream& out, const std::vector<RestartReport>& rows);

}  // namespace hmmerge

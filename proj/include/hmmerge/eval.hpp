#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "hmmerge/hmm.hpp"

namespace hmmerge {

struct CrossEntropy {
  double total_log_prob = 0.0;  // natural log
  double per_symbol = 0.0;      // nats, one end marker per string
  double perplexity = 1.0;
  std::size_t events = 0;       // symbols plus end markers
};

/// Bigram over the alphabet with start and end contexts and add-alpha smoothing.
class BigramModel {
 public:
  BigramModel() = default;
  /// Counts are taken from `corpus`; symbols outside `alphabet` are ignored.
  BigramModel(const Alphabet& alphabet, const Corpus& corpus, double alpha = 0.5);

  const Alphabet& alphabet() const noexcept { return alphabet_; }
  /// log P(x); -inf for symbols outside the alphabet.
  double log_prob(const Sample& x) const;

 private:
  Alphabet alphabet_;
  // row 0 = start context, row s+1 = after symbol s; column |Sigma| = end marker
  std::vector<std::vector<double>> logp_;
};

struct MixtureModel {
  Hmm component;
  BigramModel backoff;
  double weight = 0.5;  // proportion of the HMM component

  double log_prob(const Sample& x) const;
};

struct MixtureConfig {
  double initial_weight = 0.5;
  double bigram_alpha = 0.5;
  int max_iters = 200;
  double rel_tol = 1e-7;
};

struct MixtureFit {
  MixtureModel model;
  std::vector<double> log_likelihoods;  // per EM iteration, including the initial one
};

/// EM over the HMM parameters (fixed structure) and the mixture proportion on
/// `train` plus `held_in`. The bigram is estimated once from the same data.
MixtureFit fit_mixture(const Hmm& structure, const Corpus& train, const Corpus& held_in,
                       const MixtureConfig& config = {});

/// Throws ZeroProbabilitySample listing strings with zero probability.
CrossEntropy cross_entropy(const Hmm& model, const Corpus& test);
CrossEntropy cross_entropy(const MixtureModel& model, const Corpus& test);

struct CrossParseReport {
  std::size_t samples_in = 0;   // target-drawn strings parsed by the induced model
  std::size_t samples_out = 0;  // induced-drawn strings parsed by the target
  std::size_t n = 0;
};

/// Deterministic given `seed`; sample i of each direction uses its own derived seed.
CrossParseReport cross_parse(const Hmm& induced, const Hmm& target, std::size_t n, std::uint64_t seed);

bool language_equal(const Hmm& induced, const Hmm& target, std::size_t n, std::uint64_t seed);

struct EvalRow {
  std::string model_id;
  double test_ll_log10 = 0.0;
  double perplexity = 0.0;
  std::size_t parse_in = 0;
  std::size_t parse_out = 0;
  std::size_t states = 0;
  std::size_t transitions = 0;
  std::size_t emissions = 0;
};

/// `model_id,test_ll_log10,perplexity,parse_in,parse_out,states,transitions,emissions`.
void write_eval_report(std::ostream& out, const std::vector<EvalRow>& rows);

}  // namespace hmmerge

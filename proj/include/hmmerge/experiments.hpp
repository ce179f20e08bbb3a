#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "hmmerge/baum_welch.hpp"
#include "hmmerge/eval.hpp"
#include "hmmerge/hmm.hpp"
#include "hmmerge/merging.hpp"
#include "hmmerge/priors.hpp"

namespace hmmerge {

/// Built-in targets: "case1" = ac*a | bc*b, "case2" = a+b+a+b+. Throws UnknownCaseStudy.
Hmm case_study_target(const std::string& name);
/// Minimal training samples of a case study.
Corpus minimal_sample(const std::string& name);
/// The collapsed (a|b)c*(a|b) model.
Hmm overgeneral_case1_model();
/// `n` strings drawn from `target`.
Corpus random_sample(const Hmm& target, std::size_t n, std::uint64_t seed);

/// Default induction setup: description-length prior, narrow Dirichlet with total
/// weight 1, effective sample size 50, lookahead 5, on-line batch size 1 merging
/// after every sample, with the same-emission phase.
PriorConfig default_prior();
SearchConfig default_search();

/// On-line induction with the default protocol, returned as an ML model.
Hmm induce(const Corpus& corpus, const PriorConfig& prior, const SearchConfig& search);

struct WalkthroughStep {
  std::string label;
  std::vector<StatePair> merges;  // merges applied so far
  std::size_t states = 0;
  double log10_likelihood = 0.0;  // joint probability of the training samples
};

struct Walkthrough {
  std::vector<WalkthroughStep> steps;  // M_0 .. M_4
  double one_state_log10 = 0.0;        // fully merged model
  double one_state_oracle_log10 = 0.0; // same quantity by path enumeration
  Hmm search_result;                   // best-first under the default prior
  std::vector<MergeStep> search_trace;
};

/// The {ab, abab} walkthrough.
Walkthrough fig3_walkthrough();

/// Log probability by explicit enumeration of every state path (exponential; small models only).
double brute_force_log_prob(const Hmm& hmm, const Sequence& x);

struct SweepRow {
  double lambda = 0.0;
  std::size_t states = 0;
  std::size_t transitions = 0;
  std::size_t emissions = 0;
  CrossParseReport parse;
  bool language_equal = false;
  Hmm model;
};

/// Induces at each fixed lambda (no effective-sample schedule) and cross-parses
/// against the target with `mc` samples.
std::vector<SweepRow> lambda_sweep(const std::string& name, const std::vector<double>& lambdas, std::size_t mc,
                                   std::uint64_t seed);

void write_sweep(std::ostream& out, const std::vector<SweepRow>& rows);

struct CaseStudyRun {
  std::string sample;  // "minimal" or "random"
  std::uint64_t seed = 0;
  Hmm model;
  CrossParseReport parse;
  bool language_equal = false;
};

/// Merging runs on the minimal sample and on `random_runs` random samples of 20 strings.
std::vector<CaseStudyRun> case_study_runs(const std::string& name, std::size_t mc, std::uint64_t seed,
                                          std::size_t random_runs = 1, std::size_t random_size = 20);

// --- synthetic pronunciation corpus ---------------------------------------

struct WordData {
  std::string word;
  Hmm hidden;
  Corpus train;      // full training portion
  Corpus structure;  // first half of train, used for structure induction
  Corpus test;
};

struct PhoneCorpusConfig {
  std::size_t words = 50;
  std::size_t min_samples = 20;
  std::size_t max_samples = 100;
  std::size_t phones = 40;
  double test_fraction = 0.25;
  std::uint64_t seed = 1;
};

std::vector<WordData> synthetic_phone_corpus(const PhoneCorpusConfig& config);

struct TableConfig {
  std::vector<double> merge_lambdas{0.25, 0.5, 1.0};
  double single_output_lambda = 1.0;
  std::vector<double> bw_multipliers{1.0, 1.5, 1.75};
  int bw_restarts = 1;
  std::uint64_t seed = 1;
  std::size_t mc = 10;  // induced-model samples per word checked against the hidden model
};

/// Table-1-style comparison summed over words. Each HMM row is a mixture with the
/// shared bigram backoff, trained on the full training split.
std::vector<EvalRow> table1(const std::vector<WordData>& words, const TableConfig& config);

}  // namespace hmmerge

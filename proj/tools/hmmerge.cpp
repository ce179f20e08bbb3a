#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hmmerge/baum_welch.hpp"
#include "hmmerge/errors.hpp"
#include "hmmerge/eval.hpp"
#include "hmmerge/experiments.hpp"
#include "hmmerge/io.hpp"
#include "hmmerge/merging.hpp"
#include "hmmerge/priors.hpp"

using namespace hmmerge;

namespace {

constexpr double kLn10 = 2.302585092994045684;

struct PriorFlags {
  double lambda = 1.0;
  double neff = 50.0;
  bool no_neff = false;
  double alpha_t = 1.0;
  double alpha_e = 1.0;
  bool per_choice = false;
  std::string prior = "dl";
  std::string scope = "narrow";
  std::string objective = "posterior";
  bool empirical = false;
  std::optional<double> state_penalty;

  void attach(CLI::App* app) {
    app->add_option("--lambda", lambda, "Prior weight (used with --no-neff)")->capture_default_str();
    app->add_option("--neff", neff, "Effective sample size target")->capture_default_str();
    app->add_flag("--no-neff", no_neff, "Keep lambda fixed instead of following the sample count");
    app->add_option("--alpha-t", alpha_t, "Transition Dirichlet weight")->capture_default_str();
    app->add_option("--alpha-e", alpha_e, "Emission Dirichlet weight")->capture_default_str();
    app->add_flag("--per-choice-alpha", per_choice, "Alphas are per-choice weights rather than totals");
    app->add_option("--prior", prior, "Structure prior")
        ->check(CLI::IsMember({"bernoulli", "dl", "dl-single", "none"}))
        ->capture_default_str();
    app->add_option("--scope", scope, "Parameter prior support")
        ->check(CLI::IsMember({"narrow", "broad"}))
        ->capture_default_str();
    app->add_option("--objective", objective, "Merging objective")
        ->check(CLI::IsMember({"posterior", "joint", "likelihood"}))
        ->capture_default_str();
    app->add_flag("--empirical-emissions", empirical, "Broad emission prior follows symbol frequencies");
    app->add_option("--state-penalty", state_penalty, "Global per-state penalty C");
  }

  PriorConfig build() const {
    PriorConfig c;
    c.lambda = lambda;
    if (no_neff)
      c.effective_sample_target.reset();
    else
      c.effective_sample_target = neff;
    c.alpha_t = alpha_t;
    c.alpha_e = alpha_e;
    c.alpha_is_total = !per_choice;
    c.structure = parse_structure_prior(prior);
    c.scope = parse_scope(scope);
    c.objective = objective == "joint"        ? ObjectiveKind::joint_map
                  : objective == "likelihood" ? ObjectiveKind::likelihood
                                              : ObjectiveKind::structure_posterior;
    c.empirical_emission_prior = empirical;
    c.state_penalty = state_penalty;
    c.validate();
    return c;
  }
};

struct SearchFlags {
  int lookahead = 5;
  int beam = 1;
  int batch_size = 1;
  int warmup = 1;
  bool no_same_emission = false;
  bool single_output = false;
  bool forbid_loops = false;
  bool allow_self_loops = true;
  std::optional<int> reparse;
  std::optional<double> decay;
  std::string mode = "online";

  void attach(CLI::App* app) {
    app->add_option("--lookahead", lookahead, "Non-improving merges tolerated")->capture_default_str();
    app->add_option("--beam", beam, "Beam width (1 = best-first)")->capture_default_str();
    app->add_option("--batch-size", batch_size, "Samples per on-line increment")->capture_default_str();
    app->add_option("--warmup", warmup, "Samples incorporated before the first merge")->capture_default_str();
    app->add_flag("--no-same-emission", no_same_emission, "Skip the same-emission on-line phase");
    app->add_flag("--single-output", single_output, "One output symbol per state");
    app->add_flag("--forbid-loops", forbid_loops, "Reject merges that create cycles");
    app->add_flag("--allow-self-loops,!--no-self-loops", allow_self_loops,
                  "With --forbid-loops, whether self-loops are still allowed");
    app->add_option("--reparse-interval", reparse, "Refresh Viterbi counts every N merges");
    app->add_option("--decay", decay, "Count decay factor per on-line increment");
    app->add_option("--mode", mode, "online or batch")->check(CLI::IsMember({"online", "batch"}))->capture_default_str();
  }

  SearchConfig build() const {
    SearchConfig s;
    s.lookahead = lookahead;
    s.beam_width = beam;
    s.batch_size = batch_size;
    s.warmup = warmup;
    s.same_emission_phase = !no_same_emission;
    s.single_output = single_output;
    s.forbid_loops = forbid_loops;
    s.allow_self_loops = allow_self_loops;
    s.reparse_interval = reparse;
    s.count_decay = decay;
    s.validate();
    return s;
  }
};

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path);
  return out;
}

void write_model_outputs(const Hmm& hmm, const std::string& out, const std::string& dot) {
  if (!out.empty()) write_hmm_file(out, hmm);
  if (!dot.empty()) {
    auto f = open_out(dot);
    write_dot(f, hmm, "hmm");
  }
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------

struct InduceCmd {
  std::string corpus, out, trace, dot, target;
  std::size_t mc = 100;
  std::uint64_t seed = 1;
  PriorFlags prior;
  SearchFlags search;

  void attach(CLI::App* app) {
    app->add_option("--corpus", corpus, "Training corpus")->required();
    app->add_option("--out", out, "Write the induced model here (default: standard output)");
    app->add_option("--trace", trace, "Write the merge trace here");
    app->add_option("--dot", dot, "Write a DOT graph here");
    app->add_option("--target", target, "Cross-parse against this model");
    app->add_option("--mc", mc, "Monte-Carlo samples per direction")->capture_default_str();
    app->add_option("--seed", seed, "Random seed")->capture_default_str();
    prior.attach(app);
    search.attach(app);
  }

  int run() const {
    const PriorConfig pc = prior.build();
    const SearchConfig sc = search.build();
    const Corpus data = read_corpus_file(corpus);
    if (data.empty()) throw EmptyCorpus();
    MergeState state = search.mode == "batch" ? batch_merge(data, pc, sc) : online_merge(data, pc, sc);
    PriorConfig final_config = pc;
    final_config.lambda = lambda_schedule(state.samples_seen(), pc);
    const Hmm hmm = state.export_model(final_config).hmm;
    if (!trace.empty()) {
      auto f = open_out(trace);
      write_trace(f, state.trace());
    }
    write_model_outputs(hmm, out, dot);
    std::ostream& summary = out.empty() ? std::cerr : std::cout;
    summary << "states " << hmm.num_states() << " transitions " << hmm.num_transitions() << " emissions "
            << hmm.num_emissions() << " objective " << fmt(state.score(final_config).objective()) << " lambda "
            << final_config.lambda << " merges " << state.trace().size() << '\n';
    if (!target.empty()) {
      auto cp = cross_parse(hmm, read_hmm_file(target), mc, seed);
      summary << "parse_in " << cp.samples_in << " parse_out " << cp.samples_out << " n " << cp.n << '\n';
    }
    if (out.empty()) write_hmm(std::cout, hmm);
    return 0;
  }
};

struct BwCmd {
  std::string corpus, test, target, out, dot;
  BwConfig config;
  std::optional<double> multiplier;
  std::size_t mc = 100;

  void attach(CLI::App* app) {
    app->add_option("--corpus", corpus, "Training corpus")->required();
    app->add_option("--test", test, "Test corpus for test_ll");
    app->add_option("--target", target, "Cross-parse pruned models against this model");
    app->add_option("--out", out, "Write the best restart's pruned model here");
    app->add_option("--dot", dot, "Write a DOT graph of that model here");
    app->add_option("--states", config.n_states, "Number of states")->capture_default_str();
    app->add_option("--states-multiplier", multiplier, "States = ceil(multiplier * longest sample)");
    app->add_option("--restarts", config.restarts, "Random restarts")->capture_default_str();
    app->add_option("--seed", config.seed, "Seed of the first restart")->capture_default_str();
    app->add_option("--prune-threshold", config.prune_threshold, "Expected-count pruning threshold")
        ->capture_default_str();
    app->add_option("--max-iters", config.max_iters, "EM iteration cap")->capture_default_str();
    app->add_option("--tol", config.tol, "Log-likelihood improvement threshold")->capture_default_str();
    app->add_option("--mc", mc, "Monte-Carlo samples per direction")->capture_default_str();
  }

  int run() {
    config.states_multiplier = multiplier;
    config.validate();
    const Corpus train = read_corpus_file(corpus);
    if (train.empty()) throw EmptyCorpus();
    const Corpus test_set = test.empty() ? Corpus{} : read_corpus_file(test);
    std::optional<Hmm> target_model;
    if (!target.empty()) target_model = read_hmm_file(target);
    auto rows = bw_experiment(train, test_set, config, target_model ? &*target_model : nullptr, mc);
    write_restart_report(std::cout, rows);
    auto best = std::max_element(rows.begin(), rows.end(),
                                 [](const RestartReport& a, const RestartReport& b) { return a.train_ll < b.train_ll; });
    write_model_outputs(best->pruned, out, dot);
    return 0;
  }
};

struct EvalCmd {
  std::vector<std::string> models;
  std::string test, target, train, heldout;
  bool mixture = false;
  std::size_t mc = 100;
  std::uint64_t seed = 1;

  void attach(CLI::App* app) {
    app->add_option("--model,--induced", models, "Model file(s) to evaluate")->required();
    app->add_option("--test", test, "Test corpus");
    app->add_option("--target", target, "Cross-parse against this model");
    app->add_flag("--mixture", mixture, "Evaluate as a mixture with a bigram backoff");
    app->add_option("--train", train, "Mixture training corpus");
    app->add_option("--heldout", heldout, "Additional mixture training corpus");
    app->add_option("--mc", mc, "Monte-Carlo samples per direction")->capture_default_str();
    app->add_option("--seed", seed, "Random seed")->capture_default_str();
  }

  int run() const {
    if (test.empty() && target.empty()) throw ConfigError("eval needs --test and/or --target");
    if (mixture && train.empty()) throw ConfigError("--mixture needs --train");
    const Corpus test_set = test.empty() ? Corpus{} : read_corpus_file(test);
    std::optional<Hmm> target_model;
    if (!target.empty()) target_model = read_hmm_file(target);
    std::vector<EvalRow> rows;
    std::vector<double> weights;
    for (const auto& path : models) {
      const Hmm hmm = read_hmm_file(path);
      EvalRow row;
      row.model_id = path;
      row.states = hmm.num_states();
      row.transitions = hmm.num_transitions();
      row.emissions = hmm.num_emissions();
      row.test_ll_log10 = std::numeric_limits<double>::quiet_NaN();
      row.perplexity = std::numeric_limits<double>::quiet_NaN();
      if (!test.empty()) {
        CrossEntropy ce;
        if (mixture) {
          const Corpus held = heldout.empty() ? Corpus{} : read_corpus_file(heldout);
          auto fit = fit_mixture(hmm, read_corpus_file(train), held);
          ce = cross_entropy(fit.model, test_set);
          weights.push_back(fit.model.weight);
        } else {
          ce = cross_entropy(hmm, test_set);
        }
        row.test_ll_log10 = ce.total_log_prob / kLn10;
        row.perplexity = ce.perplexity;
      }
      if (target_model) {
        auto cp = cross_parse(hmm, *target_model, mc, seed);
        row.parse_in = cp.samples_in;
        row.parse_out = cp.samples_out;
      } else {
        for (const auto& s : test_set.samples)
          if (parses(hmm, s)) ++row.parse_in;
      }
      rows.push_back(row);
    }
    std::cout << "model_id,test_ll_log10,perplexity,parse_in,parse_out,states,transitions,emissions"
              << (mixture ? ",mixture_weight" : "") << '\n';
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      std::cout << r.model_id << ',' << fmt(r.test_ll_log10) << ',' << fmt(r.perplexity) << ',' << r.parse_in << ','
                << r.parse_out << ',' << r.states << ',' << r.transitions << ',' << r.emissions;
      if (mixture) std::cout << ',' << (i < weights.size() ? fmt(weights[i]) : "nan");
      std::cout << '\n';
    }
    return 0;
  }
};

struct SampleCmd {
  std::string model;
  std::size_t n = 10;
  std::uint64_t seed = 1;
  std::size_t max_length = 1000;

  void attach(CLI::App* app) {
    app->add_option("--model", model, "Model file")->required();
    app->add_option("-n,--count", n, "Number of strings")->capture_default_str();
    app->add_option("--seed", seed, "Random seed")->capture_default_str();
    app->add_option("--max-length", max_length, "Length guard")->capture_default_str();
  }

  int run() const {
    const Hmm hmm = read_hmm_file(model);
    std::mt19937_64 rng(seed);
    std::ostringstream buffer;
    for (std::size_t i = 0; i < n; ++i) buffer << join(sample(hmm, rng, max_length)) << '\n';
    std::cout << buffer.str();
    return 0;
  }
};

struct CaseStudyCmd {
  std::string name;
  std::size_t mc = 100;
  std::uint64_t seed = 1;
  std::vector<double> sweep;
  std::size_t random_runs = 1;
  bool with_bw = false;
  int restarts = 10;
  std::string out, dot, trace;

  void attach(CLI::App* app) {
    app->add_option("name", name, "case1, case2 or fig3")->required();
    app->add_option("--mc", mc, "Monte-Carlo samples per direction")->capture_default_str();
    app->add_option("--seed", seed, "Random seed")->capture_default_str();
    app->add_option("--lambda-sweep", sweep, "Comma-separated prior weights")->delimiter(',');
    app->add_option("--random-runs", random_runs, "Runs on random 20-string samples")->capture_default_str();
    app->add_flag("--bw", with_bw, "Also run Baum-Welch restarts");
    app->add_option("--restarts", restarts, "Baum-Welch restarts")->capture_default_str();
    app->add_option("--out", out, "Write the minimal-sample merged model here");
    app->add_option("--dot", dot, "Write its DOT graph here");
    app->add_option("--trace", trace, "Write the search trace here (fig3)");
  }

  int run() const {
    if (name == "fig3") {
      auto w = fig3_walkthrough();
      std::cout << "model,states,log10_likelihood,merges\n";
      for (const auto& s : w.steps) {
        std::cout << s.label << ',' << s.states << ',' << fmt(s.log10_likelihood) << ',';
        for (std::size_t i = 0; i < s.merges.size(); ++i)
          std::cout << (i ? " " : "") << '(' << s.merges[i].first << ' ' << s.merges[i].second << ')';
        std::cout << '\n';
      }
      std::cout << "one-state," << 1 << ',' << fmt(w.one_state_log10) << ",oracle " << fmt(w.one_state_oracle_log10)
                << '\n';
      std::cout << "search,states " << w.search_result.num_states() << ",merges " << w.search_trace.size() << '\n';
      write_trace(std::cout, w.search_trace);
      if (!trace.empty()) {
        auto f = open_out(trace);
        write_trace(f, w.search_trace);
      }
      write_model_outputs(w.search_result, out, dot);
      return 0;
    }
    const Hmm target = case_study_target(name);
    auto runs = case_study_runs(name, mc, seed, random_runs);
    std::cout << "run,sample,seed,states,transitions,emissions,parse_in,parse_out,language_equal\n";
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const auto& r = runs[i];
      std::cout << "merge-" << i << ',' << r.sample << ',' << r.seed << ',' << r.model.num_states() << ','
                << r.model.num_transitions() << ',' << r.model.num_emissions() << ',' << r.parse.samples_in << ','
                << r.parse.samples_out << ',' << (r.language_equal ? "true" : "false") << '\n';
    }
    write_model_outputs(runs.front().model, out, dot);
    if (!sweep.empty()) write_sweep(std::cout, lambda_sweep(name, sweep, mc, seed));
    if (with_bw) {
      BwConfig bw;
      bw.n_states = target.num_states();
      bw.restarts = restarts;
      bw.seed = seed;
      write_restart_report(std::cout, bw_experiment(minimal_sample(name), Corpus{}, bw, &target, mc));
    }
    return 0;
  }
};

struct TableCmd {
  PhoneCorpusConfig corpus;
  TableConfig table;
  std::string dump;

  void attach(CLI::App* app) {
    app->add_option("--words", corpus.words, "Number of words")->capture_default_str();
    app->add_option("--seed", corpus.seed, "Corpus and training seed")->capture_default_str();
    app->add_option("--restarts", table.bw_restarts, "Baum-Welch restarts per word")->capture_default_str();
    app->add_option("--mc", table.mc, "Induced-model samples per word")->capture_default_str();
    app->add_option("--dump", dump, "Write the generated training corpus here");
  }

  int run() {
    table.seed = corpus.seed;
    auto words = synthetic_phone_corpus(corpus);
    if (!dump.empty()) {
      auto f = open_out(dump);
      for (const auto& w : words) write_corpus(f, w.train);
    }
    write_eval_report(std::cout, table1(words, table));
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HMM induction by Bayesian state merging, with a Baum-Welch baseline"};
  app.require_subcommand(1);
  InduceCmd induce;
  BwCmd bw;
  EvalCmd eval;
  SampleCmd sampler;
  CaseStudyCmd casestudy;
  TableCmd table;
  auto* c_induce = app.add_subcommand("induce", "Induce an HMM by state merging");
  induce.attach(c_induce);
  auto* c_bw = app.add_subcommand("bw", "Baum-Welch training with random restarts");
  bw.attach(c_bw);
  auto* c_eval = app.add_subcommand("eval", "Evaluate models on a test corpus and/or against a target");
  eval.attach(c_eval);
  auto* c_sample = app.add_subcommand("sample", "Draw strings from a model");
  sampler.attach(c_sample);
  auto* c_case = app.add_subcommand("casestudy", "Reproduce a built-in case study");
  casestudy.attach(c_case);
  auto* c_table = app.add_subcommand("table", "Model comparison on a synthetic pronunciation corpus");
  table.attach(c_table);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  try {
    if (c_induce->parsed()) return induce.run();
    if (c_bw->parsed()) return bw.run();
    if (c_eval->parsed()) return eval.run();
    if (c_sample->parsed()) return sampler.run();
    if (c_case->parsed()) return casestudy.run();
    if (c_table->parsed()) return table.run();
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}

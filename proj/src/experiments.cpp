#include "hmmerge/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <limits>
#include <random>
#include <sstream>

#include "hmmerge/errors.hpp"
#include "log_math.hpp"

namespace hmmerge {

namespace {

constexpr double kLn10 = 2.302585092994045684;

Corpus corpus_of(const std::vector<std::string>& lines) {
  Corpus c;
  for (const auto& l : lines) {
    Sample s;
    for (char ch : l) s.emplace_back(1, ch);
    c.samples.push_back(std::move(s));
  }
  return c;
}

double corpus_log10(const Hmm& hmm, const Corpus& corpus) {
  double total = 0.0;
  for (const auto& s : corpus.samples) total += string_log_prob(hmm, s);
  return total / kLn10;
}

// Same model over a larger alphabet.
Hmm with_alphabet(const Hmm& hmm, const Alphabet& alphabet) {
  Hmm out(alphabet, hmm.num_states());
  for (const auto& [to, lp] : hmm.transitions(kInitial)) out.set_transition_log(kInitial, to, lp);
  for (std::size_t q = 0; q < hmm.num_states(); ++q) {
    const auto state = static_cast<StateId>(q);
    for (const auto& [to, lp] : hmm.transitions(state)) out.set_transition_log(state, to, lp);
    for (const auto& [s, lp] : hmm.emissions(state))
      out.set_emission_log(state, alphabet.at(hmm.alphabet().symbol(s)), lp);
  }
  return out;
}

}  // namespace

Hmm case_study_target(const std::string& name) {
  if (name == "case1") {
    Hmm h(Alphabet({"a", "b", "c"}), 6);
    const SymbolId a = 0, b = 1, c = 2;
    h.set_transition(kInitial, 0, 0.5);
    h.set_transition(kInitial, 3, 0.5);
    for (StateId base : {0, 3}) {
      const SymbolId edge = base == 0 ? a : b;
      h.set_emission(base, edge, 1.0);
      h.set_emission(base + 1, c, 1.0);
      h.set_emission(base + 2, edge, 1.0);
      h.set_transition(base, base + 1, 0.5);
      h.set_transition(base, base + 2, 0.5);
      h.set_transition(base + 1, base + 1, 0.5);
      h.set_transition(base + 1, base + 2, 0.5);
      h.set_transition(base + 2, kFinal, 1.0);
    }
    return h;
  }
  if (name == "case2") {
    Hmm h(Alphabet({"a", "b"}), 4);
    h.set_transition(kInitial, 0, 1.0);
    for (StateId q = 0; q < 4; ++q) {
      h.set_emission(q, q % 2 == 0 ? 0 : 1, 1.0);
      h.set_transition(q, q, 0.5);
      h.set_transition(q, q == 3 ? kFinal : q + 1, 0.5);
    }
    return h;
  }
  throw UnknownCaseStudy(name);
}

Corpus minimal_sample(const std::string& name) {
  if (name == "case1") return corpus_of({"aa", "bb", "aca", "bcb", "acca", "bccb", "accca", "bcccb"});
  if (name == "case2")
    return corpus_of({"abab", "aabab", "abbab", "abaab", "ababb", "aaabab", "abbbab", "abaaab", "ababbb"});
  if (name == "fig3") return corpus_of({"ab", "abab"});
  throw UnknownCaseStudy(name);
}

Hmm overgeneral_case1_model() {
  Hmm h(Alphabet({"a", "b", "c"}), 3);
  h.set_transition(kInitial, 0, 1.0);
  h.set_emission(0, 0, 0.5);
  h.set_emission(0, 1, 0.5);
  h.set_emission(1, 2, 1.0);
  h.set_emission(2, 0, 0.5);
  h.set_emission(2, 1, 0.5);
  h.set_transition(0, 1, 0.5);
  h.set_transition(0, 2, 0.5);
  h.set_transition(1, 1, 0.5);
  h.set_transition(1, 2, 0.5);
  h.set_transition(2, kFinal, 1.0);
  return h;
}

Corpus random_sample(const Hmm& target, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Corpus c;
  for (std::size_t i = 0; i < n; ++i) c.samples.push_back(sample(target, rng));
  return c;
}

PriorConfig default_prior() { return PriorConfig{}; }

SearchConfig default_search() {
  SearchConfig s;
  s.warmup = 1;
  return s;
}

Hmm induce(const Corpus& corpus, const PriorConfig& prior, const SearchConfig& search) {
  return online_merge(corpus, prior, search).to_hmm();
}

double brute_force_log_prob(const Hmm& hmm, const Sequence& x) {
  double total = -std::numeric_limits<double>::infinity();
  std::function<void(std::size_t, StateId, double)> walk = [&](std::size_t t, StateId prev, double lp) {
    if (t == x.size()) {
      total = detail::log_add(total, lp + hmm.transition_logprob(prev, kFinal));
      return;
    }
    for (const auto& [to, tl] : hmm.transitions(prev)) {
      if (to == kFinal) continue;
      const double e = hmm.emission_logprob(to, x[t]);
      if (std::isinf(e)) continue;
      walk(t + 1, to, lp + tl + e);
    }
  };
  walk(0, kInitial, 0.0);
  return total;
}

Walkthrough fig3_walkthrough() {
  const Corpus corpus = minimal_sample("fig3");
  MergeState state = build_initial_model(corpus);
  Walkthrough w;
  const std::vector<StatePair> script{{0, 2}, {1, 3}, {1, 5}, {0, 4}};
  auto record = [&](const std::string& label, std::vector<StatePair> merges) {
    Hmm hmm = state.to_hmm();
    w.steps.push_back({label, std::move(merges), hmm.num_states(), corpus_log10(hmm, corpus)});
  };
  record("M_0", {});
  std::vector<StatePair> applied;
  for (std::size_t i = 0; i < script.size(); ++i) {
    state.merge(script[i]);
    applied.push_back(script[i]);
    record("M_" + std::to_string(i + 1), applied);
  }
  MergeState collapsed = state;
  while (collapsed.num_states() > 1) {
    const auto& ids = collapsed.alive_states();
    collapsed.merge({ids[0], ids[1]});
  }
  const Hmm one = collapsed.to_hmm();
  w.one_state_log10 = corpus_log10(one, corpus);
  double oracle = 0.0;
  for (const auto& s : corpus.samples) oracle += brute_force_log_prob(one, one.alphabet().encode(s));
  w.one_state_oracle_log10 = oracle / kLn10;

  PriorConfig prior = default_prior();
  prior.effective_sample_target.reset();
  prior.lambda = 1.0;
  MergeState best = best_first_merge(build_initial_model(corpus), prior, default_search());
  w.search_result = best.to_hmm();
  w.search_trace = best.trace();
  return w;
}

std::vector<SweepRow> lambda_sweep(const std::string& name, const std::vector<double>& lambdas, std::size_t mc,
                                   std::uint64_t seed) {
  const Hmm target = case_study_target(name);
  const Corpus corpus = minimal_sample(name);
  std::vector<SweepRow> rows;
  for (double lambda : lambdas) {
    PriorConfig prior = default_prior();
    prior.effective_sample_target.reset();
    prior.lambda = lambda;
    SweepRow row;
    row.lambda = lambda;
    row.model = induce(corpus, prior, default_search());
    row.states = row.model.num_states();
    row.transitions = row.model.num_transitions();
    row.emissions = row.model.num_emissions();
    row.parse = cross_parse(row.model, target, mc, seed);
    row.language_equal = row.parse.samples_in == mc && row.parse.samples_out == mc;
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_sweep(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "lambda,states,transitions,emissions,parse_in,parse_out,language_equal\n";
  for (const auto& r : rows)
    out << r.lambda << ',' << r.states << ',' << r.transitions << ',' << r.emissions << ',' << r.parse.samples_in
        << ',' << r.parse.samples_out << ',' << (r.language_equal ? "true" : "false") << '\n';
}

std::vector<CaseStudyRun> case_study_runs(const std::string& name, std::size_t mc, std::uint64_t seed,
                                          std::size_t random_runs, std::size_t random_size) {
  const Hmm target = case_study_target(name);
  std::vector<CaseStudyRun> runs;
  auto run = [&](const std::string& kind, std::uint64_t s, const Corpus& corpus) {
    CaseStudyRun r;
    r.sample = kind;
    r.seed = s;
    r.model = induce(corpus, default_prior(), default_search());
    r.parse = cross_parse(r.model, target, mc, s);
    r.language_equal = r.parse.samples_in == mc && r.parse.samples_out == mc;
    runs.push_back(std::move(r));
  };
  run("minimal", seed, minimal_sample(name));
  for (std::size_t i = 0; i < random_runs; ++i) {
    const std::uint64_t s = seed + 1000 + i;
    run("random", s, random_sample(target, random_size, s));
  }
  return runs;
}

// ---------------------------------------------------------------------------

std::vector<WordData> synthetic_phone_corpus(const PhoneCorpusConfig& config) {
  static const std::vector<std::string> kPhones{
      "aa", "ae", "ah", "ao", "aw", "ay", "b",  "ch", "d",  "dh", "eh", "er", "ey", "f",  "g",  "hh", "ih", "iy", "jh", "k",
      "l",  "m",  "n",  "ng", "ow", "oy", "p",  "r",  "s",  "sh", "t",  "th", "uh", "uw", "v",  "w",  "y",  "z",  "zh", "dx"};
  if (config.phones < 2 || config.phones > kPhones.size()) throw ConfigError("phone inventory size out of range");
  if (config.words < 1 || config.min_samples < 4 || config.max_samples < config.min_samples)
    throw ConfigError("bad corpus shape");
  const Alphabet phones(std::vector<std::string>(kPhones.begin(), kPhones.begin() + static_cast<long>(config.phones)));
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };

  std::vector<WordData> words;
  for (std::size_t w = 0; w < config.words; ++w) {
    // positions: 1 or 2 alternative phones, some optional
    const std::size_t len = 3 + pick(5);
    struct Position {
      std::vector<std::pair<SymbolId, double>> phones;
      double skip = 0.0;
      std::vector<StateId> states;
    };
    std::vector<Position> pos(len);
    std::size_t n_states = 0;
    for (std::size_t k = 0; k < len; ++k) {
      auto p0 = static_cast<SymbolId>(pick(config.phones));
      if (u(rng) < 0.35) {
        auto p1 = static_cast<SymbolId>(pick(config.phones));
        if (p1 == p0) p1 = static_cast<SymbolId>((p0 + 1) % static_cast<SymbolId>(config.phones));
        const double q = 0.2 + 0.3 * u(rng);
        pos[k].phones = {{p0, 1.0 - q}, {p1, q}};
      } else {
        pos[k].phones = {{p0, 1.0}};
      }
      if (k > 0 && k + 1 < len && pos[k - 1].skip == 0.0 && u(rng) < 0.2) pos[k].skip = 0.2 + 0.2 * u(rng);
      for (std::size_t i = 0; i < pos[k].phones.size(); ++i) pos[k].states.push_back(static_cast<StateId>(n_states++));
    }
    Hmm hidden(phones, n_states);
    for (std::size_t k = 0; k < len; ++k)
      for (std::size_t i = 0; i < pos[k].states.size(); ++i) hidden.set_emission(pos[k].states[i], pos[k].phones[i].first, 1.0);
    // distribution over the next emitting states when entering position k
    auto add_entry = [&](StateId from, std::size_t k, double mass, auto&& self) -> void {
      if (k == len) {
        hidden.set_transition(from, kFinal, std::exp(hidden.transition_logprob(from, kFinal)) + mass);
        return;
      }
      const double stay = mass * (1.0 - pos[k].skip);
      for (std::size_t i = 0; i < pos[k].states.size(); ++i) {
        const StateId to = pos[k].states[i];
        hidden.set_transition(from, to, std::exp(hidden.transition_logprob(from, to)) + stay * pos[k].phones[i].second);
      }
      if (pos[k].skip > 0.0) self(from, k + 1, mass * pos[k].skip, self);
    };
    add_entry(kInitial, 0, 1.0, add_entry);
    for (std::size_t k = 0; k < len; ++k)
      for (StateId q : pos[k].states) add_entry(q, k + 1, 1.0, add_entry);
    hidden.validate(1e-9);

    WordData data;
    std::ostringstream name;
    name << "w" << std::setw(3) << std::setfill('0') << w;
    data.word = name.str();
    data.hidden = hidden;
    const std::size_t n = config.min_samples + pick(config.max_samples - config.min_samples + 1);
    auto n_test = static_cast<std::size_t>(std::round(config.test_fraction * static_cast<double>(n)));
    n_test = std::clamp<std::size_t>(n_test, 1, n - 2);
    for (std::size_t i = 0; i < n; ++i) {
      Sample s = sample(hidden, rng);
      if (i < n - n_test)
        data.train.samples.push_back(std::move(s));
      else
        data.test.samples.push_back(std::move(s));
    }
    data.structure.samples.assign(data.train.samples.begin(),
                                  data.train.samples.begin() + static_cast<long>(data.train.size() / 2));
    words.push_back(std::move(data));
  }
  return words;
}

std::vector<EvalRow> table1(const std::vector<WordData>& words, const TableConfig& config) {
  if (words.empty()) throw EmptyCorpus();
  const Alphabet& phones = words.front().hidden.alphabet();

  struct Accumulator {
    EvalRow row;
    double ll = 0.0;
    std::size_t events = 0;
  };
  auto finish = [](Accumulator& a) {
    a.row.test_ll_log10 = a.ll / kLn10;
    a.row.perplexity = std::exp(-a.ll / static_cast<double>(a.events));
    return a.row;
  };

  using Builder = std::function<Hmm(const WordData&, std::uint64_t)>;
  std::vector<std::pair<std::string, Builder>> methods;
  methods.emplace_back("ML", [&](const WordData& w, std::uint64_t) {
    return build_initial_model(w.structure, phones).to_hmm();
  });
  auto merged = [&](double lambda, bool single_output) {
    return [&phones, lambda, single_output](const WordData& w, std::uint64_t) {
      PriorConfig prior = default_prior();
      prior.effective_sample_target.reset();
      prior.lambda = lambda;
      if (single_output) prior.structure = StructurePriorKind::description_length_single_output;
      SearchConfig search = default_search();
      search.forbid_loops = true;
      search.allow_self_loops = false;
      search.single_output = single_output;
      return online_merge(w.structure, phones, prior, search).to_hmm();
    };
  };
  for (double lambda : config.merge_lambdas) {
    std::ostringstream id;
    id << "M(lambda=" << lambda << ")";
    methods.emplace_back(id.str(), merged(lambda, false));
  }
  {
    std::ostringstream id;
    id << "M1(lambda=" << config.single_output_lambda << ")";
    methods.emplace_back(id.str(), merged(config.single_output_lambda, true));
  }
  for (double mult : config.bw_multipliers) {
    std::ostringstream id;
    id << "BW(N=" << mult << "L)";
    methods.emplace_back(id.str(), [&phones, mult, &config](const WordData& w, std::uint64_t seed) {
      BwConfig bw;
      bw.states_multiplier = mult;
      bw.restarts = config.bw_restarts;
      bw.seed = seed;
      auto rows = bw_experiment(w.structure, Corpus{}, bw);
      auto best = std::max_element(rows.begin(), rows.end(),
                                   [](const RestartReport& a, const RestartReport& b) { return a.train_ll < b.train_ll; });
      return with_alphabet(best->pruned, phones);
    });
  }

  std::vector<EvalRow> rows;
  {
    Accumulator bg;
    bg.row.model_id = "BG";
    for (const auto& w : words) {
      BigramModel bigram(phones, w.train);
      for (const auto& s : w.test.samples) {
        bg.ll += bigram.log_prob(s);
        bg.events += s.size() + 1;
      }
      bg.row.parse_in += w.test.size();
    }
    rows.push_back(finish(bg));
  }
  for (const auto& [id, build] : methods) {
    Accumulator acc;
    acc.row.model_id = id;
    for (std::size_t k = 0; k < words.size(); ++k) {
      const auto& w = words[k];
      const std::uint64_t seed = config.seed * 1000003ULL + k;
      Hmm structure = build(w, seed);
      acc.row.states += structure.num_states();
      acc.row.transitions += structure.num_transitions();
      acc.row.emissions += structure.num_emissions();
      Corpus held_in;
      held_in.samples.assign(w.train.samples.begin() + static_cast<long>(w.structure.size()), w.train.samples.end());
      auto fit = fit_mixture(structure, w.structure, held_in);
      auto ce = cross_entropy(fit.model, w.test);
      acc.ll += ce.total_log_prob;
      acc.events += ce.events;
      for (const auto& s : w.test.samples)
        if (parses(structure, s)) ++acc.row.parse_in;
      std::mt19937_64 rng(seed);
      for (std::size_t i = 0; i < config.mc; ++i) {
        try {
          if (parses(w.hidden, sample(fit.model.component, rng))) ++acc.row.parse_out;
        } catch (const MaxLengthExceeded&) {
        }
      }
    }
    rows.push_back(finish(acc));
  }
  return rows;
}

}  // namespace hmmerge

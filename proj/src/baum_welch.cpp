#include "hmmerge/baum_welch.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <random>

#include "hmmerge/errors.hpp"
#include "hmmerge/eval.hpp"

namespace hmmerge {

void BwConfig::validate() const {
  if (!states_multiplier && n_states < 1) throw ConfigError("n_states must be at least 1");
  if (states_multiplier && !(*states_multiplier > 0.0)) throw ConfigError("states multiplier must be positive");
  if (!(tol > 0.0)) throw ConfigError("tol must be positive");
  if (restarts < 1) throw ConfigError("restarts must be at least 1");
  if (max_iters < 0) throw ConfigError("max_iters must be non-negative");
  if (prune_threshold < 0.0) throw ConfigError("prune threshold must be non-negative");
}

std::size_t BwConfig::states_for(std::size_t longest) const {
  if (!states_multiplier) return n_states;
  auto n = static_cast<std::size_t>(std::ceil(*states_multiplier * static_cast<double>(longest) - 1e-9));
  return std::max<std::size_t>(1, n);
}

Hmm random_init(std::size_t n_states, const Alphabet& alphabet, std::uint64_t seed) {
  if (n_states < 1) throw ConfigError("n_states must be at least 1");
  if (alphabet.size() == 0) throw ConfigError("empty alphabet");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Hmm hmm(alphabet, n_states);
  auto draw = [&](std::size_t k) {
    std::vector<double> v(k);
    double total = 0.0;
    for (auto& x : v) {
      do x = u(rng);
      while (x <= 0.0);
      total += x;
    }
    for (auto& x : v) x /= total;
    return v;
  };
  auto init = draw(n_states);
  for (std::size_t j = 0; j < n_states; ++j) hmm.set_transition(kInitial, static_cast<StateId>(j), init[j]);
  for (std::size_t i = 0; i < n_states; ++i) {
    auto row = draw(n_states + 1);
    for (std::size_t j = 0; j < n_states; ++j) hmm.set_transition(static_cast<StateId>(i), static_cast<StateId>(j), row[j]);
    hmm.set_transition(static_cast<StateId>(i), kFinal, row[n_states]);
    auto em = draw(alphabet.size());
    for (std::size_t s = 0; s < alphabet.size(); ++s) hmm.set_emission(static_cast<StateId>(i), static_cast<SymbolId>(s), em[s]);
  }
  return hmm;
}

namespace {

struct Dense {
  std::size_t n = 0;
  std::vector<double> init, fin;
  std::vector<std::vector<double>> a;             // a[i][j]
  std::vector<std::vector<std::size_t>> succ;     // nonzero targets per state
  std::vector<std::vector<double>> b;             // b[i][s]

  explicit Dense(const Hmm& hmm) : n(hmm.num_states()), init(n, 0.0), fin(n, 0.0), a(n, std::vector<double>(n, 0.0)),
                                   succ(n), b(n, std::vector<double>(hmm.alphabet().size(), 0.0)) {
    for (const auto& [to, lp] : hmm.transitions(kInitial))
      if (to >= 0) init[static_cast<std::size_t>(to)] = std::exp(lp);
    for (std::size_t i = 0; i < n; ++i) {
      for (const auto& [to, lp] : hmm.transitions(static_cast<StateId>(i))) {
        if (to == kFinal) {
          fin[i] = std::exp(lp);
        } else {
          a[i][static_cast<std::size_t>(to)] = std::exp(lp);
          succ[i].push_back(static_cast<std::size_t>(to));
        }
      }
      for (const auto& [s, lp] : hmm.emissions(static_cast<StateId>(i))) b[i][static_cast<std::size_t>(s)] = std::exp(lp);
    }
  }
};

ForwardBackward run_fb(const Hmm& hmm, const Dense& d, const Sequence& x) {
  ForwardBackward fb;
  fb.expected = ViterbiCounts(d.n);
  const std::size_t len = x.size();
  auto zero = [&]() { return ZeroProbabilitySample({join(hmm.alphabet().decode(x))}); };
  if (len == 0) {
    double p = std::exp(hmm.transition_logprob(kInitial, kFinal));
    if (!(p > 0.0)) throw zero();
    fb.log_likelihood = std::log(p);
    fb.expected.add_transition(kInitial, kFinal, 1.0);
    return fb;
  }
  std::vector<std::vector<double>> alpha(len, std::vector<double>(d.n, 0.0)), beta(len, std::vector<double>(d.n, 0.0));
  std::vector<double> c(len + 1, 0.0);
  for (std::size_t j = 0; j < d.n; ++j) alpha[0][j] = d.init[j] * d.b[j][static_cast<std::size_t>(x[0])];
  for (std::size_t t = 0; t < len; ++t) {
    if (t > 0) {
      const auto sym = static_cast<std::size_t>(x[t]);
      for (std::size_t i = 0; i < d.n; ++i) {
        const double ai = alpha[t - 1][i];
        if (ai == 0.0) continue;
        for (std::size_t j : d.succ[i]) alpha[t][j] += ai * d.a[i][j];
      }
      for (std::size_t j = 0; j < d.n; ++j) alpha[t][j] *= d.b[j][sym];
    }
    double s = 0.0;
    for (double v : alpha[t]) s += v;
    if (!(s > 0.0)) throw zero();
    c[t] = s;
    for (auto& v : alpha[t]) v /= s;
  }
  double end = 0.0;
  for (std::size_t i = 0; i < d.n; ++i) end += alpha[len - 1][i] * d.fin[i];
  if (!(end > 0.0)) throw zero();
  c[len] = end;
  for (double v : c) fb.log_likelihood += std::log(v);

  for (std::size_t i = 0; i < d.n; ++i) beta[len - 1][i] = d.fin[i] / c[len];
  for (std::size_t t = len - 1; t-- > 0;) {
    const auto sym = static_cast<std::size_t>(x[t + 1]);
    for (std::size_t i = 0; i < d.n; ++i) {
      double s = 0.0;
      for (std::size_t j : d.succ[i]) s += d.a[i][j] * d.b[j][sym] * beta[t + 1][j];
      beta[t][i] = s / c[t + 1];
    }
  }

  fb.posteriors.assign(len, std::vector<double>(d.n, 0.0));
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t i = 0; i < d.n; ++i) {
      const double g = alpha[t][i] * beta[t][i];
      fb.posteriors[t][i] = g;
      if (g > 0.0) fb.expected.add_emission(static_cast<StateId>(i), x[t], g);
    }
  for (std::size_t j = 0; j < d.n; ++j)
    if (fb.posteriors[0][j] > 0.0) fb.expected.add_transition(kInitial, static_cast<StateId>(j), fb.posteriors[0][j]);
  for (std::size_t i = 0; i < d.n; ++i)
    if (fb.posteriors[len - 1][i] > 0.0 && d.fin[i] > 0.0)
      fb.expected.add_transition(static_cast<StateId>(i), kFinal, fb.posteriors[len - 1][i]);
  for (std::size_t t = 0; t + 1 < len; ++t) {
    const auto sym = static_cast<std::size_t>(x[t + 1]);
    for (std::size_t i = 0; i < d.n; ++i) {
      if (alpha[t][i] == 0.0) continue;
      for (std::size_t j : d.succ[i]) {
        const double xi = alpha[t][i] * d.a[i][j] * d.b[j][sym] * beta[t + 1][j] / c[t + 1];
        if (xi > 0.0) fb.expected.add_transition(static_cast<StateId>(i), static_cast<StateId>(j), xi);
      }
    }
  }
  return fb;
}

}  // namespace

ForwardBackward forward_backward(const Hmm& hmm, const Sequence& x) {
  Dense d(hmm);
  return run_fb(hmm, d, x);
}

ForwardBackward expected_counts(const Hmm& hmm, const Corpus& corpus) {
  Dense d(hmm);
  ForwardBackward total;
  total.expected = ViterbiCounts(hmm.num_states());
  std::vector<std::string> offenders;
  for (const auto& [s, mult] : corpus.distinct()) {
    auto seq = hmm.alphabet().try_encode(s);
    if (!seq) {
      offenders.push_back(join(s));
      continue;
    }
    try {
      auto fb = run_fb(hmm, d, *seq);
      const double w = static_cast<double>(mult);
      total.expected.add(fb.expected, w);
      total.log_likelihood += w * fb.log_likelihood;
    } catch (const ZeroProbabilitySample&) {
      offenders.push_back(join(s));
    }
  }
  if (!offenders.empty()) throw ZeroProbabilitySample(std::move(offenders));
  return total;
}

Hmm reestimate(const Hmm& hmm, const ViterbiCounts& expected) {
  Hmm out = hmm;
  auto update = [&](StateId from) {
    const auto& ec = expected.transitions(from);
    double total = 0.0;
    for (const auto& [to, c] : ec) total += c;
    if (!(total > 0.0)) return;
    for (const auto& [to, lp] : hmm.transitions(from)) {
      auto it = ec.find(to);
      out.set_transition(from, to, it == ec.end() ? 0.0 : it->second / total);
    }
  };
  update(kInitial);
  for (std::size_t q = 0; q < hmm.num_states(); ++q) {
    const auto state = static_cast<StateId>(q);
    update(state);
    const auto& ec = expected.emit[q];
    double total = 0.0;
    for (const auto& [s, c] : ec) total += c;
    if (!(total > 0.0)) continue;
    for (const auto& [s, lp] : hmm.emissions(state)) {
      auto it = ec.find(s);
      out.set_emission(state, s, it == ec.end() ? 0.0 : it->second / total);
    }
  }
  return out;
}

BwResult bw_train(const Hmm& init, const Corpus& corpus, const BwConfig& config) {
  config.validate();
  if (corpus.empty()) throw EmptyCorpus();
  BwResult result;
  result.hmm = init;
  auto fb = expected_counts(result.hmm, corpus);
  result.log_likelihoods.push_back(fb.log_likelihood);
  for (int it = 1; it <= config.max_iters; ++it) {
    Hmm next = reestimate(result.hmm, fb.expected);
    auto next_fb = expected_counts(next, corpus);
    result.hmm = std::move(next);
    result.iterations = it;
    result.log_likelihoods.push_back(next_fb.log_likelihood);
    const double gain = next_fb.log_likelihood - fb.log_likelihood;
    fb = std::move(next_fb);
    if (gain < config.tol) break;
  }
  return result;
}

std::vector<RestartReport> bw_experiment(const Corpus& train, const Corpus& test, const BwConfig& config,
                                         const Hmm* target, std::size_t mc) {
  config.validate();
  if (train.empty()) throw EmptyCorpus();
  const Alphabet alphabet = train.alphabet();
  const std::size_t n = config.states_for(train.max_length());
  std::vector<RestartReport> rows;
  for (int r = 0; r < config.restarts; ++r) {
    RestartReport row;
    row.restart = r;
    row.seed = config.seed + static_cast<std::uint64_t>(r);
    auto result = bw_train(random_init(n, alphabet, row.seed), train, config);
    row.iterations = result.iterations;
    row.train_ll = result.log_likelihoods.back();
    row.trained = result.hmm;
    row.pruned = prune(result.hmm, expected_counts(result.hmm, train).expected, config.prune_threshold);
    row.states_after_prune = row.pruned.num_states();
    if (test.empty()) {
      row.test_ll = std::numeric_limits<double>::quiet_NaN();
    } else {
      row.test_ll = 0.0;
      for (const auto& s : test.samples) row.test_ll += string_log_prob_or_zero(row.trained, s);
    }
    if (target) {
      auto cp = cross_parse(row.pruned, *target, mc, row.seed);
      row.parse_in = cp.samples_in;
      row.parse_out = cp.samples_out;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_restart_report(std::ostream& out, const std::vector<RestartReport>& rows) {
  out << "restart,seed,iters,train_ll,test_ll,states_after_prune,parse_in,parse_out\n";
  for (const auto& r : rows)
    out << r.restart << ',' << r.seed << ',' << r.iterations << ',' << r.train_ll << ',' << r.test_ll << ','
        << r.states_after_prune << ',' << r.parse_in << ',' << r.parse_out << '\n';
}

}  // namespace hmmerge

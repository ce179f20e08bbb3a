#include "hmmerge/eval.hpp"

#include <cmath>
#include <limits>
#include <ostream>

#include "hmmerge/baum_welch.hpp"
#include "hmmerge/errors.hpp"
#include "log_math.hpp"

namespace hmmerge {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  // splitmix64 over the combined key
  std::uint64_t z = seed ^ (stream * 0x9E3779B97F4A7C15ULL) ^ (index * 0xBF58476D1CE4E5B9ULL);
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double mixture_log(double w, double log_hmm, double log_bigram) {
  double a = w > 0.0 ? std::log(w) + log_hmm : kNegInf;
  double b = w < 1.0 ? std::log1p(-w) + log_bigram : kNegInf;
  return detail::log_add(a, b);
}

template <class LogProb>
CrossEntropy cross_entropy_impl(const Corpus& test, LogProb&& log_prob) {
  CrossEntropy ce;
  std::vector<std::string> offenders;
  for (const auto& s : test.samples) {
    const double lp = log_prob(s);
    if (!std::isfinite(lp)) {
      offenders.push_back(join(s));
      continue;
    }
    ce.total_log_prob += lp;
    ce.events += s.size() + 1;
  }
  if (!offenders.empty()) throw ZeroProbabilitySample(std::move(offenders));
  if (ce.events > 0) {
    ce.per_symbol = -ce.total_log_prob / static_cast<double>(ce.events);
    ce.perplexity = std::exp(ce.per_symbol);
  }
  return ce;
}

}  // namespace

BigramModel::BigramModel(const Alphabet& alphabet, const Corpus& corpus, double alpha) : alphabet_(alphabet) {
  if (!(alpha > 0.0)) throw NonPositiveAlpha("bigram smoothing must be positive");
  const std::size_t k = alphabet.size();
  std::vector<std::vector<double>> counts(k + 1, std::vector<double>(k + 1, alpha));
  for (const auto& s : corpus.samples) {
    std::size_t ctx = 0;
    bool ok = true;
    for (const auto& tok : s) {
      auto id = alphabet.find(tok);
      if (!id) {
        ok = false;
        break;
      }
      counts[ctx][static_cast<std::size_t>(*id)] += 1.0;
      ctx = static_cast<std::size_t>(*id) + 1;
    }
    if (ok) counts[ctx][k] += 1.0;
  }
  logp_.assign(k + 1, std::vector<double>(k + 1, 0.0));
  for (std::size_t c = 0; c <= k; ++c) {
    double total = 0.0;
    for (double v : counts[c]) total += v;
    for (std::size_t j = 0; j <= k; ++j) logp_[c][j] = std::log(counts[c][j] / total);
  }
}

double BigramModel::log_prob(const Sample& x) const {
  if (logp_.empty()) return kNegInf;
  const std::size_t k = alphabet_.size();
  std::size_t ctx = 0;
  double lp = 0.0;
  for (const auto& tok : x) {
    auto id = alphabet_.find(tok);
    if (!id) return kNegInf;
    lp += logp_[ctx][static_cast<std::size_t>(*id)];
    ctx = static_cast<std::size_t>(*id) + 1;
  }
  return lp + logp_[ctx][k];
}

double MixtureModel::log_prob(const Sample& x) const {
  const double lh = weight > 0.0 ? string_log_prob_or_zero(component, x) : kNegInf;
  return mixture_log(weight, lh, backoff.log_prob(x));
}

MixtureFit fit_mixture(const Hmm& structure, const Corpus& train, const Corpus& held_in, const MixtureConfig& config) {
  if (!(config.initial_weight > 0.0 && config.initial_weight < 1.0))
    throw ConfigError("initial mixture weight must lie in (0, 1)");
  if (config.max_iters < 0) throw ConfigError("max_iters must be non-negative");
  Corpus data = train;
  data.samples.insert(data.samples.end(), held_in.samples.begin(), held_in.samples.end());
  if (data.empty()) throw EmptyCorpus();

  MixtureFit fit;
  fit.model.component = structure;
  fit.model.backoff = BigramModel(structure.alphabet(), data, config.bigram_alpha);
  fit.model.weight = config.initial_weight;
  const auto distinct = data.distinct();
  std::vector<double> log_bigram;
  std::vector<std::optional<Sequence>> encoded;
  for (const auto& [s, mult] : distinct) {
    log_bigram.push_back(fit.model.backoff.log_prob(s));
    encoded.push_back(structure.alphabet().try_encode(s));
  }

  for (int it = 0;; ++it) {
    const Hmm& hmm = fit.model.component;
    const double w = fit.model.weight;
    ViterbiCounts expected(hmm.num_states());
    double ll = 0.0, resp_total = 0.0, n_total = 0.0;
    for (std::size_t k = 0; k < distinct.size(); ++k) {
      const double mult = static_cast<double>(distinct[k].second);
      std::optional<ForwardBackward> fb;
      if (encoded[k] && w > 0.0) {
        try {
          fb = forward_backward(hmm, *encoded[k]);
        } catch (const ZeroProbabilitySample&) {
        }
      }
      const double lh = fb ? fb->log_likelihood : kNegInf;
      const double lmix = mixture_log(w, lh, log_bigram[k]);
      if (!std::isfinite(lmix)) throw ZeroProbabilitySample({join(distinct[k].first)});
      ll += mult * lmix;
      n_total += mult;
      if (fb) {
        const double r = std::exp(std::log(w) + lh - lmix);
        resp_total += mult * r;
        expected.add(fb->expected, mult * r);
      }
    }
    if (!fit.log_likelihoods.empty()) {
      const double prev = fit.log_likelihoods.back();
      fit.log_likelihoods.push_back(ll);
      if ((ll - prev) <= config.rel_tol * std::abs(prev)) break;
    } else {
      fit.log_likelihoods.push_back(ll);
    }
    if (it >= config.max_iters) break;
    fit.model.component = reestimate(hmm, expected);
    fit.model.weight = resp_total / n_total;
  }
  return fit;
}

CrossEntropy cross_entropy(const Hmm& model, const Corpus& test) {
  return cross_entropy_impl(test, [&](const Sample& s) { return string_log_prob_or_zero(model, s); });
}

CrossEntropy cross_entropy(const MixtureModel& model, const Corpus& test) {
  return cross_entropy_impl(test, [&](const Sample& s) { return model.log_prob(s); });
}

CrossParseReport cross_parse(const Hmm& induced, const Hmm& target, std::size_t n, std::uint64_t seed) {
  CrossParseReport report;
  report.n = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (parses(induced, sample(target, mix_seed(seed, 1, i)))) ++report.samples_in;
    if (parses(target, sample(induced, mix_seed(seed, 2, i)))) ++report.samples_out;
  }
  return report;
}

bool language_equal(const Hmm& induced, const Hmm& target, std::size_t n, std::uint64_t seed) {
  auto r = cross_parse(induced, target, n, seed);
  return r.samples_in == n && r.samples_out == n;
}

void write_eval_report(std::ostream& out, const std::vector<EvalRow>& rows) {
  out << "model_id,test_ll_log10,perplexity,parse_in,parse_out,states,transitions,emissions\n";
  for (const auto& r : rows)
    out << r.model_id << ',' << r.test_ll_log10 << ',' << r.perplexity << ',' << r.parse_in << ',' << r.parse_out
        << ',' << r.states << ',' << r.transitions << ',' << r.emissions << '\n';
}

}  // namespace hmmerge

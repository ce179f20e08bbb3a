#include "hmmerge/priors.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "hmmerge/errors.hpp"

namespace hmmerge {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_alphas(std::span<const double> alphas) {
  for (double a : alphas)
    if (!(a > 0.0)) throw NonPositiveAlpha("Dirichlet weights must be positive");
}

// k * log(1 - p) with the convention 0 * log 0 = 0.
double scaled_log1m(double k, double p) {
  if (k == 0.0) return 0.0;
  return k * std::log1p(-p);
}

struct RowVectors {
  std::vector<double> counts;
  std::vector<double> theta;  // parameters of the model, aligned with counts
};

// Transition row of `from` as aligned (counts, parameters) vectors over the prior's support.
RowVectors transition_row(const Hmm& hmm, const ViterbiCounts& counts, StateId from, ParameterScope scope) {
  RowVectors out;
  const TransitionRow empty;
  const auto& crow = (from == kInitial || static_cast<std::size_t>(from) < counts.num_states())
                         ? counts.transitions(from)
                         : empty;
  auto count_of = [&](StateId to) {
    auto it = crow.find(to);
    return it == crow.end() ? 0.0 : it->second;
  };
  if (scope == ParameterScope::narrow) {
    for (const auto& [to, lp] : hmm.transitions(from)) {
      out.counts.push_back(count_of(to));
      out.theta.push_back(std::exp(lp));
    }
  } else {
    for (std::size_t q = 0; q < hmm.num_states(); ++q) {
      auto to = static_cast<StateId>(q);
      out.counts.push_back(count_of(to));
      out.theta.push_back(std::exp(hmm.transition_logprob(from, to)));
    }
    out.counts.push_back(count_of(kFinal));
    out.theta.push_back(std::exp(hmm.transition_logprob(from, kFinal)));
  }
  return out;
}

RowVectors emission_row(const Hmm& hmm, const ViterbiCounts& counts, StateId q, ParameterScope scope) {
  RowVectors out;
  const EmissionRow empty;
  const auto& crow = static_cast<std::size_t>(q) < counts.num_states() ? counts.emit[static_cast<std::size_t>(q)] : empty;
  auto count_of = [&](SymbolId s) {
    auto it = crow.find(s);
    return it == crow.end() ? 0.0 : it->second;
  };
  if (scope == ParameterScope::narrow) {
    for (const auto& [s, lp] : hmm.emissions(q)) {
      out.counts.push_back(count_of(s));
      out.theta.push_back(std::exp(lp));
    }
  } else {
    for (std::size_t s = 0; s < hmm.alphabet().size(); ++s) {
      out.counts.push_back(count_of(static_cast<SymbolId>(s)));
      out.theta.push_back(std::exp(hmm.emission_logprob(q, static_cast<SymbolId>(s))));
    }
  }
  return out;
}

// Emission weights over the full alphabet; optionally proportional to smoothed symbol frequencies.
std::vector<double> broad_emission_alphas(const Hmm& hmm, const ViterbiCounts& counts, const PriorConfig& config) {
  const std::size_t sigma = hmm.alphabet().size();
  if (!config.empirical_emission_prior) return symmetric_alphas(config.alpha_e, sigma, config.alpha_is_total);
  std::vector<double> freq(sigma, 1.0);
  double total = static_cast<double>(sigma);
  for (const auto& row : counts.emit)
    for (const auto& [s, c] : row) {
      freq[static_cast<std::size_t>(s)] += c;
      total += c;
    }
  const double weight = config.alpha_is_total ? config.alpha_e : config.alpha_e * static_cast<double>(sigma);
  for (auto& f : freq) f = weight * f / total;
  return freq;
}

}  // namespace

void PriorConfig::validate() const {
  if (!(alpha_t > 0.0) || !(alpha_e > 0.0)) throw ConfigError("alpha_t and alpha_e must be positive");
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  if (effective_sample_target && !(*effective_sample_target > 0.0))
    throw ConfigError("effective sample target must be positive");
  if (state_penalty && !(*state_penalty >= 1.0)) throw ConfigError("state penalty C must be at least 1");
  if (structure == StructurePriorKind::bernoulli && (!(expected_transitions > 0.0) || !(expected_emissions > 0.0)))
    throw ConfigError("Bernoulli structure prior needs positive expected counts");
  if (objective == ObjectiveKind::joint_map && (alpha_is_total || alpha_t < 1.0 || alpha_e < 1.0))
    throw ConfigError("joint MAP objective needs per-choice weights alpha >= 1");
}

double dirichlet_log_marginal(std::span<const double> counts, std::span<const double> alphas) {
  if (counts.size() != alphas.size() || counts.empty())
    throw DimensionMismatch("counts and weights must have the same non-zero length");
  check_alphas(alphas);
  double a0 = 0.0, n = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] < 0.0) throw DimensionMismatch("counts must be non-negative");
    a0 += alphas[i];
    n += counts[i];
    if (counts[i] > 0.0) sum += std::lgamma(counts[i] + alphas[i]) - std::lgamma(alphas[i]);
  }
  if (n == 0.0) return 0.0;
  return sum + std::lgamma(a0) - std::lgamma(a0 + n);
}

double dirichlet_log_density(std::span<const double> theta, std::span<const double> alphas) {
  if (theta.size() != alphas.size() || theta.empty())
    throw DimensionMismatch("parameters and weights must have the same non-zero length");
  check_alphas(alphas);
  double total = 0.0;
  for (double t : theta) {
    if (t < -1e-12) throw OffSimplex("negative probability");
    total += t;
  }
  if (std::abs(total - 1.0) > 1e-9) throw OffSimplex("parameters do not sum to one");
  double a0 = 0.0, out = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    a0 += alphas[i];
    out -= std::lgamma(alphas[i]);
    if (alphas[i] != 1.0) out += (alphas[i] - 1.0) * std::log(std::max(theta[i], 0.0));
  }
  return out + std::lgamma(a0);
}

std::vector<double> map_estimate_row(std::span<const double> counts, std::span<const double> alphas) {
  if (counts.size() != alphas.size()) throw DimensionMismatch("counts and weights differ in length");
  check_alphas(alphas);
  std::vector<double> out(counts.size());
  double total = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    out[i] = std::max(0.0, counts[i] + alphas[i] - 1.0);
    total += out[i];
  }
  if (total <= 0.0) {
    std::fill(out.begin(), out.end(), counts.empty() ? 0.0 : 1.0 / static_cast<double>(counts.size()));
    return out;
  }
  for (auto& v : out) v /= total;
  return out;
}

std::vector<double> symmetric_alphas(double alpha, std::size_t dimension, bool alpha_is_total) {
  if (dimension == 0) return {};
  return std::vector<double>(dimension, alpha_is_total ? alpha / static_cast<double>(dimension) : alpha);
}

Hmm map_estimates(const ViterbiCounts& counts, const PriorConfig& config, const Hmm& structure) {
  Hmm out(structure.alphabet(), structure.num_states());
  const std::size_t n = structure.num_states();
  auto fill_transitions = [&](StateId from) {
    auto row = transition_row(structure, counts, from, config.scope);
    if (row.counts.empty()) return;
    auto theta = map_estimate_row(row.counts, symmetric_alphas(config.alpha_t, row.counts.size(), config.alpha_is_total));
    if (config.scope == ParameterScope::narrow) {
      std::size_t i = 0;
      for (const auto& [to, lp] : structure.transitions(from)) out.set_transition(from, to, theta[i++]);
    } else {
      for (std::size_t q = 0; q < n; ++q) out.set_transition(from, static_cast<StateId>(q), theta[q]);
      out.set_transition(from, kFinal, theta[n]);
    }
  };
  fill_transitions(kInitial);
  const auto broad_alphas = config.scope == ParameterScope::broad ? broad_emission_alphas(structure, counts, config)
                                                                  : std::vector<double>{};
  for (std::size_t q = 0; q < n; ++q) {
    auto sq = static_cast<StateId>(q);
    fill_transitions(sq);
    auto row = emission_row(structure, counts, sq, config.scope);
    if (row.counts.empty()) continue;
    auto alphas = config.scope == ParameterScope::narrow
                      ? symmetric_alphas(config.alpha_e, row.counts.size(), config.alpha_is_total)
                      : broad_alphas;
    auto theta = map_estimate_row(row.counts, alphas);
    if (config.scope == ParameterScope::narrow) {
      std::size_t i = 0;
      for (const auto& [s, lp] : structure.emissions(sq)) out.set_emission(sq, s, theta[i++]);
    } else {
      for (std::size_t s = 0; s < theta.size(); ++s) out.set_emission(sq, static_cast<SymbolId>(s), theta[s]);
    }
  }
  return out;
}

double structure_log_prior(const PriorConfig& config, std::size_t num_states, std::size_t num_transitions,
                           std::size_t num_emissions, std::size_t alphabet_size) {
  const double q = static_cast<double>(num_states);
  const double t = static_cast<double>(num_transitions);
  const double e = static_cast<double>(num_emissions);
  const double sigma = static_cast<double>(alphabet_size);
  double out = 0.0;
  switch (config.structure) {
    case StructurePriorKind::none:
      break;
    case StructurePriorKind::description_length:
      out = -t * std::log(q + 1.0) - e * std::log(sigma + 1.0);
      break;
    case StructurePriorKind::description_length_single_output:
      out = -t * std::log(std::max(q, 1.0)) - q * std::log(std::max(sigma, 1.0));
      break;
    case StructurePriorKind::bernoulli: {
      if (num_states == 0) break;
      const double pt = config.expected_transitions / q;
      const double pe = config.expected_emissions / sigma;
      if (!(pt > 0.0 && pt <= 1.0) || !(pe > 0.0 && pe <= 1.0))
        throw DegenerateBernoulli("Bernoulli structure prior has p_t = " + std::to_string(pt) +
                                  ", p_e = " + std::to_string(pe));
      // Rows: every non-sentinel state plus the initial state.
      out = t * std::log(pt) + scaled_log1m((q + 1.0) * q - t, pt) + e * std::log(pe) +
            scaled_log1m(q * sigma - e, pe);
      break;
    }
  }
  if (config.state_penalty) out -= q * std::log(*config.state_penalty);
  return out;
}

double structure_log_prior(const Hmm& hmm, const PriorConfig& config) {
  return structure_log_prior(config, hmm.num_states(), hmm.num_transitions(), hmm.num_emissions(),
                             hmm.alphabet().size());
}

Score structure_log_posterior(const Hmm& hmm, const ViterbiCounts& counts, const PriorConfig& config) {
  Score score;
  score.lambda = config.lambda;
  score.log_prior = structure_log_prior(hmm, config);
  auto add_transitions = [&](StateId from) {
    auto row = transition_row(hmm, counts, from, config.scope);
    if (row.counts.empty()) return;
    score.log_likelihood += dirichlet_log_marginal(
        row.counts, symmetric_alphas(config.alpha_t, row.counts.size(), config.alpha_is_total));
  };
  add_transitions(kInitial);
  const auto broad_alphas = config.scope == ParameterScope::broad ? broad_emission_alphas(hmm, counts, config)
                                                                  : std::vector<double>{};
  for (std::size_t q = 0; q < hmm.num_states(); ++q) {
    auto sq = static_cast<StateId>(q);
    add_transitions(sq);
    auto row = emission_row(hmm, counts, sq, config.scope);
    if (row.counts.empty()) continue;
    auto alphas = config.scope == ParameterScope::narrow
                      ? symmetric_alphas(config.alpha_e, row.counts.size(), config.alpha_is_total)
                      : broad_alphas;
    score.log_likelihood += dirichlet_log_marginal(row.counts, alphas);
  }
  return score;
}

double viterbi_log_likelihood(const Hmm& hmm, const ViterbiCounts& counts) {
  double ll = 0.0;
  auto add = [&](double c, double lp) {
    if (c > 0.0) ll += c * lp;
  };
  for (const auto& [to, c] : counts.initial) add(c, hmm.transition_logprob(kInitial, to));
  for (std::size_t q = 0; q < counts.num_states(); ++q) {
    for (const auto& [to, c] : counts.trans[q]) add(c, hmm.transition_logprob(static_cast<StateId>(q), to));
    for (const auto& [s, c] : counts.emit[q]) add(c, hmm.emission_logprob(static_cast<StateId>(q), s));
  }
  return ll;
}

Score joint_log_posterior(const Hmm& hmm, const ViterbiCounts& counts, const PriorConfig& config) {
  Score score;
  score.lambda = config.lambda;
  score.log_prior = structure_log_prior(hmm, config);
  score.log_likelihood = viterbi_log_likelihood(hmm, counts);
  auto add_density = [&](const RowVectors& row, const std::vector<double>& alphas) {
    if (row.theta.empty()) return;
    score.log_prior += dirichlet_log_density(row.theta, alphas);
  };
  auto trans = [&](StateId from) {
    auto row = transition_row(hmm, counts, from, config.scope);
    add_density(row, symmetric_alphas(config.alpha_t, row.theta.size(), config.alpha_is_total));
  };
  trans(kInitial);
  const auto broad_alphas = config.scope == ParameterScope::broad ? broad_emission_alphas(hmm, counts, config)
                                                                  : std::vector<double>{};
  for (std::size_t q = 0; q < hmm.num_states(); ++q) {
    auto sq = static_cast<StateId>(q);
    trans(sq);
    auto row = emission_row(hmm, counts, sq, config.scope);
    add_density(row, config.scope == ParameterScope::narrow
                         ? symmetric_alphas(config.alpha_e, row.theta.size(), config.alpha_is_total)
                         : broad_alphas);
  }
  return score;
}

Score objective_score(const Hmm& hmm, const ViterbiCounts& counts, const PriorConfig& config) {
  switch (config.objective) {
    case ObjectiveKind::structure_posterior:
      return structure_log_posterior(hmm, counts, config);
    case ObjectiveKind::joint_map: {
      const Hmm map = map_estimates(counts, config, hmm);
      Score s = joint_log_posterior(map, counts, config);
      // the structure is that of `hmm`, not the (possibly wider) MAP support
      s.log_prior += structure_log_prior(hmm, config) - structure_log_prior(map, config);
      return s;
    }
    case ObjectiveKind::likelihood: {
      PriorConfig ml = config;
      ml.scope = ParameterScope::narrow;
      ml.alpha_t = ml.alpha_e = 1.0;
      ml.alpha_is_total = false;
      return Score{0.0, viterbi_log_likelihood(map_estimates(counts, ml, hmm), counts), config.lambda};
    }
  }
  return {};
}

double lambda_schedule(std::size_t samples_seen, const PriorConfig& config) {
  if (!config.effective_sample_target) return config.lambda;
  return std::max(kMinLambda, static_cast<double>(samples_seen) / *config.effective_sample_target);
}

std::string to_string(StructurePriorKind kind) {
  switch (kind) {
    case StructurePriorKind::none: return "none";
    case StructurePriorKind::bernoulli: return "bernoulli";
    case StructurePriorKind::description_length: return "dl";
    case StructurePriorKind::description_length_single_output: return "dl-single";
  }
  return "?";
}

StructurePriorKind parse_structure_prior(const std::string& name) {
  if (name == "none") return StructurePriorKind::none;
  if (name == "bernoulli") return StructurePriorKind::bernoulli;
  if (name == "dl") return StructurePriorKind::description_length;
  if (name == "dl-single") return StructurePriorKind::description_length_single_output;
  throw ConfigError("unknown structure prior '" + name + "'");
}

std::string to_string(ParameterScope scope) { return scope == ParameterScope::narrow ? "narrow" : "broad"; }

ParameterScope parse_scope(const std::string& name) {
  if (name == "narrow") return ParameterScope::narrow;
  if (name == "broad") return ParameterScope::broad;
  throw ConfigError("unknown parameter scope '" + name + "'");
}

}  // namespace hmmerge

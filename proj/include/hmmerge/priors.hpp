#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hmmerge/hmm.hpp"

namespace hmmerge {

/// Support of the Dirichlet parameter priors: the structure (narrow) or every
/// possible target state and symbol (broad).
enum class ParameterScope { narrow, broad };

enum class StructurePriorKind {
  none,
  bernoulli,                        // independent existence of each transition/emission
  description_length,               // n_t log(|Q|+1) + n_e log(|Sigma|+1) nats per state
  description_length_single_output  // n_t log|Q| + log|Sigma| nats per state
};

/// Quantity maximized by merging.
enum class ObjectiveKind {
  structure_posterior,  // parameters integrated out under the Viterbi approximation
  joint_map,            // structure and MAP parameters jointly
  likelihood            // Viterbi likelihood at ML parameters, no prior
};

struct PriorConfig {
  double alpha_t = 1.0;
  double alpha_e = 1.0;
  /// When set, alpha_t / alpha_e are total weights split evenly over a multinomial's
  /// dimension; otherwise they are per-choice weights.
  bool alpha_is_total = true;
  ParameterScope scope = ParameterScope::narrow;
  StructurePriorKind structure = StructurePriorKind::description_length;
  /// Expected transitions / emissions per state for the Bernoulli prior.
  double expected_transitions = 2.0;
  double expected_emissions = 1.0;
  ObjectiveKind objective = ObjectiveKind::structure_posterior;
  double lambda = 1.0;
  /// Target effective sample size; when set, lambda follows the number of samples seen.
  std::optional<double> effective_sample_target = 50.0;
  /// Optional global per-state penalty C: log P(M_G) = -|Q| log C.
  std::optional<double> state_penalty;
  /// Broad scope only: emission prior means follow smoothed symbol frequencies.
  bool empirical_emission_prior = false;

  /// Throws ConfigError.
  void validate() const;
};

inline constexpr double kMinLambda = 1e-3;

struct Score {
  double log_prior = 0.0;
  double log_likelihood = 0.0;
  double lambda = 1.0;
  double objective() const { return lambda * log_prior + log_likelihood; }
};

/// log of B(c + alpha) / B(alpha).
double dirichlet_log_marginal(std::span<const double> counts, std::span<const double> alphas);

/// log density of a Dirichlet at theta. Throws OffSimplex when theta is not a distribution.
double dirichlet_log_density(std::span<const double> theta, std::span<const double> alphas);

/// MAP estimate of one multinomial with (possibly asymmetric) Dirichlet weights.
/// Numerators c + alpha - 1 are clamped at zero.
std::vector<double> map_estimate_row(std::span<const double> counts, std::span<const double> alphas);

/// Per-choice Dirichlet weights for a multinomial with `dimension` choices.
std::vector<double> symmetric_alphas(double alpha, std::size_t dimension, bool alpha_is_total);

/// MAP parameters from counts, with support restricted to the structure of `structure`
/// (narrow) or spanning all states plus F and all symbols (broad).
Hmm map_estimates(const ViterbiCounts& counts, const PriorConfig& config, const Hmm& structure);

/// Structural log prior computed from the structure sizes alone.
double structure_log_prior(const PriorConfig& config, std::size_t num_states, std::size_t num_transitions,
                           std::size_t num_emissions, std::size_t alphabet_size);
double structure_log_prior(const Hmm& hmm, const PriorConfig& config);

/// Structure posterior with parameters integrated out (per-state Dirichlet marginals).
Score structure_log_posterior(const Hmm& hmm, const ViterbiCounts& counts, const PriorConfig& config);

/// Joint posterior of structure and the given parameters.
Score joint_log_posterior(const Hmm& hmm, const ViterbiCounts& counts, const PriorConfig& config);

/// Viterbi log likelihood sum c log p over the given parameters.
double viterbi_log_likelihood(const Hmm& hmm, const ViterbiCounts& counts);

/// Dispatches on config.objective. For joint_map and likelihood the parameters are
/// re-estimated from the counts (MAP or ML) over the structure of `hmm`.
Score objective_score(const Hmm& hmm, const ViterbiCounts& counts, const PriorConfig& config);

/// Effective prior weight after `samples_seen` samples.
double lambda_schedule(std::size_t samples_seen, const PriorConfig& config);

std::string to_string(StructurePriorKind kind);
StructurePriorKind parse_structure_prior(const std::string& name);
std::string to_string(ParameterScope scope);
ParameterScope parse_scope(const std::string& name);

}  // namespace hmmerge

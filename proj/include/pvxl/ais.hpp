#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pvxl/rbm.hpp"

namespace pvxl {

enum class Spacing { linear, geometric_tail };

struct AisSchedule {
  std::vector<double> betas;
  int updates_per_step = 1;
  int n_chains = 1;

  /// Throws std::invalid_argument unless betas run monotonically 0 -> 1.
  void validate() const;
};

/// `geometric_tail` spends the first half of the steps linearly on [0, 0.5]
/// and the rest on [0.5, 1] with gaps shrinking geometrically to a tenth.
AisSchedule make_schedule(int n_steps, int updates_per_step, int n_chains,
                          Spacing spacing = Spacing::linear);

struct AisResult {
  double log_z_estimate = 0;
  double log_z_base = 0;
  std::vector<double> log_weights;
  double ess = 0;
  /// ESS below 1% of the chain count.
  bool degenerate = false;
};

struct AisSamples {
  AisResult result;
  std::vector<RbmState> states;
};

/// (sum w)^2 / sum w^2 from log-weights.
double effective_sample_size(std::span<const double> log_weights);

/// Log Z of the beta = 0 (factorized) distribution.
double base_log_z(const RbmParams& p);

/// Anneals p_beta ∝ exp(a.v + b.h + beta v.W.h) along the schedule. Each
/// chain starts from an exact base sample and, at every rung after the
/// first, adds (beta_t - beta_{t-1}) v.W.h to its log-weight before running
/// `updates_per_step` alternations at beta_t. Chain c draws from stream
/// derive_seed(seed, c).
AisResult ais_log_z(const RbmParams& p, const AisSchedule& s, std::uint64_t seed);
/// As ais_log_z, also returning each chain's final state.
AisSamples ais_samples(const RbmParams& p, const AisSchedule& s, std::uint64_t seed);

}  // namespace pvxl

#pragma once

#include <cstdint>

#include "pvxl/random.hpp"
#include "pvxl/tensor.hpp"

namespace pvxl {

enum class TauSchedule { constant, increasing, decreasing };

struct RelaxationConfig {
  double tau = 0.25;
  TauSchedule schedule = TauSchedule::constant;
  /// End point and step horizon of a non-constant schedule.
  double tau_end = 0.25;
  long horizon = 0;
  /// Skips the [kMinTau, kMaxTau] range check.
  bool allow_any_tau = false;

  static constexpr double kMinTau = 0.1;
  static constexpr double kMaxTau = 0.5;

  /// Throws std::invalid_argument for non-positive temperatures, a schedule
  /// whose direction contradicts its end point, or (without the override)
  /// temperatures outside [kMinTau, kMaxTau].
  void validate() const;
};

/// Linear interpolation from tau to tau_end over `horizon` steps, clamped.
double tau_at(const RelaxationConfig& config, long step);

/// Uniforms on the open interval (0, 1).
template <class T>
Tensor<T> uniform_rho(const Shape& shape, Rng& rng);

/// zeta = sigmoid((l + logit(rho)) / tau); differentiable in `logits`.
template <class T>
Var<T> sample_zeta(const Var<T>& logits, const Tensor<T>& rho, double tau);

/// Bits 1[l + logit(rho) > 0], i.e. Bernoulli(sigmoid(l)) draws.
template <class T>
Tensor<T> sample_discrete(const Tensor<T>& logits, const Tensor<T>& rho);

/// Per-row sum of z log sigmoid(l) + (1 - z) log(1 - sigmoid(l)) over all
/// axes but the first; returns shape [B]. `value` may be relaxed.
template <class T>
Var<T> log_q(const Var<T>& logits, const Var<T>& value);

}  // namespace pvxl

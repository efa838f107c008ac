#include "pvxl/relaxation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace pvxl {

namespace {

template <class T>
Tensor<T> logit_of(const Tensor<T>& rho) {
  Tensor<T> out(rho.shape());
  for (std::size_t i = 0; i < rho.size(); ++i) {
    const double r = rho[i];
    if (!(r > 0.0 && r < 1.0)) {
      throw std::domain_error("relaxation noise must lie in the open interval (0, 1), got " + std::to_string(r));
    }
    out[i] = static_cast<T>(std::log(r) - std::log1p(-r));
  }
  return out;
}

}  // namespace

void RelaxationConfig::validate() const {
  if (!(tau > 0.0) || !(tau_end > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (schedule != TauSchedule::constant && horizon <= 0) {
    throw std::invalid_argument("a temperature schedule needs a positive horizon");
  }
  if ((schedule == TauSchedule::increasing && tau_end < tau) ||
      (schedule == TauSchedule::decreasing && tau_end > tau)) {
    throw std::invalid_argument("temperature schedule direction contradicts its end point");
  }
  if (allow_any_tau) return;
  const double lo = std::min(tau, schedule == TauSchedule::constant ? tau : tau_end);
  const double hi = std::max(tau, schedule == TauSchedule::constant ? tau : tau_end);
  if (lo < kMinTau || hi > kMaxTau) {
    throw std::invalid_argument("temperature outside [0.1, 0.5]; set allow_any_tau to override");
  }
}

double tau_at(const RelaxationConfig& config, long step) {
  if (step < 0) throw std::invalid_argument("tau_at: negative step");
  if (config.schedule == TauSchedule::constant) return config.tau;
  const double f = std::min(1.0, static_cast<double>(step) / static_cast<double>(config.horizon));
  return config.tau + f * (config.tau_end - config.tau);
}

template <class T>
Tensor<T> uniform_rho(const Shape& shape, Rng& rng) {
  Tensor<T> out(shape);
  for (T& x : out.values()) {
    // Re-draw the rare value that rounds to an endpoint in single precision.
    do {
      x = static_cast<T>(rng.uniform_open());
    } while (!(x > T(0) && x < T(1)));
  }
  return out;
}

template <class T>
Var<T> sample_zeta(const Var<T>& logits, const Tensor<T>& rho, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("sample_zeta needs a positive temperature");
  if (rho.shape() != logits.shape()) {
    throw ShapeError("noise shape " + shape_str(rho.shape()) + " does not match logits " + shape_str(logits.shape()));
  }
  auto noise = logits.tape().constant(logit_of(rho));
  return sigmoid(scale(add(logits, noise), 1.0 / tau));
}

template <class T>
Tensor<T> sample_discrete(const Tensor<T>& logits, const Tensor<T>& rho) {
  if (rho.shape() != logits.shape()) {
    throw ShapeError("noise shape " + shape_str(rho.shape()) + " does not match logits " + shape_str(logits.shape()));
  }
  const Tensor<T> g = logit_of(rho);
  Tensor<T> out(logits.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = logits[i] + g[i] > T(0) ? T(1) : T(0);
  return out;
}

template <class T>
Var<T> log_q(const Var<T>& logits, const Var<T>& value) {
  if (logits.shape() != value.shape()) {
    throw ShapeError("log_q: logits " + shape_str(logits.shape()) + " vs value " + shape_str(value.shape()));
  }
  if (logits.value().rank() < 1) throw ShapeError("log_q needs a leading batch axis");
  // z log s(l) + (1 - z) log s(-l) = z l - softplus(l)
  auto terms = sub(mul(value, logits), softplus(logits));
  const std::size_t b = logits.dim(0);
  return sum_axis(reshape(terms, Shape{b, logits.size() / std::max<std::size_t>(b, 1)}), 1);
}

#define PVXL_INSTANTIATE_RELAX(T)                                                \
  template Tensor<T> uniform_rho<T>(const Shape&, Rng&);                         \
  template Var<T> sample_zeta<T>(const Var<T>&, const Tensor<T>&, double);       \
  template Tensor<T> sample_discrete<T>(const Tensor<T>&, const Tensor<T>&);     \
  template Var<T> log_q<T>(const Var<T>&, const Var<T>&);

PVXL_INSTANTIATE_RELAX(float)
PVXL_INSTANTIATE_RELAX(double)

}  // namespace pvxl

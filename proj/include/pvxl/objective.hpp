#pragma once

// Variational objective with an RBM (or Gaussian) prior, the optimizer, and
// importance-weighted likelihood evaluation.

#include <cstdint>
#include <span>
#include <vector>

#include "pvxl/model.hpp"
#include "pvxl/rbm.hpp"

namespace pvxl {

/// A value of log Z together with the moments that form its gradient.
struct LogPartition {
  double value = 0;
  RbmMoments moments;
};

LogPartition exact_log_partition(const RbmParams& p);

/// The prior.w / prior.a / prior.b tensors as RbmParams.
template <class T>
RbmParams rbm_params(const ParamSet<T>& params);

/// Scalar node holding z.value; its gradient w.r.t. (w, a, b) is z.moments.
template <class T>
Var<T> log_partition(const Var<T>& w, const Var<T>& a, const Var<T>& b, const LogPartition& z);

/// a.v + b.h + v.W.h per row, [B].
template <class T>
Var<T> neg_energy(const Var<T>& left, const Var<T>& right, const Var<T>& w, const Var<T>& a, const Var<T>& b);

struct ElboOptions {
  /// Relaxation temperature; 0 evaluates with discrete latents.
  double tau = 0.25;
  double beta = 1.0;
  /// Drops the score term: log q sees detached logits.
  bool path_derivative = true;
  /// Required for an RBM prior unless exact_log_z is set.
  const LogPartition* log_z = nullptr;
  /// Enumerates log Z and its moments from the current prior parameters.
  bool exact_log_z = false;
};

/// Per-sample terms in nats: total = recon - beta * kl.
struct ElboBreakdown {
  std::vector<double> recon;
  std::vector<double> kl;
  std::vector<double> total;
  double beta = 1.0;

  double mean_recon() const;
  double mean_kl() const;
  double mean_total() const;
};

template <class T>
struct Elbo {
  /// -mean(recon - beta * kl); minimized.
  Var<T> loss;
  ElboBreakdown terms;
};

/// Single-sample estimate of the bound for every image of the batch.
/// Throws std::invalid_argument when an RBM prior has no log Z source.
template <class T>
Elbo<T> relaxed_elbo(const Binder<T>& b, const ModelConfig& cfg, const Tensor<std::uint8_t>& x, Rng& rng,
                     const ElboOptions& options);

/// Linear ramp from 0 at step 0 to 1 at `horizon`, then 1.
double kl_anneal_beta(long step, long horizon);

struct AdamConfig {
  double lr = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Multiplies the step size once per epoch.
  double decay = 0.999;

  double lr_at(long epoch) const;
};

template <class T>
struct AdamState {
  ParamSet<T> m;
  ParamSet<T> v;
  long step = 0;
};

template <class T>
AdamState<T> adam_init(const ParamSet<T>& params);

/// One bias-corrected adaptive-moment update with step size `lr`.
template <class T>
void optimizer_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state, const AdamConfig& cfg,
                    double lr);

/// log (1/K) sum_k p(x, z_k) / q(z_k | x) per image, discrete z_k ~ q,
/// evaluated `chunk` samples at a time.
template <class T>
std::vector<double> iwae_loglik(const ParamSet<T>& params, const ModelConfig& cfg, const Tensor<std::uint8_t>& x,
                                double log_z, std::size_t k, Rng& rng, std::size_t chunk = 64);

}  // namespace pvxl

#include "pvxl/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "pvxl/relaxation.hpp"

namespace pvxl {

namespace {

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

template <class T>
std::vector<double> to_doubles(const Tensor<T>& t) {
  return {t.values().begin(), t.values().end()};
}

template <class T>
void for_each_group(const LatentVars<T>& a, const LatentVars<T>& b, auto fn) {
  if (a.z1.valid()) fn(a.z1, b.z1);
  if (a.z2.valid()) fn(a.z2, b.z2);
  for (std::size_t g = 0; g < a.z3.size(); ++g) fn(a.z3[g], b.z3[g]);
}

// KL(N(mu, sigma^2) || N(0, 1)) summed over units, [B].
template <class T>
Var<T> gaussian_kl(const Var<T>& head) {
  const std::size_t n = head.dim(1) / 2;
  auto mu = slice(head, 1, 0, n);
  auto log_std = slice(head, 1, n, n);
  auto quad = add(square(mu), exp(scale(log_std, 2.0)));
  return sum_axis(sub(scale(add_scalar(quad, -1.0), 0.5), log_std), 1);
}

// log q(z) - log p(z) for Gaussian groups at the sampled values, [B].
template <class T>
Var<T> gaussian_log_ratio(const Var<T>& head, const Var<T>& z) {
  const std::size_t n = head.dim(1) / 2;
  auto mu = slice(head, 1, 0, n);
  auto log_std = slice(head, 1, n, n);
  auto eps = mul(sub(z, mu), exp(neg(log_std)));
  // The normalizing constants cancel.
  return sum_axis(sub(scale(sub(square(z), square(eps)), 0.5), log_std), 1);
}

Tensor<std::uint8_t> tile_image(const Tensor<std::uint8_t>& x, std::size_t i, std::size_t n) {
  const std::size_t per = x.size() / x.dim(0);
  Shape s = x.shape();
  s[0] = n;
  Tensor<std::uint8_t> out(s);
  for (std::size_t r = 0; r < n; ++r) std::copy_n(x.data() + i * per, per, out.data() + r * per);
  return out;
}

double log_mean_exp(const std::vector<double>& v) {
  const double mx = *std::max_element(v.begin(), v.end());
  if (mx == -std::numeric_limits<double>::infinity()) return mx;
  double s = 0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s / static_cast<double>(v.size()));
}

}  // namespace

LogPartition exact_log_partition(const RbmParams& p) { return {exact_log_z(p), exact_moments(p)}; }

template <class T>
RbmParams rbm_from(const Tensor<T>& w, const Tensor<T>& a, const Tensor<T>& b) {
  if (w.rank() != 2) throw ShapeError("prior.w must be a matrix");
  RbmParams p = RbmParams::zeros(w.dim(0), w.dim(1));
  p.w.assign(w.values().begin(), w.values().end());
  p.a.assign(a.values().begin(), a.values().end());
  p.b.assign(b.values().begin(), b.values().end());
  p.validate();
  return p;
}

template <class T>
RbmParams rbm_params(const ParamSet<T>& params) {
  return rbm_from(params["prior.w"], params["prior.a"], params["prior.b"]);
}

template <class T>
Var<T> log_partition(const Var<T>& w, const Var<T>& a, const Var<T>& b, const LogPartition& z) {
  const auto& mo = z.moments;
  if (mo.vh.size() != w.size() || mo.v.size() != a.size() || mo.h.size() != b.size()) {
    throw ShapeError("log_partition: moments do not match the prior parameters");
  }
  const NodeId wi = w.id(), ai = a.id(), bi = b.id();
  return w.tape().record(Tensor<T>::scalar(static_cast<T>(z.value)), {w, a, b},
                         [wi, ai, bi, mo](Tape<T>& t, NodeId self) {
                           const double g = t.grad_slot(self)[0];
                           auto acc = [&](NodeId id, const std::vector<double>& m) {
                             if (!t.requires_grad(id)) return;
                             Tensor<T>& gs = t.grad_slot(id);
                             for (std::size_t i = 0; i < m.size(); ++i) gs[i] += static_cast<T>(g * m[i]);
                           };
                           acc(wi, mo.vh);
                           acc(ai, mo.v);
                           acc(bi, mo.h);
                         });
}

template <class T>
Var<T> neg_energy(const Var<T>& left, const Var<T>& right, const Var<T>& w, const Var<T>& a, const Var<T>& b) {
  auto field = add(sum_axis(mul(left, a), 1), sum_axis(mul(right, b), 1));
  return add(field, sum_axis(mul(dense(left, w), right), 1));
}

double ElboBreakdown::mean_recon() const { return mean_of(recon); }
double ElboBreakdown::mean_kl() const { return mean_of(kl); }
double ElboBreakdown::mean_total() const { return mean_of(total); }

template <class T>
Elbo<T> relaxed_elbo(const Binder<T>& b, const ModelConfig& cfg, const Tensor<std::uint8_t>& x, Rng& rng,
                     const ElboOptions& options) {
  const bool rbm = cfg.prior == PriorKind::rbm && cfg.has_latents();
  if (rbm && !options.log_z && !options.exact_log_z) {
    throw std::invalid_argument("relaxed_elbo: an RBM prior needs a log Z estimate");
  }
  Tape<T>& tape = b.tape();
  auto post = posterior_forward(b, cfg, x, rng, options.tau);
  auto recon = pixel_loglik(cfg.head, post.head, x);

  Var<T> kl;
  if (!cfg.has_latents()) {
    kl = tape.constant(Tensor<T>(Shape{x.dim(0)}));
  } else if (cfg.prior == PriorKind::gaussian) {
    for_each_group(post.logits, post.values, [&](const Var<T>& head, const Var<T>&) {
      auto term = gaussian_kl(head);
      kl = kl.valid() ? add(kl, term) : term;
    });
  } else {
    for_each_group(post.logits, post.values, [&](const Var<T>& l, const Var<T>& z) {
      auto term = log_q(options.path_derivative ? detach(l) : l, z);
      kl = kl.valid() ? add(kl, term) : term;
    });
    const auto sides = rbm_sides(cfg, post.values);
    auto w = b("prior.w"), a = b("prior.a"), bb = b("prior.b");
    // Bound values, which differ from b.params() under finite differences.
    const LogPartition lz =
        options.exact_log_z ? exact_log_partition(rbm_from(w.value(), a.value(), bb.value())) : *options.log_z;
    kl = add(sub(kl, neg_energy(sides[0], sides[1], w, a, bb)), log_partition(w, a, bb, lz));
  }

  Elbo<T> out;
  out.loss = neg(mean(recon));
  if (options.beta != 0.0) out.loss = add(out.loss, scale(mean(kl), options.beta));
  out.terms.beta = options.beta;
  out.terms.recon = to_doubles(recon.value());
  out.terms.kl = to_doubles(kl.value());
  out.terms.total.resize(out.terms.recon.size());
  for (std::size_t i = 0; i < out.terms.total.size(); ++i) {
    out.terms.total[i] = out.terms.recon[i] - options.beta * out.terms.kl[i];
  }
  return out;
}

double kl_anneal_beta(long step, long horizon) {
  if (step < 0) throw std::invalid_argument("kl_anneal_beta: negative step");
  if (horizon <= 0 || step >= horizon) return 1.0;
  return static_cast<double>(step) / static_cast<double>(horizon);
}

double AdamConfig::lr_at(long epoch) const { return lr * std::pow(decay, static_cast<double>(epoch)); }

template <class T>
AdamState<T> adam_init(const ParamSet<T>& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

template <class T>
void optimizer_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state, const AdamConfig& cfg,
                    double lr) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw std::invalid_argument("optimizer_step: parameter sets differ");
  }
  ++state.step;
  const double c1 = 1 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = params.at(i);
    const Tensor<T>& g = grads.at(i);
    if (g.shape() != p.shape()) throw ShapeError("optimizer_step: gradient shape mismatch for " + params.names()[i]);
    Tensor<T>& m = state.m.at(i);
    Tensor<T>& v = state.v.at(i);
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      const double mj = cfg.beta1 * m[j] + (1 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * v[j] + (1 - cfg.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      p[j] = static_cast<T>(p[j] - lr * (mj / c1) / (std::sqrt(vj / c2) + cfg.eps));
    }
  }
}

template <class T>
std::vector<double> iwae_loglik(const ParamSet<T>& params, const ModelConfig& cfg, const Tensor<std::uint8_t>& x,
                                double log_z, std::size_t k, Rng& rng, std::size_t chunk) {
  if (k == 0) throw std::invalid_argument("iwae_loglik: K must be positive");
  chunk = std::max<std::size_t>(1, std::min(chunk, k));
  std::vector<double> out(x.dim(0));
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    std::vector<double> log_w;
    log_w.reserve(k);
    for (std::size_t done = 0; done < k; done += chunk) {
      const std::size_t n = std::min(chunk, k - done);
      const auto xi = tile_image(x, i, n);
      Tape<T> tape;
      Binder<T> b(tape, params, false);
      auto post = posterior_forward(b, cfg, xi, rng, 0.0);
      auto lw = pixel_loglik(cfg.head, post.head, xi);
      if (cfg.has_latents() && cfg.prior == PriorKind::gaussian) {
        for_each_group(post.logits, post.values,
                       [&](const Var<T>& head, const Var<T>& z) { lw = sub(lw, gaussian_log_ratio(head, z)); });
      } else if (cfg.has_latents()) {
        for_each_group(post.logits, post.values, [&](const Var<T>& l, const Var<T>& z) { lw = sub(lw, log_q(l, z)); });
        const auto sides = rbm_sides(cfg, post.values);
        lw = add_scalar(add(lw, neg_energy(sides[0], sides[1], b("prior.w"), b("prior.a"), b("prior.b"))), -log_z);
      }
      for (T v : lw.value().values()) log_w.push_back(static_cast<double>(v));
    }
    out[i] = log_mean_exp(log_w);
  }
  return out;
}

#define PVXL_INSTANTIATE_OBJECTIVE(T)                                                                            \
  template RbmParams rbm_params<T>(const ParamSet<T>&);                                                          \
  template Var<T> log_partition<T>(const Var<T>&, const Var<T>&, const Var<T>&, const LogPartition&);           \
  template Var<T> neg_energy<T>(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&);      \
  template Elbo<T> relaxed_elbo<T>(const Binder<T>&, const ModelConfig&, const Tensor<std::uint8_t>&, Rng&,     \
                                   const ElboOptions&);                                                          \
  template AdamState<T> adam_init<T>(const ParamSet<T>&);                                                        \
  template void optimizer_step<T>(ParamSet<T>&, const ParamSet<T>&, AdamState<T>&, const AdamConfig&, double);   \
  template std::vector<double> iwae_loglik<T>(const ParamSet<T>&, const ModelConfig&, const Tensor<std::uint8_t>&, \
                                              double, std::size_t, Rng&, std::size_t);

PVXL_INSTANTIATE_OBJECTIVE(float)
PVXL_INSTANTIATE_OBJECTIVE(double)

}  // namespace pvxl

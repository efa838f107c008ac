#include "pvxl/rbm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>
#include <string>

#include "pvxl/random.hpp"

namespace pvxl {

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double log_sum_exp(const std::vector<double>& v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

void check_state(const RbmParams& p, const RbmState& s) {
  if (s.left.size() != p.m || s.right.size() != p.k) {
    throw std::invalid_argument("RBM state sizes " + std::to_string(s.left.size()) + "/" +
                                std::to_string(s.right.size()) + " do not match RBM " +
                                std::to_string(p.m) + "x" + std::to_string(p.k));
  }
}

void check_enumerable(const RbmParams& p) {
  p.validate();
  if (p.m + p.k > kMaxEnumerationUnits) {
    throw std::invalid_argument("RBM with " + std::to_string(p.m + p.k) +
                                " units exceeds the enumeration bound of " +
                                std::to_string(kMaxEnumerationUnits));
  }
}

std::uint32_t pattern(const std::vector<std::uint8_t>& side, std::size_t bytes, std::size_t chain) {
  std::uint32_t bits = 0;
  for (std::size_t q = 0; q < bytes; ++q) bits |= std::uint32_t{side[chain * bytes + q]} << (8 * q);
  return bits;
}

// log of sum over the right side for a fixed left pattern, and its
// conditional means when `mean` is non-null.
double left_log_weight(const RbmParams& p, std::uint64_t v, double* mean) {
  double lw = 0;
  for (std::size_t i = 0; i < p.m; ++i)
    if ((v >> i) & 1u) lw += p.a[i];
  for (std::size_t j = 0; j < p.k; ++j) {
    double act = p.b[j];
    for (std::size_t i = 0; i < p.m; ++i)
      if ((v >> i) & 1u) act += p.coupling(i, j);
    lw += softplus(act);
    if (mean) mean[j] = sigmoid(act);
  }
  return lw;
}

}  // namespace

RbmParams RbmParams::zeros(std::size_t m, std::size_t k) {
  RbmParams p;
  p.m = m;
  p.k = k;
  p.w.assign(m * k, 0.0);
  p.a.assign(m, 0.0);
  p.b.assign(k, 0.0);
  return p;
}

void RbmParams::validate() const {
  if (m == 0 || k == 0) throw std::invalid_argument("RBM sides must be non-empty");
  if (w.size() != m * k || a.size() != m || b.size() != k) {
    throw std::invalid_argument("RBM parameter sizes do not match " + std::to_string(m) + "x" +
                                std::to_string(k));
  }
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  if (!finite(w) || !finite(a) || !finite(b)) throw std::invalid_argument("RBM parameters must be finite");
}

RbmParams init_rbm(std::size_t m, std::size_t k, std::uint64_t seed) {
  RbmParams p = RbmParams::zeros(m, k);
  Rng rng(seed);
  for (double& x : p.w) x = 0.01 * rng.normal();
  return p;
}

double energy(const RbmParams& p, const RbmState& s) {
  check_state(p, s);
  double e = 0;
  for (std::size_t i = 0; i < p.m; ++i) e -= p.a[i] * s.left[i];
  for (std::size_t j = 0; j < p.k; ++j) e -= p.b[j] * s.right[j];
  for (std::size_t i = 0; i < p.m; ++i) {
    if (s.left[i] == 0.0) continue;
    double row = 0;
    for (std::size_t j = 0; j < p.k; ++j) row += p.coupling(i, j) * s.right[j];
    e -= s.left[i] * row;
  }
  return e;
}

double log_prior(const RbmParams& p, const RbmState& s, double log_z) { return -energy(p, s) - log_z; }

double exact_log_z(const RbmParams& p) {
  check_enumerable(p);
  if (p.m > p.k) {
    RbmParams t = RbmParams::zeros(p.k, p.m);
    t.a = p.b;
    t.b = p.a;
    for (std::size_t i = 0; i < p.m; ++i)
      for (std::size_t j = 0; j < p.k; ++j) t.w[j * p.m + i] = p.coupling(i, j);
    return exact_log_z(t);
  }
  std::vector<double> terms(std::size_t{1} << p.m);
  for (std::uint64_t v = 0; v < terms.size(); ++v) terms[v] = left_log_weight(p, v, nullptr);
  return log_sum_exp(terms);
}

RbmMoments exact_moments(const RbmParams& p) {
  check_enumerable(p);
  const std::size_t nv = std::size_t{1} << p.m;
  std::vector<double> lw(nv);
  for (std::uint64_t v = 0; v < nv; ++v) lw[v] = left_log_weight(p, v, nullptr);
  const double log_z = log_sum_exp(lw);
  RbmMoments out{std::vector<double>(p.m * p.k), std::vector<double>(p.m), std::vector<double>(p.k)};
  std::vector<double> mean(p.k);
  for (std::uint64_t v = 0; v < nv; ++v) {
    left_log_weight(p, v, mean.data());
    const double pv = std::exp(lw[v] - log_z);
    for (std::size_t j = 0; j < p.k; ++j) out.h[j] += pv * mean[j];
    for (std::size_t i = 0; i < p.m; ++i) {
      if (!((v >> i) & 1u)) continue;
      out.v[i] += pv;
      for (std::size_t j = 0; j < p.k; ++j) out.vh[i * p.k + j] += pv * mean[j];
    }
  }
  return out;
}

RbmMoments grad_log_z(const RbmParams& p, std::span<const RbmState> samples,
                      std::span<const double> log_weights) {
  if (samples.empty()) throw std::invalid_argument("grad_log_z needs at least one sample");
  if (!log_weights.empty() && log_weights.size() != samples.size()) {
    throw std::invalid_argument("grad_log_z: weight count does not match sample count");
  }
  std::vector<double> wt(samples.size(), 1.0 / static_cast<double>(samples.size()));
  if (!log_weights.empty()) {
    const double mx = *std::max_element(log_weights.begin(), log_weights.end());
    double total = 0;
    for (std::size_t s = 0; s < wt.size(); ++s) total += wt[s] = std::exp(log_weights[s] - mx);
    for (double& x : wt) x /= total;
  }
  RbmMoments out{std::vector<double>(p.m * p.k), std::vector<double>(p.m), std::vector<double>(p.k)};
  for (std::size_t s = 0; s < samples.size(); ++s) {
    check_state(p, samples[s]);
    const auto& v = samples[s].left;
    const auto& h = samples[s].right;
    for (std::size_t j = 0; j < p.k; ++j) out.h[j] += wt[s] * h[j];
    for (std::size_t i = 0; i < p.m; ++i) {
      if (v[i] == 0.0) continue;
      out.v[i] += wt[s] * v[i];
      for (std::size_t j = 0; j < p.k; ++j) out.vh[i * p.k + j] += wt[s] * v[i] * h[j];
    }
  }
  return out;
}

BlockGibbs::BlockGibbs(const RbmParams& p, double beta, bool allow_table)
    : p_(&p),
      beta_(beta),
      table_(allow_table && p.m <= kTableUnits && p.k <= kTableUnits),
      mb_((p.m + 7) / 8),
      kb_((p.k + 7) / 8) {
  p.validate();
  if (!table_) return;
  const std::size_t nv = std::size_t{1} << p.m, nh = std::size_t{1} << p.k;
  // Coupling sums per bit pattern, accumulated in ascending unit order
  // (the pattern minus its highest bit, plus that bit's row) so they match
  // the per-step loops exactly.
  sh_.assign(nv * p.k, 0.0);
  for (std::size_t v = 1; v < nv; ++v) {
    const std::size_t hi = std::bit_width(v) - 1, rest = v ^ (std::size_t{1} << hi);
    for (std::size_t j = 0; j < p.k; ++j) sh_[v * p.k + j] = sh_[rest * p.k + j] + p.coupling(hi, j);
  }
  sv_.assign(nh * p.m, 0.0);
  for (std::size_t h = 1; h < nh; ++h) {
    const std::size_t hi = std::bit_width(h) - 1, rest = h ^ (std::size_t{1} << hi);
    for (std::size_t i = 0; i < p.m; ++i) sv_[h * p.m + i] = sv_[rest * p.m + i] + p.coupling(i, hi);
  }
  if (p.m + p.k <= 16) {
    vwh_.assign(nv * nh, 0.0);
    for (std::size_t v = 0; v < nv; ++v)
      for (std::size_t h = 0; h < nh; ++h) {
        double e = 0;
        for (std::size_t i = 0; i < p.m; ++i) {
          if (!((v >> i) & 1u)) continue;
          for (std::size_t j = 0; j < p.k; ++j)
            if ((h >> j) & 1u) e += p.coupling(i, j);
        }
        vwh_[v * nh + h] = e;
      }
  }
  build_tables();
}

void BlockGibbs::set_beta(double beta) {
  beta_ = beta;
  if (table_) build_tables();
}

void BlockGibbs::build_tables() {
  const RbmParams& p = *p_;
  const std::size_t nv = std::size_t{1} << p.m, nh = std::size_t{1} << p.k;
  const std::size_t hw = 8 * kb_, vw = 8 * mb_;
  ph_.assign(nv * hw, 0.0f);
  pv_.assign(nh * vw, 0.0f);
  for (std::size_t v = 0; v < nv; ++v)
    for (std::size_t j = 0; j < p.k; ++j)
      ph_[v * hw + j] = static_cast<float>(sigmoid(p.b[j] + beta_ * sh_[v * p.k + j]));
  for (std::size_t h = 0; h < nh; ++h)
    for (std::size_t i = 0; i < p.m; ++i)
      pv_[h * vw + i] = static_cast<float>(sigmoid(p.a[i] + beta_ * sv_[h * p.m + i]));
}

void BlockGibbs::sample_right(Chains& c, std::size_t n) const {
  const RbmParams& p = *p_;
  const std::uint8_t* v = &c.v[n * mb_];
  alignas(32) float prob[8];
  for (std::size_t q = 0; q < kb_; ++q) {
    for (std::size_t l = 0; l < 8; ++l) {
      const std::size_t j = q * 8 + l;
      if (j >= p.k) {
        prob[l] = 0.0f;
        continue;
      }
      double s = 0;
      for (std::size_t i = 0; i < p.m; ++i)
        if ((v[i / 8] >> (i % 8)) & 1u) s += p.coupling(i, j);
      prob[l] = static_cast<float>(sigmoid(p.b[j] + beta_ * s));
    }
    c.h[n * kb_ + q] = static_cast<std::uint8_t>(kernels::active().bernoulli8(c.rng[n], prob));
  }
}

void BlockGibbs::sample_left(Chains& c, std::size_t n) const {
  const RbmParams& p = *p_;
  const std::uint8_t* h = &c.h[n * kb_];
  alignas(32) float prob[8];
  for (std::size_t q = 0; q < mb_; ++q) {
    for (std::size_t l = 0; l < 8; ++l) {
      const std::size_t i = q * 8 + l;
      if (i >= p.m) {
        prob[l] = 0.0f;
        continue;
      }
      double s = 0;
      for (std::size_t j = 0; j < p.k; ++j)
        if ((h[j / 8] >> (j % 8)) & 1u) s += p.coupling(i, j);
      prob[l] = static_cast<float>(sigmoid(p.a[i] + beta_ * s));
    }
    c.v[n * mb_ + q] = static_cast<std::uint8_t>(kernels::active().bernoulli8(c.rng[n], prob));
  }
}

BlockGibbs::Chains BlockGibbs::empty_chains(std::size_t n, std::uint64_t seed) const {
  Chains c;
  c.left_bytes = mb_;
  c.right_bytes = kb_;
  c.v.assign(n * mb_, 0);
  c.h.assign(n * kb_, 0);
  c.rng.resize(n);
  for (std::size_t i = 0; i < n; ++i) kernels::seed_rng8(c.rng[i], derive_seed(seed, i));
  return c;
}

BlockGibbs::Chains BlockGibbs::uniform_chains(std::size_t n, std::uint64_t seed) const {
  Chains c = empty_chains(n, seed);
  alignas(32) float half[8];
  for (float& x : half) x = 0.5f;
  auto fill = [&](std::uint8_t* side, std::size_t bytes, std::size_t units, kernels::Rng8& rng) {
    for (std::size_t q = 0; q < bytes; ++q) {
      const std::size_t valid = std::min<std::size_t>(8, units - q * 8);
      const std::uint32_t keep = valid == 8 ? 0xFFu : ((1u << valid) - 1u);
      side[q] = static_cast<std::uint8_t>(kernels::active().bernoulli8(rng, half) & keep);
    }
  };
  for (std::size_t i = 0; i < n; ++i) {
    fill(&c.v[i * mb_], mb_, p_->m, c.rng[i]);
    fill(&c.h[i * kb_], kb_, p_->k, c.rng[i]);
  }
  return c;
}

BlockGibbs::Chains BlockGibbs::base_chains(std::size_t n, std::uint64_t seed) const {
  Chains c = empty_chains(n, seed);
  // With the other side all zero each conditional reduces to its bias.
  for (std::size_t i = 0; i < n; ++i) {
    sample_right(c, i);
    sample_left(c, i);
  }
  return c;
}

BlockGibbs::Chains BlockGibbs::chains_at(std::span<const RbmState> states, std::uint64_t seed) const {
  Chains c = empty_chains(states.size(), seed);
  auto pack = [](std::uint8_t* side, const std::vector<double>& vals) {
    for (std::size_t i = 0; i < vals.size(); ++i) {
      if (vals[i] != 0.0 && vals[i] != 1.0) throw std::invalid_argument("Gibbs state must be binary");
      if (vals[i] == 1.0) side[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    }
  };
  for (std::size_t i = 0; i < states.size(); ++i) {
    check_state(*p_, states[i]);
    pack(&c.v[i * mb_], states[i].left);
    pack(&c.h[i * kb_], states[i].right);
  }
  return c;
}

void BlockGibbs::run(Chains& c, int n) const {
  const std::size_t count = c.size();
  if (!table_) {
    for (std::size_t i = 0; i < count; ++i)
      for (int t = 0; t < n; ++t) {
        sample_right(c, i);
        sample_left(c, i);
      }
    return;
  }
  std::vector<std::uint32_t> v(count), h(count);
  for (std::size_t i = 0; i < count; ++i) {
    v[i] = pattern(c.v, mb_, i);
    h[i] = pattern(c.h, kb_, i);
  }
  kernels::active().gibbs_table(ph_.data(), pv_.data(), static_cast<int>(mb_), static_cast<int>(kb_),
                                v.data(), h.data(), c.rng.data(), static_cast<int>(count), n);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t q = 0; q < mb_; ++q) c.v[i * mb_ + q] = static_cast<std::uint8_t>(v[i] >> (8 * q));
    for (std::size_t q = 0; q < kb_; ++q) c.h[i * kb_ + q] = static_cast<std::uint8_t>(h[i] >> (8 * q));
  }
}

double BlockGibbs::coupling_energy(const Chains& c, std::size_t n) const {
  if (!vwh_.empty()) return vwh_[(std::size_t{pattern(c.v, mb_, n)} << p_->k) + pattern(c.h, kb_, n)];
  const RbmParams& p = *p_;
  const std::uint8_t* v = &c.v[n * mb_];
  const std::uint8_t* h = &c.h[n * kb_];
  double e = 0;
  for (std::size_t i = 0; i < p.m; ++i) {
    if (!((v[i / 8] >> (i % 8)) & 1u)) continue;
    for (std::size_t j = 0; j < p.k; ++j)
      if ((h[j / 8] >> (j % 8)) & 1u) e += p.coupling(i, j);
  }
  return e;
}

RbmState BlockGibbs::state(const Chains& c, std::size_t n) const {
  RbmState s{std::vector<double>(p_->m), std::vector<double>(p_->k)};
  for (std::size_t i = 0; i < p_->m; ++i) s.left[i] = (c.v[n * mb_ + i / 8] >> (i % 8)) & 1u;
  for (std::size_t j = 0; j < p_->k; ++j) s.right[j] = (c.h[n * kb_ + j / 8] >> (j % 8)) & 1u;
  return s;
}

std::vector<RbmState> BlockGibbs::states(const Chains& c) const {
  std::vector<RbmState> out;
  out.reserve(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) out.push_back(state(c, i));
  return out;
}

void gibbs_block_step(const RbmParams& p, RbmState& state, kernels::Rng8& rng) {
  BlockGibbs g(p, 1.0, false);
  auto c = g.chains_at(std::span<const RbmState>(&state, 1), 0);
  c.rng[0] = rng;
  g.run(c, 1);
  rng = c.rng[0];
  state = g.state(c, 0);
}

std::vector<RbmState> gibbs_chain(const RbmParams& p, int n_steps, int n_chains, int burn_in,
                                  std::uint64_t seed) {
  if (n_steps < 1 || n_chains < 1 || burn_in < 0) {
    throw std::invalid_argument("gibbs_chain needs n_steps >= 1, n_chains >= 1, burn_in >= 0");
  }
  BlockGibbs g(p);
  auto c = g.uniform_chains(static_cast<std::size_t>(n_chains), seed);
  g.run(c, burn_in + n_steps);
  return g.states(c);
}

}  // namespace pvxl

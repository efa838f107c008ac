#include "pvxl/ais.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>


namespace pvxl {

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

AisSamples run(const RbmParams& p, const AisSchedule& s, std::uint64_t seed, bool keep_states) {
  p.validate();
  s.validate();
  BlockGibbs g(p, 0.0);
  auto chains = g.base_chains(static_cast<std::size_t>(s.n_chains), seed);

  std::vector<double> lw(chains.size(), 0.0);
  for (std::size_t t = 1; t < s.betas.size(); ++t) {
    const double dbeta = s.betas[t] - s.betas[t - 1];
    g.set_beta(s.betas[t]);
    if (dbeta != 0.0)
      for (std::size_t c = 0; c < chains.size(); ++c) lw[c] += dbeta * g.coupling_energy(chains, c);
    g.run(chains, s.updates_per_step);
  }

  AisSamples out;
  AisResult& r = out.result;
  r.log_z_base = base_log_z(p);
  const double mx = *std::max_element(lw.begin(), lw.end());
  double acc = 0;
  for (double w : lw) acc += std::exp(w - mx);
  r.log_z_estimate = r.log_z_base + mx + std::log(acc / static_cast<double>(lw.size()));
  r.ess = effective_sample_size(lw);
  r.degenerate = r.ess < 0.01 * static_cast<double>(lw.size());
  r.log_weights = std::move(lw);
  if (keep_states) out.states = g.states(chains);
  return out;
}

}  // namespace

void AisSchedule::validate() const {
  if (betas.size() < 2) throw std::invalid_argument("AIS schedule needs at least two temperatures");
  if (betas.front() != 0.0 || betas.back() != 1.0) throw std::invalid_argument("AIS schedule must run from 0 to 1");
  for (std::size_t i = 1; i < betas.size(); ++i) {
    if (!(betas[i] >= betas[i - 1])) throw std::invalid_argument("AIS temperatures must be nondecreasing");
  }
  if (updates_per_step < 1 || n_chains < 1) throw std::invalid_argument("AIS needs positive update and chain counts");
}

AisSchedule make_schedule(int n_steps, int updates_per_step, int n_chains, Spacing spacing) {
  if (n_steps < 1 || updates_per_step < 1 || n_chains < 1) {
    throw std::invalid_argument("make_schedule: counts must be positive");
  }
  AisSchedule s;
  s.updates_per_step = updates_per_step;
  s.n_chains = n_chains;
  s.betas.resize(static_cast<std::size_t>(n_steps) + 1);
  if (spacing == Spacing::linear || n_steps < 4) {
    for (int t = 0; t <= n_steps; ++t) s.betas[t] = static_cast<double>(t) / n_steps;
  } else {
    const int n1 = n_steps / 2, n2 = n_steps - n1;
    for (int t = 0; t <= n1; ++t) s.betas[t] = 0.5 * t / n1;
    const double q = std::pow(0.1, 1.0 / (n2 - 1));
    double total = 0, gap = 1;
    for (int t = 0; t < n2; ++t, gap *= q) total += gap;
    double beta = 0.5;
    gap = 0.5 / total;
    for (int t = 1; t <= n2; ++t, gap *= q) {
      beta += gap;
      s.betas[n1 + t] = beta;
    }
  }
  s.betas.back() = 1.0;
  return s;
}

double effective_sample_size(std::span<const double> log_weights) {
  if (log_weights.empty()) throw std::invalid_argument("effective_sample_size of an empty set");
  const double mx = *std::max_element(log_weights.begin(), log_weights.end());
  double s1 = 0, s2 = 0;
  for (double lw : log_weights) {
    const double w = std::exp(lw - mx);
    s1 += w;
    s2 += w * w;
  }
  return s1 * s1 / s2;
}

double base_log_z(const RbmParams& p) {
  double z = 0;
  for (double x : p.a) z += softplus(x);
  for (double x : p.b) z += softplus(x);
  return z;
}

AisResult ais_log_z(const RbmParams& p, const AisSchedule& s, std::uint64_t seed) {
  return run(p, s, seed, false).result;
}

AisSamples ais_samples(const RbmParams& p, const AisSchedule& s, std::uint64_t seed) { return run(p, s, seed, true); }

}  // namespace pvxl

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pvxl/kernels.hpp"

namespace pvxl {

/// Bipartite RBM with energy E(v, h) = -a.v - b.h - v.W.h and p ∝ exp(-E).
/// W is m x k, row-major.
struct RbmParams {
  std::size_t m = 0;
  std::size_t k = 0;
  std::vector<double> w;
  std::vector<double> a;
  std::vector<double> b;

  static RbmParams zeros(std::size_t m, std::size_t k);
  double coupling(std::size_t i, std::size_t j) const { return w[i * k + j]; }
  /// Throws std::invalid_argument on size mismatch or non-finite entries.
  void validate() const;
};

/// W ~ Normal(0, 0.01), a = b = 0.
RbmParams init_rbm(std::size_t m, std::size_t k, std::uint64_t seed);

/// Left/right unit values in [0, 1]; bits or relaxed values.
struct RbmState {
  std::vector<double> left;
  std::vector<double> right;
};

double energy(const RbmParams& p, const RbmState& s);
/// -energy - log_z.
double log_prior(const RbmParams& p, const RbmState& s, double log_z);

/// Largest m + k accepted by the enumeration routines.
inline constexpr std::size_t kMaxEnumerationUnits = 24;

/// Exact log Z, summing the right side analytically over each left pattern
/// (the smaller side is enumerated).
double exact_log_z(const RbmParams& p);

/// E[v h^T], E[v], E[h]: the gradient of log Z with respect to (W, a, b).
struct RbmMoments {
  std::vector<double> vh;
  std::vector<double> v;
  std::vector<double> h;
};

RbmMoments exact_moments(const RbmParams& p);

/// Monte-Carlo moments. With `log_weights` the samples are combined with
/// self-normalized importance weights; otherwise uniformly.
RbmMoments grad_log_z(const RbmParams& p, std::span<const RbmState> samples,
                      std::span<const double> log_weights = {});

/// Block Gibbs sampler for p_beta(v, h) ∝ exp(a.v + b.h + beta v.W.h).
///
/// Chains are stored as packed bits: byte `q` of a side stores units
/// 8q..8q+7. When both sides have at most kTableUnits units the conditionals
/// are tabulated per bit pattern; otherwise they are computed per step with the same
/// arithmetic, so both paths draw identical samples.
class BlockGibbs {
 public:
  static constexpr std::size_t kTableUnits = 12;

  /// Independent chains, each with its own Rng8.
  struct Chains {
    std::size_t left_bytes = 0, right_bytes = 0;
    std::vector<std::uint8_t> v, h;
    std::vector<kernels::Rng8> rng;
    std::size_t size() const { return rng.size(); }
  };

  explicit BlockGibbs(const RbmParams& p, double beta = 1.0, bool allow_table = true);

  void set_beta(double beta);
  double beta() const { return beta_; }
  bool tabulated() const { return table_; }

  /// Chain c seeded from derive_seed(seed, c), both sides Bernoulli(0.5).
  Chains uniform_chains(std::size_t n, std::uint64_t seed) const;
  /// Chain c seeded from derive_seed(seed, c), drawn exactly from the
  /// factorized beta = 0 distribution.
  Chains base_chains(std::size_t n, std::uint64_t seed) const;
  /// Chains positioned at `states` (binary values), seeded as above.
  Chains chains_at(std::span<const RbmState> states, std::uint64_t seed) const;

  /// `n` full alternations on every chain: right | left, then left | right.
  void run(Chains& c, int n) const;
  /// v.W.h for chain `i`.
  double coupling_energy(const Chains& c, std::size_t i) const;
  RbmState state(const Chains& c, std::size_t i) const;
  std::vector<RbmState> states(const Chains& c) const;

 private:
  Chains empty_chains(std::size_t n, std::uint64_t seed) const;
  void sample_right(Chains& c, std::size_t i) const;
  void sample_left(Chains& c, std::size_t i) const;
  void build_tables();

  const RbmParams* p_;
  double beta_;
  bool table_;
  std::size_t mb_, kb_;
  std::vector<double> sh_, sv_;
  std::vector<float> ph_, pv_;
  std::vector<double> vwh_;
};

/// One alternation on a discrete state (values must be 0 or 1).
void gibbs_block_step(const RbmParams& p, RbmState& state, kernels::Rng8& rng);

/// `n_chains` independent chains from Bernoulli(0.5) starts, each run for
/// burn_in + n_steps alternations. Chain c uses stream derive_seed(seed, c).
std::vector<RbmState> gibbs_chain(const RbmParams& p, int n_steps, int n_chains, int burn_in,
                                  std::uint64_t seed);

}  // namespace pvxl

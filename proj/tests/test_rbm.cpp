#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>

#include "doctest.h"
#include "pvxl/random.hpp"
#include "pvxl/rbm.hpp"

using namespace pvxl;

namespace {

RbmParams random_rbm(std::size_t m, std::size_t k, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  RbmParams p = RbmParams::zeros(m, k);
  for (double& x : p.w) x = scale * (2 * rng.uniform() - 1);
  for (double& x : p.a) x = 2 * rng.uniform() - 1;
  for (double& x : p.b) x = 2 * rng.uniform() - 1;
  return p;
}

RbmState bits_state(std::size_t m, std::size_t k, std::uint64_t code) {
  RbmState s{std::vector<double>(m), std::vector<double>(k)};
  for (std::size_t i = 0; i < m; ++i) s.left[i] = (code >> i) & 1u;
  for (std::size_t j = 0; j < k; ++j) s.right[j] = (code >> (m + j)) & 1u;
  return s;
}

// Independent symbolic evaluation in extended precision.
long double symbolic_energy(const RbmParams& p, const RbmState& s) {
  long double e = 0;
  for (std::size_t i = 0; i < p.m; ++i)
    for (std::size_t j = 0; j < p.k; ++j) e -= (long double)s.left[i] * p.w[i * p.k + j] * s.right[j];
  for (std::size_t i = 0; i < p.m; ++i) e -= (long double)p.a[i] * s.left[i];
  for (std::size_t j = 0; j < p.k; ++j) e -= (long double)p.b[j] * s.right[j];
  return e;
}

// Log Z by summing exp(-E) over every joint state.
double full_enumeration_log_z(const RbmParams& p) {
  const std::uint64_t n = std::uint64_t{1} << (p.m + p.k);
  long double mx = -INFINITY;
  std::vector<long double> neg(n);
  for (std::uint64_t c = 0; c < n; ++c) mx = std::max(mx, neg[c] = -symbolic_energy(p, bits_state(p.m, p.k, c)));
  long double acc = 0;
  for (long double x : neg) acc += std::exp(x - mx);
  return static_cast<double>(mx + std::log(acc));
}

std::vector<double> exact_joint(const RbmParams& p) {
  const double lz = exact_log_z(p);
  std::vector<double> prob(std::size_t{1} << (p.m + p.k));
  for (std::uint64_t c = 0; c < prob.size(); ++c) prob[c] = std::exp(log_prior(p, bits_state(p.m, p.k, c), lz));
  return prob;
}

std::uint64_t encode(const RbmState& s) {
  std::uint64_t c = 0;
  for (std::size_t i = 0; i < s.left.size(); ++i) c |= std::uint64_t(s.left[i]) << i;
  for (std::size_t j = 0; j < s.right.size(); ++j) c |= std::uint64_t(s.right[j]) << (s.left.size() + j);
  return c;
}

double sigmoid(double x) { return 1 / (1 + std::exp(-x)); }

}  // namespace

TEST_CASE("energy examples") {
  RbmParams z = RbmParams::zeros(3, 2);
  CHECK(energy(z, bits_state(3, 2, 0b10110)) == 0.0);

  RbmParams p = RbmParams::zeros(1, 1);
  p.w = {2};
  p.a = {1};
  p.b = {-1};
  CHECK(energy(p, RbmState{{1}, {1}}) == -2.0);

  RbmParams r = random_rbm(4, 4, 1);
  for (std::uint64_t c = 0; c < 256; ++c) {
    const auto s = bits_state(4, 4, c);
    CHECK(std::abs(energy(r, s) - (double)symbolic_energy(r, s)) < 1e-14);
  }
  CHECK_THROWS_AS(energy(r, RbmState{{1, 0}, {1, 0, 0, 0}}), std::invalid_argument);
}

TEST_CASE("energy is bilinear in each coordinate") {
  RbmParams r = random_rbm(3, 4, 2);
  Rng rng(3);
  RbmState s{{0.2, 0.7, 0.4}, {0.9, 0.1, 0.5, 0.3}};
  for (int trial = 0; trial < 20; ++trial) {
    const bool left = trial % 2 == 0;
    const std::size_t idx = trial % (left ? 3 : 4);
    const double t = rng.uniform();
    RbmState s0 = s, s1 = s, st = s;
    (left ? s0.left : s0.right)[idx] = 0;
    (left ? s1.left : s1.right)[idx] = 1;
    (left ? st.left : st.right)[idx] = t;
    CHECK(energy(r, st) == doctest::Approx((1 - t) * energy(r, s0) + t * energy(r, s1)).epsilon(1e-13));
  }
}

TEST_CASE("exact_log_z examples") {
  CHECK(exact_log_z(RbmParams::zeros(2, 2)) == doctest::Approx(4 * std::numbers::ln2).epsilon(1e-15));

  RbmParams f = random_rbm(3, 5, 4);
  std::fill(f.w.begin(), f.w.end(), 0.0);
  double closed = 0;
  for (double a : f.a) closed += std::log1p(std::exp(a));
  for (double b : f.b) closed += std::log1p(std::exp(b));
  CHECK(exact_log_z(f) == doctest::Approx(closed).epsilon(1e-14));

  RbmParams r = random_rbm(8, 8, 5);
  CHECK(std::abs(exact_log_z(r) - full_enumeration_log_z(r)) < 1e-10);
  // Enumerating the smaller side either way round gives the same value.
  RbmParams wide = random_rbm(3, 9, 6), tall = RbmParams::zeros(9, 3);
  tall.a = wide.b;
  tall.b = wide.a;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 9; ++j) tall.w[j * 3 + i] = wide.w[i * 9 + j];
  CHECK(exact_log_z(tall) == doctest::Approx(exact_log_z(wide)).epsilon(1e-13));
  CHECK(std::abs(exact_log_z(tall) - full_enumeration_log_z(tall)) < 1e-10);

  CHECK_THROWS_AS(exact_log_z(RbmParams::zeros(13, 12)), std::invalid_argument);
  RbmParams bad = RbmParams::zeros(2, 2);
  bad.w[1] = NAN;
  CHECK_THROWS_AS(exact_log_z(bad), std::invalid_argument);
}

TEST_CASE("log_prior examples and normalization") {
  RbmParams z = RbmParams::zeros(1, 1);
  for (std::uint64_t c = 0; c < 4; ++c) {
    CHECK(log_prior(z, bits_state(1, 1, c), exact_log_z(z)) == doctest::Approx(-2 * std::numbers::ln2));
  }
  RbmParams z3 = RbmParams::zeros(3, 4);
  RbmState half{std::vector<double>(3, 0.5), std::vector<double>(4, 0.5)};
  CHECK(log_prior(z3, half, exact_log_z(z3)) == doctest::Approx(-7 * std::numbers::ln2).epsilon(1e-14));

  for (auto [m, k] : {std::pair<std::size_t, std::size_t>{2, 3}, {6, 5}, {8, 8}}) {
    RbmParams r = random_rbm(m, k, 7 + m, 2.0);
    const double lz = exact_log_z(r);
    double total = 0;
    for (std::uint64_t c = 0; c < (std::uint64_t{1} << (m + k)); ++c) total += std::exp(log_prior(r, bits_state(m, k, c), lz));
    CHECK(std::abs(total - 1.0) < 1e-8);
  }
}

TEST_CASE("grad_log_z examples") {
  RbmParams p = RbmParams::zeros(1, 1);
  RbmState one{{1}, {1}};
  auto g = grad_log_z(p, std::span<const RbmState>(&one, 1));
  CHECK(g.vh[0] == 1.0);
  CHECK(g.v[0] == 1.0);
  CHECK(g.h[0] == 1.0);
  CHECK_THROWS_AS(grad_log_z(p, std::span<const RbmState>{}), std::invalid_argument);

  // Self-normalized weights pick out the heavy sample.
  std::vector<RbmState> two{{{1}, {0}}, {{0}, {1}}};
  std::vector<double> lw{0.0, std::log(3.0)};
  auto gw = grad_log_z(p, two, lw);
  CHECK(gw.v[0] == doctest::Approx(0.25));
  CHECK(gw.h[0] == doctest::Approx(0.75));
  CHECK(gw.vh[0] == 0.0);
}

TEST_CASE("exact moments are the finite-difference gradient of exact_log_z") {
  RbmParams r = random_rbm(4, 5, 8, 1.5);
  const auto mom = exact_moments(r);
  const double eps = 1e-5;
  auto fd = [&](std::vector<double>& field, std::size_t i) {
    const double orig = field[i];
    field[i] = orig + eps;
    const double up = exact_log_z(r);
    field[i] = orig - eps;
    const double dn = exact_log_z(r);
    field[i] = orig;
    return (up - dn) / (2 * eps);
  };
  for (std::size_t i = 0; i < r.w.size(); ++i) CHECK(std::abs(fd(r.w, i) - mom.vh[i]) < 1e-6);
  for (std::size_t i = 0; i < r.a.size(); ++i) CHECK(std::abs(fd(r.a, i) - mom.v[i]) < 1e-6);
  for (std::size_t i = 0; i < r.b.size(); ++i) CHECK(std::abs(fd(r.b, i) - mom.h[i]) < 1e-6);
}

TEST_CASE("gibbs with zero couplings draws independent biased bits") {
  RbmParams p = random_rbm(3, 4, 9);
  std::fill(p.w.begin(), p.w.end(), 0.0);
  kernels::Rng8 rng;
  kernels::seed_rng8(rng, 10);
  RbmState s = bits_state(3, 4, 0);
  const int n = 100000;
  std::vector<double> ml(3), mr(4);
  for (int t = 0; t < n; ++t) {
    gibbs_block_step(p, s, rng);
    for (int i = 0; i < 3; ++i) ml[i] += s.left[i];
    for (int j = 0; j < 4; ++j) mr[j] += s.right[j];
  }
  for (int i = 0; i < 3; ++i) {
    const double q = sigmoid(p.a[i]);
    CHECK(std::abs(ml[i] / n - q) < 3 * std::sqrt(q * (1 - q) / n));
  }
  for (int j = 0; j < 4; ++j) {
    const double q = sigmoid(p.b[j]);
    CHECK(std::abs(mr[j] / n - q) < 3 * std::sqrt(q * (1 - q) / n));
  }
}

TEST_CASE("gibbs with strong coupling concentrates on aligned states") {
  RbmParams p = RbmParams::zeros(1, 1);
  p.w = {10};
  p.a = {-5};
  p.b = {-5};
  const auto prob = exact_joint(p);
  const double mixed = prob[0b01] + prob[0b10];
  // Independent chains so the standard error is binomial.
  const int n = 100000;
  auto states = gibbs_chain(p, 20, n, 0, 11);
  int mixed_count = 0;
  for (const auto& s : states) mixed_count += s.left[0] != s.right[0];
  CHECK(double(mixed_count) / n < mixed + 3 * std::sqrt(mixed * (1 - mixed) / n) + 1e-12);
  CHECK(mixed < 0.02);
}

TEST_CASE("long gibbs chain converges to the enumerated distribution") {
  RbmParams p = random_rbm(4, 4, 12);
  const auto prob = exact_joint(p);
  BlockGibbs g(p);
  auto c = g.uniform_chains(1, 13);
  std::vector<double> hist(256);
  const int n = 1000000;
  for (int t = 0; t < n; ++t) {
    g.run(c, 1);
    hist[encode(g.state(c, 0))] += 1.0 / n;
  }
  double tv = 0;
  for (std::size_t s = 0; s < 256; ++s) tv += 0.5 * std::abs(hist[s] - prob[s]);
  CHECK(tv < 0.02);
}

TEST_CASE("gibbs_chain determinism, independence and means") {
  RbmParams p = random_rbm(5, 3, 14);
  auto a = gibbs_chain(p, 10, 3, 5, 99);
  auto b = gibbs_chain(p, 10, 3, 5, 99);
  REQUIRE(a.size() == 3);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(a[c].left == b[c].left);
    CHECK(a[c].right == b[c].right);
  }
  CHECK_THROWS_AS(gibbs_chain(p, 0, 3, 0, 1), std::invalid_argument);

  std::fill(p.w.begin(), p.w.end(), 0.0);
  const int n = 50000;
  auto states = gibbs_chain(p, 1, n, 0, 15);
  auto mom = grad_log_z(p, states);
  for (std::size_t i = 0; i < 5; ++i) {
    const double q = sigmoid(p.a[i]);
    CHECK(std::abs(mom.v[i] - q) < 3 * std::sqrt(q * (1 - q) / n));
  }
  for (std::size_t j = 0; j < 3; ++j) {
    const double q = sigmoid(p.b[j]);
    CHECK(std::abs(mom.h[j] - q) < 3 * std::sqrt(q * (1 - q) / n));
  }
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      const double q = sigmoid(p.a[i]) * sigmoid(p.b[j]);
      CHECK(std::abs(mom.vh[i * 3 + j] - q) < 3 * std::sqrt(q * (1 - q) / n));
    }
}

TEST_CASE("Monte-Carlo moments match enumerated moments") {
  RbmParams p = random_rbm(4, 4, 16, 1.5);
  const auto exact = exact_moments(p);
  const int n = 100000;
  auto states = gibbs_chain(p, 30, n, 0, 17);
  auto mc = grad_log_z(p, states);
  auto close = [&](double est, double q) { return std::abs(est - q) < 3 * std::sqrt(q * (1 - q) / n) + 1e-12; };
  for (std::size_t i = 0; i < 16; ++i) CHECK(close(mc.vh[i], exact.vh[i]));
  for (std::size_t i = 0; i < 4; ++i) CHECK(close(mc.v[i], exact.v[i]));
  for (std::size_t j = 0; j < 4; ++j) CHECK(close(mc.h[j], exact.h[j]));
}

TEST_CASE("tabulated and per-step samplers draw identical chains") {
  for (auto [m, k] : {std::pair<std::size_t, std::size_t>{3, 7}, {8, 8}, {12, 9}}) {
    RbmParams p = random_rbm(m, k, 18 + m, 2.0);
    BlockGibbs fast(p, 0.3), slow(p, 0.3, false);
    REQUIRE(fast.tabulated());
    REQUIRE_FALSE(slow.tabulated());
    auto cf = fast.base_chains(7, 19), cs = slow.base_chains(7, 19);
    CHECK(cf.v == cs.v);
    CHECK(cf.h == cs.h);
    for (double beta : {0.3, 0.9, 1.0}) {
      fast.set_beta(beta);
      slow.set_beta(beta);
      fast.run(cf, 25);
      slow.run(cs, 25);
      CHECK(cf.v == cs.v);
      CHECK(cf.h == cs.h);
      for (std::size_t c = 0; c < 7; ++c) CHECK(fast.coupling_energy(cf, c) == slow.coupling_energy(cs, c));
    }
  }
}

TEST_CASE("sampler output does not depend on the kernel variant") {
  if (!kernels::isa_available(kernels::Isa::avx2)) return;
  RbmParams p = random_rbm(6, 10, 20);
  auto run = [&](kernels::Isa isa) {
    kernels::set_active(isa);
    BlockGibbs g(p);
    auto c = g.uniform_chains(9, 21);
    g.run(c, 100);
    return c.v;
  };
  const auto a = run(kernels::Isa::scalar);
  const auto b = run(kernels::Isa::avx2);
  CHECK(a == b);
}

TEST_CASE("init_rbm draws small couplings and zero biases") {
  RbmParams p = init_rbm(20, 30, 22);
  double s2 = 0;
  for (double w : p.w) s2 += w * w;
  CHECK(std::sqrt(s2 / p.w.size()) == doctest::Approx(0.01).epsilon(0.1));
  for (double x : p.a) CHECK(x == 0.0);
  for (double x : p.b) CHECK(x == 0.0);
}

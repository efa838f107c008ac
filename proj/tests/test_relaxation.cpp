#include <cmath>
#include <numbers>

#include "doctest.h"
#include "pvxl/gradcheck.hpp"
#include "pvxl/relaxation.hpp"

using namespace pvxl;

namespace {

double sigmoid(double x) { return 1 / (1 + std::exp(-x)); }
double logit(double p) { return std::log(p / (1 - p)); }

Tensor<double> filled(Shape s, std::vector<double> v) { return Tensor<double>(std::move(s), std::move(v)); }

}  // namespace

TEST_CASE("sample_zeta examples") {
  Tape<double> t;
  auto z0 = sample_zeta(t.constant(filled({1}, {0.0})), filled({1}, {0.5}), 1.0);
  CHECK(z0.item() == 0.5);
  auto z2 = sample_zeta(t.constant(filled({1}, {2.0})), filled({1}, {0.5}), 1.0);
  CHECK(z2.item() == doctest::Approx(0.8807970779778823).epsilon(1e-15));
  // l + logit(0.2) = -0.386 < 0, so a vanishing temperature drives zeta to 0.
  auto cold = sample_zeta(t.constant(filled({1}, {1.0})), filled({1}, {0.2}), 1e-4);
  CHECK(cold.item() < 1e-100);
  auto hot_side = sample_zeta(t.constant(filled({1}, {1.5})), filled({1}, {0.2}), 1e-4);
  CHECK(hot_side.item() == 1.0);

  CHECK_THROWS_AS(sample_zeta(t.constant(filled({2}, {0, 0})), filled({2}, {0.0, 0.5}), 1.0), std::domain_error);
  CHECK_THROWS_AS(sample_zeta(t.constant(filled({2}, {0, 0})), filled({2}, {0.5, 1.0}), 1.0), std::domain_error);
  CHECK_THROWS_AS(sample_zeta(t.constant(filled({2}, {0, 0})), filled({2}, {0.5, 0.5}), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(sample_zeta(t.constant(filled({2}, {0, 0})), filled({3}, {0.5, 0.5, 0.5}), 1.0), ShapeError);
}

TEST_CASE("uniform_rho stays inside the open interval") {
  Rng rng(1);
  auto r = uniform_rho<float>(Shape{100000}, rng);
  for (float x : r.values()) REQUIRE((x > 0.0f && x < 1.0f));
  auto d = uniform_rho<double>(Shape{1000}, rng);
  double mean = 0;
  for (double x : d.values()) mean += x / 1000;
  CHECK(std::abs(mean - 0.5) < 3 * std::sqrt(1.0 / 12 / 1000));
}

TEST_CASE("sample_discrete examples") {
  Rng rng(2);
  const std::size_t n = 100000;
  auto rho = uniform_rho<double>(Shape{n}, rng);
  auto sat = sample_discrete(Tensor<double>(Shape{n}, 50.0), rho);
  for (double z : sat.values()) REQUIRE(z == 1.0);

  for (double l : {0.0, -1.3, 0.7, 2.5}) {
    auto rho_l = uniform_rho<double>(Shape{n}, rng);
    auto z = sample_discrete(Tensor<double>(Shape{n}, l), rho_l);
    double mean = 0;
    for (double v : z.values()) mean += v / n;
    const double p = sigmoid(l);
    INFO("l = " << l);
    CHECK(std::abs(mean - p) < 3 * std::sqrt(p * (1 - p) / n));
  }
}

TEST_CASE("log_q examples") {
  Tape<double> t;
  Rng rng(3);
  const std::size_t n = 9;
  auto zeta = uniform_rho<double>(Shape{1, n}, rng);
  auto lq0 = log_q(t.constant(Tensor<double>(Shape{1, n})), t.constant(zeta));
  CHECK(lq0.shape() == Shape{1});
  CHECK(lq0.item() == doctest::Approx(-double(n) * std::numbers::ln2).epsilon(1e-14));

  for (double l : {-3.0, 0.4, 7.0}) {
    auto p1 = std::exp(log_q(t.constant(filled({1, 1}, {l})), t.constant(filled({1, 1}, {1.0}))).item());
    auto p0 = std::exp(log_q(t.constant(filled({1, 1}, {l})), t.constant(filled({1, 1}, {0.0}))).item());
    CHECK(std::abs(p0 + p1 - 1.0) < 1e-12);
  }

  Tensor<double> logits(Shape{3, 4}), z(Shape{3, 4});
  for (std::size_t i = 0; i < 12; ++i) {
    logits[i] = 6 * rng.uniform() - 3;
    z[i] = rng.uniform();
  }
  auto lq = log_q(t.constant(logits), t.constant(z)).value();
  for (std::size_t r = 0; r < 3; ++r) {
    double direct = 0;
    for (std::size_t c = 0; c < 4; ++c) {
      const double l = logits.at({r, c}), v = z.at({r, c});
      direct += v * std::log(sigmoid(l)) + (1 - v) * std::log(1 - sigmoid(l));
    }
    CHECK(lq[r] == doctest::Approx(direct).epsilon(1e-13));
  }

  // Relabeling: swap the bit and negate the logit.
  Tensor<double> neg_l(logits.shape()), flip(z.shape());
  for (std::size_t i = 0; i < 12; ++i) {
    neg_l[i] = -logits[i];
    flip[i] = 1 - z[i];
  }
  auto relabeled = log_q(t.constant(neg_l), t.constant(flip)).value();
  for (std::size_t r = 0; r < 3; ++r) CHECK(relabeled[r] == doctest::Approx(lq[r]).epsilon(1e-13));

  CHECK_THROWS_AS(log_q(t.constant(logits), t.constant(Tensor<double>(Shape{3, 5}))), ShapeError);
}

TEST_CASE("tau_at examples and config bounds") {
  RelaxationConfig c;
  c.validate();
  for (long s : {0L, 1L, 100L, 1000000L}) CHECK(tau_at(c, s) == 0.25);

  RelaxationConfig dec{0.5, TauSchedule::decreasing, 0.25, 100};
  dec.validate();
  CHECK(tau_at(dec, 50) == doctest::Approx(0.375));
  CHECK(tau_at(dec, 0) == 0.5);
  CHECK(tau_at(dec, 1000) == 0.25);
  CHECK_THROWS_AS(tau_at(dec, -1), std::invalid_argument);

  RelaxationConfig hot{0.9};
  CHECK_THROWS_AS(hot.validate(), std::invalid_argument);
  RelaxationConfig cold{0.05};
  CHECK_THROWS_AS(cold.validate(), std::invalid_argument);
  hot.allow_any_tau = true;
  hot.validate();
  RelaxationConfig wrong_way{0.3, TauSchedule::increasing, 0.2, 10};
  CHECK_THROWS_AS(wrong_way.validate(), std::invalid_argument);
  RelaxationConfig no_horizon{0.3, TauSchedule::increasing, 0.4, 0};
  CHECK_THROWS_AS(no_horizon.validate(), std::invalid_argument);
  RelaxationConfig zero{0.0};
  zero.allow_any_tau = true;
  CHECK_THROWS_AS(zero.validate(), std::invalid_argument);
}

TEST_CASE("relaxed samples approach discrete samples as tau goes to zero") {
  Rng rng(4);
  const std::size_t n = 100000;
  Tensor<double> logits(Shape{n});
  for (double& l : logits.values()) l = 8 * rng.uniform() - 4;
  auto rho = uniform_rho<double>(Shape{n}, rng);
  Tape<double> t;
  auto zeta = sample_zeta(t.constant(logits), rho, 1e-4).value();
  auto bits = sample_discrete(logits, rho);
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(logits[i] + logit(rho[i])) < 1e-3) continue;
    REQUIRE(std::abs(zeta[i] - bits[i]) < 1e-3);
  }
}

TEST_CASE("zeta gradient matches finite differences") {
  Rng rng(5);
  auto rho = uniform_rho<double>(Shape{2, 6}, rng);
  Tensor<double> l(Shape{2, 6});
  // Keep l + logit(rho) within a few temperatures so no coordinate saturates.
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = -logit(rho[i]) + 0.8 * rng.uniform() - 0.4;
  for (double tau : {0.25, 1.0}) {
    auto report = finite_diff_check(
        [&](Tape<double>& t, const std::vector<Var<double>>& p) {
          auto w = t.constant(Tensor<double>(Shape{2, 6}, std::vector<double>{1, -2, 3, 0.5, -1, 2, 1, 1, -3, 2, 0.25, 4}));
          return sum(mul(sample_zeta(p[0], rho, tau), w));
        },
        {l}, 1e-5);
    CHECK(report.max_rel_error < 1e-6);
  }
  auto lq = finite_diff_check(
      [&](Tape<double>& t, const std::vector<Var<double>>& p) { return sum(log_q(p[0], t.constant(rho))); }, {l});
  CHECK(lq.max_rel_error < 1e-6);
}

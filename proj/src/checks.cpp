#include "pvxl/checks.hpp"

#include <chrono>
#include <cmath>
#include <functional>

#include "pvxl/ais.hpp"
#include "pvxl/gradcheck.hpp"
#include "pvxl/likelihood.hpp"
#include "pvxl/objective.hpp"
#include "pvxl/relaxation.hpp"

namespace pvxl {

namespace {

constexpr double kTol = 1e-4;

Tensor<double> uniform_tensor(const Shape& s, Rng& rng, double lo, double hi) {
  Tensor<double> t(s);
  for (double& v : t.values()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

// Random projection to a scalar so every output coordinate carries weight.
Var<double> project(const Var<double>& y, Rng& rng) {
  return sum(mul(y, y.tape().constant(uniform_tensor(y.shape(), rng, -1, 1))));
}

using OpFn = std::function<Var<double>(const std::vector<Var<double>>&)>;

struct OpCase {
  const char* name;
  std::vector<Shape> shapes;
  OpFn fn;
  double lo = -1, hi = 1;
};

std::vector<OpCase> op_cases() {
  return {
      {"add", {{2, 3, 4}, {3, 1}}, [](auto& p) { return add(p[0], p[1]); }},
      {"sub", {{2, 3}, {2, 3}}, [](auto& p) { return sub(p[0], p[1]); }},
      {"mul", {{2, 1, 3}, {4, 3}}, [](auto& p) { return mul(p[0], p[1]); }},
      {"scale", {{5}}, [](auto& p) { return scale(p[0], -2.5); }},
      {"add_scalar", {{5}}, [](auto& p) { return add_scalar(p[0], 0.7); }},
      {"neg", {{5}}, [](auto& p) { return neg(p[0]); }},
      {"sigmoid", {{6}}, [](auto& p) { return sigmoid(p[0]); }},
      {"tanh", {{6}}, [](auto& p) { return pvxl::tanh(p[0]); }},
      {"elu", {{6}}, [](auto& p) { return elu(p[0]); }},
      {"exp", {{6}}, [](auto& p) { return pvxl::exp(p[0]); }},
      {"log", {{6}}, [](auto& p) { return pvxl::log(p[0]); }, 0.5, 2.0},
      {"softplus", {{6}}, [](auto& p) { return softplus(scale(p[0], 5.0)); }},
      {"log_sigmoid", {{6}}, [](auto& p) { return log_sigmoid(scale(p[0], 5.0)); }},
      {"log1mexp", {{6}}, [](auto& p) { return log1mexp(p[0]); }, 0.1, 3.0},
      {"clamp_min", {{6}}, [](auto& p) { return clamp_min(p[0], -0.05); }, 0.1, 1.0},
      {"square", {{6}}, [](auto& p) { return square(p[0]); }},
      {"concat_elu", {{2, 2, 2, 3}}, [](auto& p) { return concat_elu(p[0]); }},
      {"concat", {{2, 3}, {2, 2}}, [](auto& p) { return concat<double>({p[0], p[1]}, 1); }},
      {"slice", {{3, 5}}, [](auto& p) { return slice(p[0], 1, 1, 3); }},
      {"reshape", {{2, 6}}, [](auto& p) { return reshape(p[0], Shape{3, 4}); }},
      {"downshift", {{1, 3, 3, 2}}, [](auto& p) { return downshift(p[0]); }},
      {"rightshift", {{1, 3, 3, 2}}, [](auto& p) { return rightshift(p[0]); }},
      {"sum_axis", {{2, 3, 4}}, [](auto& p) { return sum_axis(p[0], 1); }},
      {"mean", {{2, 3}}, [](auto& p) { return mean(p[0]); }},
      {"log_sum_exp", {{2, 5, 3}}, [](auto& p) { return log_sum_exp(p[0], 1); }},
      {"dense", {{3, 4}, {4, 2}, {2}}, [](auto& p) { return dense(p[0], p[1], p[2]); }},
      {"conv2d", {{2, 5, 5, 2}, {2, 3, 2, 3}, {3}},
       [](auto& p) { return conv2d(p[0], p[1], 2, Pad2d{1, 0, 1, 1}, p[2]); }},
      {"transposed_conv2d", {{1, 4, 4, 3}, {2, 2, 2, 3}, {2}},
       [](auto& p) { return transposed_conv2d(p[0], p[1], 2, Pad2d{0, 1, 0, 1}, 7, 7, p[2]); }},
      {"weight_norm", {{2, 2, 3, 4}, {4}}, [](auto& p) { return weight_norm(p[0], p[1]); }},
  };
}

ParamSet<double> with_prefix(const ParamSet<double>& ps, const std::string& prefix) {
  ParamSet<double> out;
  for (const auto& n : ps.names())
    if (n.rfind(prefix, 0) == 0) out.add(n, ps[n]);
  return out;
}

// Weight norm ignores the scale of `.v`; longer directions keep central
// differences clear of curvature.
ParamSet<double> rescaled_directions(ParamSet<double> ps) {
  for (const auto& n : ps.names())
    if (n.size() > 2 && n.compare(n.size() - 2, 2, ".v") == 0)
      for (auto& v : ps[n].values()) v *= 20.0;
  return ps;
}

}  // namespace

std::vector<CheckResult> gradient_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);

  for (const auto& c : op_cases()) {
    std::vector<Tensor<double>> params;
    for (const auto& s : c.shapes) params.push_back(uniform_tensor(s, rng, c.lo, c.hi));
    const std::uint64_t proj = rng();
    const auto r = finite_diff_check(
        [&](Tape<double>&, const std::vector<Var<double>>& p) {
          Rng pr(proj);
          return project(c.fn(p), pr);
        },
        params);
    out.push_back({std::string("op/") + c.name, r.max_rel_error, kTol});
  }

  {
    Tensor<std::uint8_t> bits(Shape{2, 3, 3, 1});
    for (auto& v : bits.values()) v = rng() & 1u;
    const auto logits = uniform_tensor(Shape{2, 3, 3, 1}, rng, -2, 2);
    const auto r = finite_diff_check(
        [&](Tape<double>&, const std::vector<Var<double>>& p) {
          return sum(pixel_loglik(HeadSpec{HeadKind::bernoulli, 1, 1}, p[0], bits));
        },
        {logits});
    out.push_back({"likelihood/bernoulli", r.max_rel_error, kTol});
  }
  for (int c : {1, 3}) {
    const int k = 2;
    const HeadSpec head{HeadKind::dlm, c, k};
    Tensor<std::uint8_t> x(Shape{2, 2, 2, std::size_t(c)});
    const std::uint8_t picks[] = {0, 255, 3, 160, 200, 64, 17, 250, 99, 1, 180, 42};
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = picks[i % 12];
    auto params = uniform_tensor(Shape{2, 2, 2, head.params_per_pixel()}, rng, -1, 1);
    // Positive log-scales: wide components keep gradients above rounding.
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = k + c * k; j < std::size_t(k + 2 * c * k); ++j) params[i * head.params_per_pixel() + j] = rng.uniform();
    const auto r = finite_diff_check(
        [&](Tape<double>&, const std::vector<Var<double>>& p) { return sum(pixel_loglik(head, p[0], x)); }, {params});
    out.push_back({"likelihood/dlm-" + std::to_string(c), r.max_rel_error, kTol});
  }

  {
    const auto rho = uniform_rho<double>(Shape{2, 6}, rng);
    Tensor<double> l(Shape{2, 6});
    for (std::size_t i = 0; i < l.size(); ++i) l[i] = -std::log(rho[i] / (1 - rho[i])) + 0.8 * rng.uniform() - 0.4;
    const auto w = uniform_tensor(Shape{2, 6}, rng, -2, 2);
    const auto zeta = finite_diff_check(
        [&](Tape<double>& t, const std::vector<Var<double>>& p) {
          return sum(mul(sample_zeta(p[0], rho, 0.5), t.constant(w)));
        },
        {l}, 1e-5);
    out.push_back({"relaxation/zeta", zeta.max_rel_error, kTol});
    const auto lq = finite_diff_check(
        [&](Tape<double>& t, const std::vector<Var<double>>& p) { return sum(log_q(p[0], t.constant(rho))); }, {l});
    out.push_back({"relaxation/log_q", lq.max_rel_error, kTol});
  }

  ModelConfig toy;
  toy.height = toy.width = 4;
  toy.resnets = 1;
  toy.filters = 4;
  toy.latent_filters = 4;
  toy.bridge_channels = 2;
  toy.z1 = 3;
  toy.z2 = 2;
  toy.z3 = true;
  toy.z3_units = 2;

  {
    const std::string unit = "dec.u4.0.u";
    auto ps = with_prefix(init_model(toy, seed + 1), unit);
    ps[unit + ".c2.g"].fill(1.0);
    const auto h = normal_tensor<double>(Shape{1, 2, 2, 4}, 1.0, rng);
    const auto aux = normal_tensor<double>(Shape{1, 2, 2, 6}, 1.0, rng);
    const auto z2 = normal_tensor<double>(Shape{1, 2}, 1.0, rng);
    const auto w = normal_tensor<double>(h.shape(), 1.0, rng);
    const auto r = finite_diff_check_params(
        [&](const Binder<double>& b) {
          auto& t = b.tape();
          auto y = gated_resnet(b, unit, t.constant(h), t.constant(aux), t.constant(z2), ShiftKind::down);
          return sum(mul(y, t.constant(w)));
        },
        ps, 1e-6);
    out.push_back({"model/gated_resnet", r.max_rel_error, kTol});
  }

  {
    const auto ps = rescaled_directions(init_model(toy, seed + 2));
    Tensor<std::uint8_t> x(Shape{2, 4, 4, 1});
    for (auto& v : x.values()) v = rng() & 1u;
    const std::uint64_t noise = rng();
    ElboOptions opt;
    opt.tau = 0.5;
    opt.beta = 1.0;
    opt.exact_log_z = true;
    opt.path_derivative = false;
    const auto r = finite_diff_check_params(
        [&](const Binder<double>& b) {
          Rng frozen(noise);
          return relaxed_elbo(b, toy, x, frozen, opt).loss;
        },
        ps, 1e-4, 1e-6);
    out.push_back({"objective/relaxed_elbo", r.max_rel_error, kTol});
  }
  return out;
}

RbmParams random_rbm(std::size_t m, std::size_t k, double lo, double hi, std::uint64_t seed) {
  Rng rng(seed);
  auto p = RbmParams::zeros(m, k);
  for (auto* v : {&p.w, &p.a, &p.b})
    for (double& x : *v) x = lo + (hi - lo) * rng.uniform();
  return p;
}

std::vector<AisCheck> check_ais(const RbmParams& p, std::span<const int> steps, int updates, int chains,
                                std::uint64_t seed) {
  const double exact = exact_log_z(p);
  std::vector<AisCheck> out;
  for (int n : steps) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = ais_log_z(p, make_schedule(n, updates, chains, Spacing::geometric_tail), seed);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back({n, r.log_z_estimate, exact, std::abs(r.log_z_estimate - exact), r.ess, secs});
  }
  return out;
}

}  // namespace pvxl

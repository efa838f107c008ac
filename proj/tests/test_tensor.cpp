#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "pvxl/gradcheck.hpp"
#include "pvxl/tensor.hpp"
#include "test_util.hpp"

using namespace pvxl;
using pvxl::test::random_tensor;

namespace {

// Direct cross-correlation, no im2col.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& k, int s, Pad2d p) {
  const auto B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const auto kh = k.dim(0), kw = k.dim(1), O = k.dim(3);
  const auto oh = (H + p.top + p.bottom - kh) / s + 1, ow = (W + p.left + p.right - kw) / s + 1;
  Tensor<double> out(Shape{B, oh, ow, O});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        for (std::size_t o = 0; o < O; ++o) {
          double acc = 0;
          for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j)
              for (std::size_t c = 0; c < C; ++c) {
                const long iy = long(y * s + i) - p.top, ix = long(xx * s + j) - p.left;
                if (iy < 0 || ix < 0 || iy >= long(H) || ix >= long(W)) continue;
                acc += x.at({b, std::size_t(iy), std::size_t(ix), c}) * k.at({i, j, c, o});
              }
          out.at({b, y, xx, o}) = acc;
        }
  return out;
}

// sum(op(x) * r) for a fixed random r, so every output coordinate matters.
Var<double> weighted_sum(const Var<double>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto r = y.tape().constant(random_tensor(y.shape(), rng));
  return sum(mul(y, r));
}

}  // namespace

TEST_CASE("conv2d examples") {
  Tape<double> t;
  auto x = t.constant(Tensor<double>(Shape{1, 1, 1, 1}, 3.0));
  auto k = t.constant(Tensor<double>(Shape{1, 1, 1, 1}, 2.0));
  CHECK(conv2d(x, k, 1, {}).item() == 6.0);

  auto ones = t.constant(Tensor<double>(Shape{1, 4, 4, 1}, 1.0));
  auto k22 = t.constant(Tensor<double>(Shape{2, 2, 1, 1}, 1.0));
  auto pooled = conv2d(ones, k22, 2, {});
  CHECK(pooled.shape() == Shape{1, 2, 2, 1});
  for (double v : pooled.value().values()) CHECK(v == 4.0);

  std::mt19937_64 rng(1);
  auto xv = random_tensor(Shape{1, 5, 5, 2}, rng);
  auto kv = random_tensor(Shape{3, 3, 2, 3}, rng);
  for (Pad2d pad : {Pad2d{}, Pad2d{1, 0, 1, 1}, Pad2d{2, 1, 0, 2}}) {
    for (int s : {1, 2}) {
      auto got = conv2d(t.constant(xv), t.constant(kv), s, pad).value();
      auto want = naive_conv(xv, kv, s, pad);
      REQUIRE(got.shape() == want.shape());
      CHECK(test::max_abs_diff(got, want) < 1e-12);
    }
  }
}

TEST_CASE("conv2d rejects mismatched shapes naming both") {
  Tape<double> t;
  auto x = t.constant(Tensor<double>(Shape{1, 4, 4, 2}));
  auto k = t.constant(Tensor<double>(Shape{3, 3, 3, 1}));
  try {
    conv2d(x, k, 1, {});
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1,4,4,2]") != std::string::npos);
    CHECK(msg.find("[3,3,3,1]") != std::string::npos);
  }
  auto big = t.constant(Tensor<double>(Shape{5, 5, 2, 1}));
  CHECK_THROWS_AS(conv2d(x, big, 1, {}), ShapeError);
}

TEST_CASE("transposed_conv2d is the adjoint of conv2d") {
  std::mt19937_64 rng(2);
  struct Case {
    Shape u;
    Shape k;
    int stride;
    Pad2d pad;
  };
  const Case cases[] = {{{1, 4, 4, 1}, {2, 2, 1, 1}, 2, {}},
                        {{2, 7, 7, 3}, {2, 3, 3, 4}, 2, {1, 0, 1, 1}},
                        {{1, 14, 14, 2}, {4, 4, 2, 1}, 4, {0, 2, 0, 2}},
                        {{1, 5, 6, 2}, {3, 3, 2, 2}, 1, {1, 1, 1, 1}}};
  for (const Case& c : cases) {
    Tape<double> t;
    auto u = random_tensor(c.u, rng);
    auto k = random_tensor(c.k, rng);
    auto cu = conv2d(t.constant(u), t.constant(k), c.stride, c.pad).value();
    auto v = random_tensor(cu.shape(), rng);
    auto tv = transposed_conv2d(t.constant(v), t.constant(k), c.stride, c.pad, c.u[1], c.u[2]).value();
    REQUIRE(tv.shape() == u.shape());
    CHECK(std::abs(test::inner(cu, v) - test::inner(u, tv)) < 1e-10);
  }

  Tape<double> t;
  auto one = t.constant(Tensor<double>(Shape{1, 1, 1, 1}, 1.0));
  auto five = t.constant(Tensor<double>(Shape{1, 1, 1, 1}, 5.0));
  CHECK(transposed_conv2d(one, five, 1, {}, 1, 1).item() == 5.0);

  // Delta-kernel round trip: stride-2 up-sample then matched down-sample.
  Tensor<double> delta(Shape{2, 2, 1, 1});
  delta.at({0, 0, 0, 0}) = 1.0;
  auto small = random_tensor(Shape{1, 2, 2, 1}, rng);
  auto up = transposed_conv2d(t.constant(small), t.constant(delta), 2, {}, 4, 4);
  auto down = conv2d(up, t.constant(delta), 2, {});
  CHECK(down.value() == small);

  auto bad = t.constant(Tensor<double>(Shape{1, 3, 3, 1}));
  CHECK_THROWS_AS(transposed_conv2d(bad, t.constant(delta), 2, {}, 4, 4), ShapeError);
}

TEST_CASE("dense examples") {
  Tape<double> t;
  std::mt19937_64 rng(3);
  auto xv = random_tensor(Shape{2, 3}, rng);
  Tensor<double> eye(Shape{3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at({i, i}) = 1.0;
  auto x = t.constant(xv);
  CHECK(dense(x, t.constant(eye), t.constant(Tensor<double>(Shape{3}))).value() == xv);

  Tensor<double> b(Shape{4}, std::vector<double>{1, -2, 3, 0.5});
  auto zero_w = dense(x, t.constant(Tensor<double>(Shape{3, 4})), t.constant(b)).value();
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(zero_w.at({r, c}) == b[c]);

  auto wv = random_tensor(Shape{3, 4}, rng);
  auto got = dense(x, t.constant(wv)).value();
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 4; ++c) {
      double acc = 0;
      for (std::size_t i = 0; i < 3; ++i) acc += xv.at({r, i}) * wv.at({i, c});
      CHECK(std::abs(got.at({r, c}) - acc) < 1e-12);
    }
  CHECK_THROWS_AS(dense(x, t.constant(Tensor<double>(Shape{4, 4}))), ShapeError);
}

TEST_CASE("elementwise and structural examples") {
  Tape<double> t;
  CHECK(sigmoid(t.constant(Tensor<double>::scalar(0.0))).item() == 0.5);

  Tensor<double> rows(Shape{1, 3, 1, 1}, std::vector<double>{1, 2, 3});
  CHECK(downshift(t.constant(rows)).value().storage() == std::vector<double>{0, 1, 2});
  Tensor<double> cols(Shape{1, 1, 3, 1}, std::vector<double>{1, 2, 3});
  CHECK(rightshift(t.constant(cols)).value().storage() == std::vector<double>{0, 1, 2});

  auto a = t.constant(Tensor<double>(Shape{1, 2, 2, 3}));
  auto b = t.constant(Tensor<double>(Shape{1, 2, 2, 5}));
  CHECK(concat<double>({a, b}, -1).shape() == Shape{1, 2, 2, 8});
  CHECK_THROWS_AS(concat<double>({a, t.constant(Tensor<double>(Shape{1, 3, 2, 5}))}, -1), ShapeError);

  CHECK_THROWS_AS(log(t.constant(Tensor<double>::scalar(0.0))), std::domain_error);
  CHECK_THROWS_AS(log(t.constant(Tensor<double>::scalar(-1.0))), std::domain_error);

  auto s = slice(t.constant(Tensor<double>(Shape{2, 5}, std::vector<double>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9})), 1, 1, 2);
  CHECK(s.value().storage() == std::vector<double>{1, 2, 6, 7});

  Tensor<double> row(Shape{3}, std::vector<double>{1, 2, 3});
  auto bc = add(t.constant(Tensor<double>(Shape{2, 3}, 10.0)), t.constant(row)).value();
  CHECK(bc.storage() == std::vector<double>{11, 12, 13, 11, 12, 13});
}

TEST_CASE("log_sum_exp examples") {
  Tape<double> t;
  auto lse = [&](std::vector<double> v) {
    const auto n = v.size();
    return log_sum_exp(t.constant(Tensor<double>(Shape{n}, std::move(v))), 0).item();
  };
  CHECK(lse({0, 0}) == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
  CHECK(lse({1000, 1000}) == doctest::Approx(1000 + std::numbers::ln2).epsilon(1e-15));
  const double ninf = -std::numeric_limits<double>::infinity();
  CHECK(lse({ninf, ninf}) == ninf);
  CHECK(lse({ninf, 0.0}) == 0.0);

  std::mt19937_64 rng(4);
  auto v = random_tensor(Shape{7}, rng, -2, 2);
  double naive = 0;
  for (double e : v.values()) naive += std::exp(e);
  CHECK(std::abs(log_sum_exp(t.constant(v), 0).item() - std::log(naive)) < 1e-12);
}

TEST_CASE("backward examples") {
  Tape<double> t;
  auto x = t.leaf(Tensor<double>::scalar(3.0));
  auto y = t.leaf(Tensor<double>::scalar(4.0));
  auto unused = t.leaf(Tensor<double>(Shape{2}, 7.0));
  t.backward(mul(x, y));
  CHECK(t.grad(x).item() == 4.0);
  CHECK(t.grad(y).item() == 3.0);
  CHECK(t.grad(unused).storage() == std::vector<double>{0, 0});

  Tape<double> t2;
  auto z = t2.leaf(Tensor<double>::scalar(0.0));
  t2.backward(sigmoid(z));
  CHECK(t2.grad(z).item() == 0.25);

  Tape<double> t3;
  auto v = t3.leaf(Tensor<double>(Shape{2}, 1.0));
  CHECK_THROWS_AS(t3.backward(exp(v)), ShapeError);

  // Multiple uses of a node sum their gradients.
  Tape<double> t4;
  auto w = t4.leaf(Tensor<double>::scalar(2.0));
  t4.backward(add(mul(w, w), w));
  CHECK(t4.grad(w).item() == 5.0);
}

TEST_CASE("finite_diff_check examples") {
  std::mt19937_64 rng(5);
  auto quad = finite_diff_check(
      [](Tape<double>&, const std::vector<Var<double>>& p) { return sum(square(p[0])); },
      {random_tensor(Shape{6}, rng)});
  CHECK(quad.max_rel_error < 1e-9);

  auto dense_sig = finite_diff_check(
      [](Tape<double>&, const std::vector<Var<double>>& p) {
        return weighted_sum(sigmoid(dense(p[0], p[1], p[2])), 9);
      },
      {random_tensor(Shape{3, 4}, rng), random_tensor(Shape{4, 5}, rng), random_tensor(Shape{5}, rng)});
  CHECK(dense_sig.max_rel_error < 1e-6);

  auto conv_elu = finite_diff_check(
      [](Tape<double>&, const std::vector<Var<double>>& p) {
        return weighted_sum(elu(conv2d(p[0], p[1], 1, Pad2d{1, 0, 1, 1}, p[2])), 10);
      },
      {random_tensor(Shape{2, 4, 4, 2}, rng), random_tensor(Shape{2, 3, 2, 3}, rng), random_tensor(Shape{3}, rng)});
  CHECK(conv_elu.max_rel_error < 1e-5);
}

TEST_CASE("every differentiable op passes the finite-difference check") {
  using Fn = std::function<Var<double>(const std::vector<Var<double>>&)>;
  struct Case {
    const char* name;
    std::vector<Shape> shapes;
    Fn fn;
    double lo = -1.0, hi = 1.0;
  };
  const std::vector<Case> cases = {
      {"add-broadcast", {{2, 3, 4}, {3, 1}}, [](auto& p) { return add(p[0], p[1]); }},
      {"sub", {{2, 3}, {2, 3}}, [](auto& p) { return sub(p[0], p[1]); }},
      {"mul-broadcast", {{2, 1, 3}, {4, 3}}, [](auto& p) { return mul(p[0], p[1]); }},
      {"scale", {{5}}, [](auto& p) { return scale(p[0], -2.5); }},
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
      {"conv2d-stride2", {{2, 5, 5, 2}, {2, 3, 2, 3}, {3}},
       [](auto& p) { return conv2d(p[0], p[1], 2, Pad2d{1, 0, 1, 1}, p[2]); }},
      {"conv2d-pointwise", {{2, 3, 3, 4}, {1, 1, 4, 2}}, [](auto& p) { return conv2d(p[0], p[1], 1, Pad2d{}); }},
      {"transposed_conv2d", {{1, 4, 4, 3}, {2, 2, 2, 3}, {2}},
       [](auto& p) { return transposed_conv2d(p[0], p[1], 2, Pad2d{0, 1, 0, 1}, 7, 7, p[2]); }},
      {"weight_norm", {{2, 2, 3, 4}, {4}}, [](auto& p) { return weight_norm(p[0], p[1]); }},
  };
  std::mt19937_64 rng(6);
  std::uint64_t seed = 100;
  for (const Case& c : cases) {
    std::vector<Tensor<double>> params;
    for (const Shape& s : c.shapes) params.push_back(random_tensor(s, rng, c.lo, c.hi));
    const std::uint64_t s = seed++;
    auto report = finite_diff_check(
        [&](Tape<double>&, const std::vector<Var<double>>& p) { return weighted_sum(c.fn(p), s); }, params);
    INFO(c.name);
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("shifted maps never expose a pixel to itself or later pixels") {
  // Composing downshift with a causal 2x3 window must leave row 0 blind.
  Tape<double> t;
  std::mt19937_64 rng(8);
  auto x = random_tensor(Shape{1, 4, 4, 1}, rng);
  auto base = downshift(conv2d(t.constant(x), t.constant(Tensor<double>(Shape{2, 3, 1, 1}, 1.0)), 1, Pad2d{1, 0, 1, 1}))
                  .value();
  for (std::size_t r = 0; r < 4; ++r) {
    auto xp = x;
    for (std::size_t c = 0; c < 4; ++c) xp.at({0, r, c, 0}) += 10.0;
    auto pert = downshift(conv2d(t.constant(xp), t.constant(Tensor<double>(Shape{2, 3, 1, 1}, 1.0)), 1,
                                 Pad2d{1, 0, 1, 1}))
                    .value();
    for (std::size_t rr = 0; rr <= r; ++rr)
      for (std::size_t c = 0; c < 4; ++c) CHECK(pert.at({0, rr, c, 0}) == base.at({0, rr, c, 0}));
  }
  // Retained rows of a downshift equal the source rows one above.
  auto d = downshift(t.constant(x)).value();
  for (std::size_t r = 1; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(d.at({0, r, c, 0}) == x.at({0, r - 1, c, 0}));
}

TEST_CASE("tape replay is deterministic") {
  auto run = [] {
    std::mt19937_64 rng(42);
    Tape<double> t;
    auto x = t.leaf(random_tensor(Shape{2, 5, 5, 3}, rng));
    auto k = t.leaf(random_tensor(Shape{3, 3, 3, 4}, rng));
    auto y = sum(elu(conv2d(x, k, 1, Pad2d{1, 1, 1, 1})));
    t.backward(y);
    return std::make_pair(y.item(), t.grad(k));
  };
  auto [a, ga] = run();
  auto [b, gb] = run();
  CHECK(a == b);
  CHECK(ga == gb);
}

TEST_CASE("nodes from different tapes cannot be mixed") {
  Tape<double> t1, t2;
  auto a = t1.leaf(Tensor<double>::scalar(1.0));
  auto b = t2.leaf(Tensor<double>::scalar(1.0));
  CHECK_THROWS_AS(add(a, b), std::logic_error);
}

TEST_CASE("float and double paths agree") {
  std::mt19937_64 rng(12);
  auto xd = random_tensor(Shape{2, 6, 6, 4}, rng);
  auto kd = random_tensor(Shape{2, 3, 4, 8}, rng);
  Tape<double> td;
  Tape<float> tf;
  auto yd = conv2d(td.constant(xd), td.constant(kd), 2, Pad2d{1, 0, 1, 1}).value();
  auto yf = conv2d(tf.constant(xd.cast<float>()), tf.constant(kd.cast<float>()), 2, Pad2d{1, 0, 1, 1}).value();
  for (std::size_t i = 0; i < yd.size(); ++i) CHECK(std::abs(yd[i] - double(yf[i])) < 1e-5);
}

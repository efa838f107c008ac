#include <array>
#include <random>
#include <utility>
#include <vector>

#include "doctest.h"
#include "pvxl/kernels.hpp"

using namespace pvxl::kernels;

namespace {

template <class T>
std::vector<T> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(u(rng));
  return v;
}

// Independent triple-loop oracle in long double.
template <class T>
std::vector<long double> naive(int m, int n, int k, const std::vector<T>& a, bool trans_a, const std::vector<T>& b,
                               const std::vector<T>& c0) {
  std::vector<long double> c(c0.begin(), c0.end());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int p = 0; p < k; ++p) {
        const T av = trans_a ? a[p * m + i] : a[i * k + p];
        c[i * n + j] += static_cast<long double>(av) * b[p * n + j];
      }
  return c;
}

template <class T>
void check_gemm(const KernelTable& kt, double tol) {
  std::mt19937_64 rng(7);
  const std::array<int, 3> shapes[] = {{1, 1, 1}, {6, 16, 5}, {7, 17, 3}, {13, 33, 29}, {12, 64, 384}, {5, 3, 0}, {25, 9, 40}};
  for (auto [m, n, k] : shapes) {
    for (bool trans : {false, true}) {
      auto a = random_vec<T>(static_cast<std::size_t>(m * k), rng);
      auto b = random_vec<T>(static_cast<std::size_t>(k * n), rng);
      auto c = random_vec<T>(static_cast<std::size_t>(m * n), rng);
      auto expect = naive(m, n, k, a, trans, b, c);
      if constexpr (sizeof(T) == 4) {
        (trans ? kt.gemm_tn_f32 : kt.gemm_nn_f32)(m, n, k, a.data(), trans ? m : k, b.data(), n, c.data(), n);
      } else {
        (trans ? kt.gemm_tn_f64 : kt.gemm_nn_f64)(m, n, k, a.data(), trans ? m : k, b.data(), n, c.data(), n);
      }
      for (std::size_t i = 0; i < c.size(); ++i) {
        REQUIRE(static_cast<double>(std::abs(c[i] - expect[i])) <= tol * (1.0 + k));
      }
    }
  }
}

}  // namespace

TEST_CASE("scalar gemm matches the naive oracle") {
  check_gemm<float>(scalar_table(), 1e-6);
  check_gemm<double>(scalar_table(), 1e-14);
}

TEST_CASE("avx2 gemm matches the naive oracle and the scalar reference") {
  if (!isa_available(Isa::avx2)) {
    MESSAGE("AVX2 unavailable; skipping");
    return;
  }
  check_gemm<float>(table(Isa::avx2), 1e-6);
  check_gemm<double>(table(Isa::avx2), 1e-14);

  std::mt19937_64 rng(11);
  const int m = 37, n = 45, k = 70;
  auto a = random_vec<double>(m * k, rng), b = random_vec<double>(k * n, rng);
  std::vector<double> c1(m * n, 0.0), c2(m * n, 0.0);
  scalar_table().gemm_nn_f64(m, n, k, a.data(), k, b.data(), n, c1.data(), n);
  table(Isa::avx2).gemm_nn_f64(m, n, k, a.data(), k, b.data(), n, c2.data(), n);
  for (int i = 0; i < m * n; ++i) CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-12));
}

TEST_CASE("rng8 and bernoulli8 are bit-identical across variants") {
  if (!isa_available(Isa::avx2)) return;
  Rng8 r1, r2;
  seed_rng8(r1, 12345);
  seed_rng8(r2, 12345);
  std::uint32_t o1[8], o2[8];
  for (int step = 0; step < 1000; ++step) {
    scalar_table().rng8_next(r1, o1);
    table(Isa::avx2).rng8_next(r2, o2);
    for (int l = 0; l < 8; ++l) REQUIRE(o1[l] == o2[l]);
  }
  const float p[8] = {0.0f, 0.1f, 0.25f, 0.5f, 0.75f, 0.9f, 1.0f, 0.333f};
  for (int step = 0; step < 1000; ++step) {
    REQUIRE(scalar_table().bernoulli8(r1, p) == table(Isa::avx2).bernoulli8(r2, p));
  }
}

TEST_CASE("bernoulli8 frequencies follow p") {
  Rng8 r;
  seed_rng8(r, 99);
  const float p[8] = {0.0f, 0.1f, 0.25f, 0.5f, 0.75f, 0.9f, 1.0f, 0.333f};
  const int n = 200000;
  int counts[8] = {};
  for (int i = 0; i < n; ++i) {
    const auto mask = active().bernoulli8(r, p);
    for (int l = 0; l < 8; ++l) counts[l] += (mask >> l) & 1u;
  }
  for (int l = 0; l < 8; ++l) {
    const double mean = double(counts[l]) / n;
    const double se = std::sqrt(std::max(p[l] * (1 - p[l]), 1e-12f) / n);
    CHECK(std::abs(mean - p[l]) <= 3 * se + 1e-12);
  }
}

TEST_CASE("rng8 seeding is deterministic and lanes differ") {
  Rng8 a, b;
  seed_rng8(a, 5);
  seed_rng8(b, 5);
  CHECK(a.s == b.s);
  std::uint32_t o[8];
  scalar::rng8_next(a, o);
  int distinct = 0;
  for (int l = 1; l < 8; ++l) distinct += o[l] != o[0];
  CHECK(distinct == 7);
}

TEST_CASE("gibbs_table is bit-identical across variants and to composed bernoulli8") {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<float> unif(0.0f, 1.0f);
  for (auto [m, k] : {std::pair{3, 5}, std::pair{11, 6}, std::pair{13, 14}}) {
    const int vb = (m + 7) / 8, hb = (k + 7) / 8;
    // Lanes past the side's unit count stay at zero.
    std::vector<float> ph((std::size_t{1} << m) * 8 * hb, 0.0f), pv((std::size_t{1} << k) * 8 * vb, 0.0f);
    for (std::size_t v = 0; v < (std::size_t{1} << m); ++v)
      for (int j = 0; j < k; ++j) ph[8 * hb * v + j] = unif(gen);
    for (std::size_t h = 0; h < (std::size_t{1} << k); ++h)
      for (int i = 0; i < m; ++i) pv[8 * vb * h + i] = unif(gen);

    const int chains = 5;
    std::vector<Rng8> ref(chains), r1(chains), r2(chains);
    for (int c = 0; c < chains; ++c) seed_rng8(ref[c], 77 + c);
    r1 = r2 = ref;
    std::vector<std::uint32_t> v0(chains, 5), h0(chains, 0), v1 = v0, h1 = h0, v2 = v0, h2 = h0;
    auto compose = [](Rng8& r, const float* row, int blocks) {
      std::uint32_t bits = 0;
      for (int q = 0; q < blocks; ++q) bits |= scalar::bernoulli8(r, row + 8 * q) << (8 * q);
      return bits;
    };
    for (int round = 0; round < 50; ++round) {
      for (int c = 0; c < chains; ++c)
        for (int t = 0; t < 7; ++t) {
          h0[c] = compose(ref[c], ph.data() + 8 * hb * v0[c], hb);
          v0[c] = compose(ref[c], pv.data() + 8 * vb * h0[c], vb);
        }
      scalar_table().gibbs_table(ph.data(), pv.data(), vb, hb, v1.data(), h1.data(), r1.data(), chains, 7);
      REQUIRE(v1 == v0);
      REQUIRE(h1 == h0);
      if (isa_available(Isa::avx2)) {
        table(Isa::avx2).gibbs_table(ph.data(), pv.data(), vb, hb, v2.data(), h2.data(), r2.data(), chains, 7);
        REQUIRE(v2 == v0);
        REQUIRE(h2 == h0);
      }
    }
    for (int c = 0; c < chains; ++c) {
      CHECK(v1[c] < (1u << m));
      CHECK(h1[c] < (1u << k));
      CHECK(r1[c].s == ref[c].s);
    }
  }
}

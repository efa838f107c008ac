#include "pvxl/kernels.hpp"

namespace pvxl::kernels::scalar {

namespace {

template <class T, bool TransA>
void gemm(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T acc = 0;
      for (int p = 0; p < k; ++p) {
        const T av = TransA ? a[static_cast<long>(p) * lda + i] : a[static_cast<long>(i) * lda + p];
        acc += av * b[static_cast<long>(p) * ldb + j];
      }
      c[static_cast<long>(i) * ldc + j] += acc;
    }
  }
}

inline std::uint32_t rotl(std::uint32_t x, int r) { return (x << r) | (x >> (32 - r)); }

}  // namespace

void gemm_nn_f32(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
                 int ldc) {
  gemm<float, false>(m, n, k, a, lda, b, ldb, c, ldc);
}
void gemm_nn_f64(int m, int n, int k, const double* a, int lda, const double* b, int ldb,
                 double* c, int ldc) {
  gemm<double, false>(m, n, k, a, lda, b, ldb, c, ldc);
}
void gemm_tn_f32(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
                 int ldc) {
  gemm<float, true>(m, n, k, a, lda, b, ldb, c, ldc);
}
void gemm_tn_f64(int m, int n, int k, const double* a, int lda, const double* b, int ldb,
                 double* c, int ldc) {
  gemm<double, true>(m, n, k, a, lda, b, ldb, c, ldc);
}

void rng8_next(Rng8& rng, std::uint32_t* out) {
  auto& s = rng.s;
  for (int l = 0; l < 8; ++l) {
    std::uint32_t s0 = s[l], s1 = s[8 + l], s2 = s[16 + l], s3 = s[24 + l];
    out[l] = s0 + s3;
    const std::uint32_t t = s1 << 9;
    s2 ^= s0;
    s3 ^= s1;
    s1 ^= s2;
    s0 ^= s3;
    s2 ^= t;
    s3 = rotl(s3, 11);
    s[l] = s0;
    s[8 + l] = s1;
    s[16 + l] = s2;
    s[24 + l] = s3;
  }
}

std::uint32_t bernoulli8(Rng8& rng, const float* p) {
  std::uint32_t r[8];
  rng8_next(rng, r);
  std::uint32_t mask = 0;
  for (int l = 0; l < 8; ++l) {
    const float u = static_cast<float>(static_cast<std::int32_t>(r[l] >> 8)) * 0x1p-24f;
    if (u < p[l]) mask |= 1u << l;
  }
  return mask;
}

void gibbs_table(const float* ph, const float* pv, int vb, int hb, std::uint32_t* v,
                 std::uint32_t* h, Rng8* rng, int chains, int n) {
  auto draw = [](Rng8& r, const float* row, int blocks) {
    std::uint32_t bits = 0;
    for (int q = 0; q < blocks; ++q) bits |= bernoulli8(r, row + 8 * q) << (8 * q);
    return bits;
  };
  for (int c = 0; c < chains; ++c) {
    for (int t = 0; t < n; ++t) {
      h[c] = draw(rng[c], ph + 8 * hb * v[c], hb);
      v[c] = draw(rng[c], pv + 8 * vb * h[c], vb);
    }
  }
}

}  // namespace pvxl::kernels::scalar

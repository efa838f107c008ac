// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.

#include <immintrin.h>

#include <algorithm>

#include "pvxl/kernels.hpp"

namespace pvxl::kernels::avx2 {

namespace {

struct F32 {
  using T = float;
  using V = __m256;
  static constexpr int W = 8;
  static V zero() { return _mm256_setzero_ps(); }
  static V set1(T x) { return _mm256_set1_ps(x); }
  static V load(const T* p) { return _mm256_loadu_ps(p); }
  static V maskload(const T* p, __m256i m) { return _mm256_maskload_ps(p, m); }
  static void store(T* p, V v) { _mm256_storeu_ps(p, v); }
  static void maskstore(T* p, __m256i m, V v) { _mm256_maskstore_ps(p, m, v); }
  static V fmadd(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
  static V add(V a, V b) { return _mm256_add_ps(a, b); }
  static __m256i mask(int valid) {
    const __m256i idx = _mm256_setr_epi32(0, 1, 2, 3, 4, 5, 6, 7);
    return _mm256_cmpgt_epi32(_mm256_set1_epi32(valid), idx);
  }
};

struct F64 {
  using T = double;
  using V = __m256d;
  static constexpr int W = 4;
  static V zero() { return _mm256_setzero_pd(); }
  static V set1(T x) { return _mm256_set1_pd(x); }
  static V load(const T* p) { return _mm256_loadu_pd(p); }
  static V maskload(const T* p, __m256i m) { return _mm256_maskload_pd(p, m); }
  static void store(T* p, V v) { _mm256_storeu_pd(p, v); }
  static void maskstore(T* p, __m256i m, V v) { _mm256_maskstore_pd(p, m, v); }
  static V fmadd(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
  static V add(V a, V b) { return _mm256_add_pd(a, b); }
  static __m256i mask(int valid) {
    const __m256i idx = _mm256_setr_epi64x(0, 1, 2, 3);
    return _mm256_cmpgt_epi64(_mm256_set1_epi64x(valid), idx);
  }
};

// MR x (2 * W) register tile. `a` points at the tile's first row (NN) or
// first column (TN).
template <class Tr, int MR, bool TransA>
inline void micro_full(int k, const typename Tr::T* a, int lda, const typename Tr::T* b, int ldb,
                       typename Tr::T* c, int ldc) {
  using V = typename Tr::V;
  V acc0[MR], acc1[MR];
  for (int r = 0; r < MR; ++r) acc0[r] = acc1[r] = Tr::zero();
  for (int p = 0; p < k; ++p) {
    const auto* brow = b + static_cast<long>(p) * ldb;
    const V b0 = Tr::load(brow);
    const V b1 = Tr::load(brow + Tr::W);
    for (int r = 0; r < MR; ++r) {
      const V ar = Tr::set1(TransA ? a[static_cast<long>(p) * lda + r]
                                   : a[static_cast<long>(r) * lda + p]);
      acc0[r] = Tr::fmadd(ar, b0, acc0[r]);
      acc1[r] = Tr::fmadd(ar, b1, acc1[r]);
    }
  }
  for (int r = 0; r < MR; ++r) {
    auto* crow = c + static_cast<long>(r) * ldc;
    Tr::store(crow, Tr::add(Tr::load(crow), acc0[r]));
    Tr::store(crow + Tr::W, Tr::add(Tr::load(crow + Tr::W), acc1[r]));
  }
}

template <class Tr, int MR, bool TransA>
inline void micro_tail(int k, const typename Tr::T* a, int lda, const typename Tr::T* b, int ldb,
                       typename Tr::T* c, int ldc, int ncols) {
  using V = typename Tr::V;
  const __m256i m0 = Tr::mask(std::min(ncols, Tr::W));
  const __m256i m1 = Tr::mask(std::max(0, ncols - Tr::W));
  V acc0[MR], acc1[MR];
  for (int r = 0; r < MR; ++r) acc0[r] = acc1[r] = Tr::zero();
  for (int p = 0; p < k; ++p) {
    const auto* brow = b + static_cast<long>(p) * ldb;
    const V b0 = Tr::maskload(brow, m0);
    const V b1 = Tr::maskload(brow + Tr::W, m1);
    for (int r = 0; r < MR; ++r) {
      const V ar = Tr::set1(TransA ? a[static_cast<long>(p) * lda + r]
                                   : a[static_cast<long>(r) * lda + p]);
      acc0[r] = Tr::fmadd(ar, b0, acc0[r]);
      acc1[r] = Tr::fmadd(ar, b1, acc1[r]);
    }
  }
  for (int r = 0; r < MR; ++r) {
    auto* crow = c + static_cast<long>(r) * ldc;
    Tr::maskstore(crow, m0, Tr::add(Tr::maskload(crow, m0), acc0[r]));
    Tr::maskstore(crow + Tr::W, m1, Tr::add(Tr::maskload(crow + Tr::W, m1), acc1[r]));
  }
}

template <class Tr, int MR, bool TransA>
inline void row_block(int n, int k, const typename Tr::T* a, int lda, const typename Tr::T* b,
                      int ldb, typename Tr::T* c, int ldc) {
  constexpr int NR = 2 * Tr::W;
  int j = 0;
  for (; j + NR <= n; j += NR) micro_full<Tr, MR, TransA>(k, a, lda, b + j, ldb, c + j, ldc);
  if (j < n) micro_tail<Tr, MR, TransA>(k, a, lda, b + j, ldb, c + j, ldc, n - j);
}

template <class Tr, bool TransA>
void gemm(int m, int n, int k, const typename Tr::T* a, int lda, const typename Tr::T* b, int ldb,
          typename Tr::T* c, int ldc) {
  constexpr int MR = 6;
  auto a_at = [&](int i) { return TransA ? a + i : a + static_cast<long>(i) * lda; };
  int i = 0;
  for (; i + MR <= m; i += MR) {
    row_block<Tr, MR, TransA>(n, k, a_at(i), lda, b, ldb, c + static_cast<long>(i) * ldc, ldc);
  }
  for (; i < m; ++i) {
    row_block<Tr, 1, TransA>(n, k, a_at(i), lda, b, ldb, c + static_cast<long>(i) * ldc, ldc);
  }
}

inline __m256i rotl(__m256i x, int r) {
  return _mm256_or_si256(_mm256_slli_epi32(x, r), _mm256_srli_epi32(x, 32 - r));
}

inline __m256i next(Rng8& rng) {
  auto* s = reinterpret_cast<__m256i*>(rng.s.data());
  __m256i s0 = _mm256_load_si256(s);
  __m256i s1 = _mm256_load_si256(s + 1);
  __m256i s2 = _mm256_load_si256(s + 2);
  __m256i s3 = _mm256_load_si256(s + 3);
  const __m256i result = _mm256_add_epi32(s0, s3);
  const __m256i t = _mm256_slli_epi32(s1, 9);
  s2 = _mm256_xor_si256(s2, s0);
  s3 = _mm256_xor_si256(s3, s1);
  s1 = _mm256_xor_si256(s1, s2);
  s0 = _mm256_xor_si256(s0, s3);
  s2 = _mm256_xor_si256(s2, t);
  s3 = rotl(s3, 11);
  _mm256_store_si256(s, s0);
  _mm256_store_si256(s + 1, s1);
  _mm256_store_si256(s + 2, s2);
  _mm256_store_si256(s + 3, s3);
  return result;
}

// Register-resident copy of one Rng8.
struct Lanes {
  __m256i s0, s1, s2, s3;
  explicit Lanes(const Rng8& rng) {
    const auto* s = reinterpret_cast<const __m256i*>(rng.s.data());
    s0 = _mm256_load_si256(s);
    s1 = _mm256_load_si256(s + 1);
    s2 = _mm256_load_si256(s + 2);
    s3 = _mm256_load_si256(s + 3);
  }
  void save(Rng8& rng) const {
    auto* s = reinterpret_cast<__m256i*>(rng.s.data());
    _mm256_store_si256(s, s0);
    _mm256_store_si256(s + 1, s1);
    _mm256_store_si256(s + 2, s2);
    _mm256_store_si256(s + 3, s3);
  }
  std::uint32_t bernoulli(const float* p) {
    const __m256i r = _mm256_add_epi32(s0, s3);
    const __m256i t = _mm256_slli_epi32(s1, 9);
    s2 = _mm256_xor_si256(s2, s0);
    s3 = _mm256_xor_si256(s3, s1);
    s1 = _mm256_xor_si256(s1, s2);
    s0 = _mm256_xor_si256(s0, s3);
    s2 = _mm256_xor_si256(s2, t);
    s3 = rotl(s3, 11);
    const __m256 u = _mm256_mul_ps(_mm256_cvtepi32_ps(_mm256_srli_epi32(r, 8)), _mm256_set1_ps(0x1p-24f));
    return static_cast<std::uint32_t>(_mm256_movemask_ps(_mm256_cmp_ps(u, _mm256_loadu_ps(p), _CMP_LT_OQ)));
  }
};

}  // namespace

void gemm_nn_f32(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
                 int ldc) {
  gemm<F32, false>(m, n, k, a, lda, b, ldb, c, ldc);
}
void gemm_nn_f64(int m, int n, int k, const double* a, int lda, const double* b, int ldb,
                 double* c, int ldc) {
  gemm<F64, false>(m, n, k, a, lda, b, ldb, c, ldc);
}
void gemm_tn_f32(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
                 int ldc) {
  gemm<F32, true>(m, n, k, a, lda, b, ldb, c, ldc);
}
void gemm_tn_f64(int m, int n, int k, const double* a, int lda, const double* b, int ldb,
                 double* c, int ldc) {
  gemm<F64, true>(m, n, k, a, lda, b, ldb, c, ldc);
}

void rng8_next(Rng8& rng, std::uint32_t* out) {
  _mm256_storeu_si256(reinterpret_cast<__m256i*>(out), next(rng));
}

std::uint32_t bernoulli8(Rng8& rng, const float* p) {
  const __m256i r = next(rng);
  const __m256 u =
      _mm256_mul_ps(_mm256_cvtepi32_ps(_mm256_srli_epi32(r, 8)), _mm256_set1_ps(0x1p-24f));
  const __m256 lt = _mm256_cmp_ps(u, _mm256_loadu_ps(p), _CMP_LT_OQ);
  return static_cast<std::uint32_t>(_mm256_movemask_ps(lt));
}

namespace {

template <int VB, int HB>
void gibbs_blocks(const float* ph, const float* pv, std::uint32_t* v, std::uint32_t* h, Rng8* rng,
                  int chains, int n) {
  auto draw = [](Lanes& r, const float* row, int blocks) {
    std::uint32_t bits = r.bernoulli(row);
    if (blocks == 2) bits |= r.bernoulli(row + 8) << 8;
    return bits;
  };
  // Two chains per pass so one chain's table lookup overlaps the other's.
  int c = 0;
  for (; c + 2 <= chains; c += 2) {
    Lanes ra(rng[c]), rb(rng[c + 1]);
    std::uint32_t va = v[c], vb = v[c + 1], ha = h[c], hb = h[c + 1];
    for (int t = 0; t < n; ++t) {
      ha = draw(ra, ph + 8 * HB * va, HB);
      hb = draw(rb, ph + 8 * HB * vb, HB);
      va = draw(ra, pv + 8 * VB * ha, VB);
      vb = draw(rb, pv + 8 * VB * hb, VB);
    }
    ra.save(rng[c]);
    rb.save(rng[c + 1]);
    v[c] = va;
    v[c + 1] = vb;
    h[c] = ha;
    h[c + 1] = hb;
  }
  for (; c < chains; ++c) {
    Lanes r(rng[c]);
    std::uint32_t vv = v[c], hh = h[c];
    for (int t = 0; t < n; ++t) {
      hh = draw(r, ph + 8 * HB * vv, HB);
      vv = draw(r, pv + 8 * VB * hh, VB);
    }
    r.save(rng[c]);
    v[c] = vv;
    h[c] = hh;
  }
}

}  // namespace

void gibbs_table(const float* ph, const float* pv, int vb, int hb, std::uint32_t* v,
                 std::uint32_t* h, Rng8* rng, int chains, int n) {
  if (vb == 1 && hb == 1) return gibbs_blocks<1, 1>(ph, pv, v, h, rng, chains, n);
  if (vb == 1) return gibbs_blocks<1, 2>(ph, pv, v, h, rng, chains, n);
  if (hb == 1) return gibbs_blocks<2, 1>(ph, pv, v, h, rng, chains, n);
  gibbs_blocks<2, 2>(ph, pv, v, h, rng, chains, n);
}

}  // namespace pvxl::kernels::avx2

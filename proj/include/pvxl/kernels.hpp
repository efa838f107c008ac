#pragma once

// Data-parallel inner loops behind the tensor and sampler code.
//
// Every kernel has a portable scalar reference implementation and, when the
// CPU supports it, an AVX2/FMA variant. The variant is chosen once at startup
// (`PVXL_KERNELS=scalar` forces the reference path). The sampling kernels are
// bit-identical across variants; the GEMM variants differ from the reference
// only by FMA rounding.

#include <array>
#include <cstdint>
#include <string_view>

namespace pvxl::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

/// Eight independent xoshiro128+ streams laid out lane-major so one AVX2
/// register holds word `w` of all eight lanes: s[w * 8 + lane].
struct Rng8 {
  alignas(32) std::array<std::uint32_t, 32> s{};
};

/// Seeds all 8 lanes of `rng` from a 64-bit seed via splitmix64.
void seed_rng8(Rng8& rng, std::uint64_t seed);

/// C[M x N] += A[M x K] * B[K x N]; row-major with leading dimensions.
template <class T>
using GemmNN = void (*)(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c,
                        int ldc);
/// C[M x N] += A^T * B where A is stored K x M.
template <class T>
using GemmTN = GemmNN<T>;

struct KernelTable {
  Isa isa;
  GemmNN<float> gemm_nn_f32;
  GemmNN<double> gemm_nn_f64;
  GemmTN<float> gemm_tn_f32;
  GemmTN<double> gemm_tn_f64;
  /// Advances all lanes one step and writes 8 uint32 outputs.
  void (*rng8_next)(Rng8& rng, std::uint32_t* out);
  /// Draws 8 uniforms u_j = (r_j >> 8) * 2^-24 and returns the bit mask of
  /// u_j < p[j]. p must hold 8 floats (pad with 0 for unused lanes).
  std::uint32_t (*bernoulli8)(Rng8& rng, const float* p);
  /// Runs `n` block-Gibbs alternations on each of `chains` chains of an RBM
  /// with at most 16 units per side, given as `vb` / `hb` blocks of 8.
  /// `ph` holds 8*hb right-side probabilities per left bit pattern and `pv`
  /// 8*vb left-side probabilities per right pattern. Each block consumes one
  /// draw of the chain's own Rng8, exactly as bernoulli8 does, so results
  /// do not depend on how chains are grouped.
  void (*gibbs_table)(const float* ph, const float* pv, int vb, int hb, std::uint32_t* v,
                      std::uint32_t* h, Rng8* rng, int chains, int n);
};

const KernelTable& scalar_table();
/// Returns nullptr when the build or the CPU lacks AVX2/FMA.
const KernelTable* avx2_table();
bool isa_available(Isa isa);
const KernelTable& table(Isa isa);

/// The table selected at startup.
const KernelTable& active();
/// Overrides the startup choice (tests use this to compare variants).
void set_active(Isa isa);

template <class T>
inline void gemm_nn(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c,
                    int ldc) {
  if constexpr (sizeof(T) == 4) {
    active().gemm_nn_f32(m, n, k, a, lda, b, ldb, c, ldc);
  } else {
    active().gemm_nn_f64(m, n, k, a, lda, b, ldb, c, ldc);
  }
}

template <class T>
inline void gemm_tn(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c,
                    int ldc) {
  if constexpr (sizeof(T) == 4) {
    active().gemm_tn_f32(m, n, k, a, lda, b, ldb, c, ldc);
  } else {
    active().gemm_tn_f64(m, n, k, a, lda, b, ldb, c, ldc);
  }
}

namespace scalar {
void gemm_nn_f32(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
                 int ldc);
void gemm_nn_f64(int m, int n, int k, const double* a, int lda, const double* b, int ldb,
                 double* c, int ldc);
void gemm_tn_f32(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
                 int ldc);
void gemm_tn_f64(int m, int n, int k, const double* a, int lda, const double* b, int ldb,
                 double* c, int ldc);
void rng8_next(Rng8& rng, std::uint32_t* out);
std::uint32_t bernoulli8(Rng8& rng, const float* p);
void gibbs_table(const float* ph, const float* pv, int vb, int hb, std::uint32_t* v,
                 std::uint32_t* h, Rng8* rng, int chains, int n);
}  // namespace scalar

namespace avx2 {
// Defined only when PVXL_HAVE_AVX2 is set at build time.
void gemm_nn_f32(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
                 int ldc);
void gemm_nn_f64(int m, int n, int k, const double* a, int lda, const double* b, int ldb,
                 double* c, int ldc);
void gemm_tn_f32(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
                 int ldc);
void gemm_tn_f64(int m, int n, int k, const double* a, int lda, const double* b, int ldb,
                 double* c, int ldc);
void rng8_next(Rng8& rng, std::uint32_t* out);
std::uint32_t bernoulli8(Rng8& rng, const float* p);
void gibbs_table(const float* ph, const float* pv, int vb, int hb, std::uint32_t* v,
                 std::uint32_t* h, Rng8* rng, int chains, int n);
}  // namespace avx2

}  // namespace pvxl::kernels

#include "pvxl/kernels.hpp"

#include <cstdlib>
#include <stdexcept>
#include <string>

namespace pvxl::kernels {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr KernelTable kScalar{Isa::scalar,          &scalar::gemm_nn_f32, &scalar::gemm_nn_f64,
                              &scalar::gemm_tn_f32, &scalar::gemm_tn_f64, &scalar::rng8_next,
                              &scalar::bernoulli8, &scalar::gibbs_table};

#ifdef PVXL_HAVE_AVX2
constexpr KernelTable kAvx2{Isa::avx2,          &avx2::gemm_nn_f32, &avx2::gemm_nn_f64,
                            &avx2::gemm_tn_f32, &avx2::gemm_tn_f64, &avx2::rng8_next,
                            &avx2::bernoulli8, &avx2::gibbs_table};
#endif

bool cpu_has_avx2() {
#if defined(PVXL_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* startup_choice() {
  if (const char* env = std::getenv("PVXL_KERNELS")) {
    if (std::string(env) == "scalar") return &kScalar;
  }
  if (const KernelTable* t = avx2_table()) return t;
  return &kScalar;
}

const KernelTable*& current() {
  static const KernelTable* t = startup_choice();
  return t;
}

}  // namespace

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

void seed_rng8(Rng8& rng, std::uint64_t seed) {
  std::uint64_t x = seed;
  for (int i = 0; i < 16; ++i) {
    const std::uint64_t v = splitmix64(x);
    rng.s[2 * i] = static_cast<std::uint32_t>(v);
    rng.s[2 * i + 1] = static_cast<std::uint32_t>(v >> 32);
  }
  // xoshiro must not start from an all-zero lane.
  for (int l = 0; l < 8; ++l) {
    if ((rng.s[l] | rng.s[8 + l] | rng.s[16 + l] | rng.s[24 + l]) == 0) rng.s[l] = 1;
  }
}

const KernelTable& scalar_table() { return kScalar; }

const KernelTable* avx2_table() {
#ifdef PVXL_HAVE_AVX2
  static const bool ok = cpu_has_avx2();
  return ok ? &kAvx2 : nullptr;
#else
  return nullptr;
#endif
}

bool isa_available(Isa isa) { return isa == Isa::scalar || avx2_table() != nullptr; }

const KernelTable& table(Isa isa) {
  if (isa == Isa::scalar) return kScalar;
  if (const KernelTable* t = avx2_table()) return *t;
  throw std::runtime_error("AVX2 kernels are not available on this CPU/build");
}

const KernelTable& active() { return *current(); }

void set_active(Isa isa) { current() = &table(isa); }

}  // namespace pvxl::kernels

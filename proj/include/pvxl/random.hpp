#pragma once

#include <cstdint>
#include <limits>

#include "pvxl/kernels.hpp"

namespace pvxl {

/// Mixes a master seed with a stream index into an independent seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

/// Scalar view of an Rng8: buffers one 8-lane draw and hands out 32-bit
/// words in lane order. Satisfies UniformRandomBitGenerator.
class Rng {
 public:
  using result_type = std::uint32_t;

  explicit Rng(std::uint64_t seed = 0) { kernels::seed_rng8(state_, seed); }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (pos_ == 8) {
      kernels::active().rng8_next(state_, buf_);
      pos_ = 0;
    }
    return buf_[pos_++];
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() {
    const std::uint64_t hi = (*this)(), lo = (*this)();
    return static_cast<double>(((hi << 32) | lo) >> 11) * 0x1p-53;
  }
  /// Uniform on the open interval (0, 1).
  double uniform_open() {
    const std::uint64_t hi = (*this)(), lo = (*this)();
    return (static_cast<double>(((hi << 32) | lo) >> 12) + 0.5) * 0x1p-52;
  }
  double normal();

  /// Raw lane state for the vector samplers. Drops any buffered words so
  /// scalar and vector consumers never share a draw.
  kernels::Rng8& lanes() {
    pos_ = 8;
    return state_;
  }

 private:
  kernels::Rng8 state_;
  std::uint32_t buf_[8]{};
  int pos_ = 8;
};

}  // namespace pvxl

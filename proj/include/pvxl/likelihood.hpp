#pragma once

#include <cstdint>

#include "pvxl/random.hpp"
#include "pvxl/tensor.hpp"

namespace pvxl {

enum class HeadKind { bernoulli, dlm };

/// Per-pixel output distribution.
///
/// Bernoulli: one logit per pixel, single channel, pixels in {0, 1}.
/// Discretized logistic mixture with K components over 8-bit values; per
/// pixel the parameters are laid out as
///   [logits K | means C*K | log-scales C*K | coefficients 3K (C = 3 only)]
/// with channel-major blocks (index c * K + k). Values map to [-1, 1] and
/// each interior bin spans +-1/255 around its center; bins 0 and 255 are
/// open towards -inf and +inf.
struct HeadSpec {
  HeadKind kind = HeadKind::bernoulli;
  int channels = 1;
  int mixtures = 5;

  std::size_t params_per_pixel() const;
  /// Throws std::invalid_argument for unsupported combinations.
  void validate() const;
};

inline constexpr double kMinLogScale = -7.0;

/// Sum over pixels of x log sigmoid(l) + (1 - x) log(1 - sigmoid(l)).
/// logits [B,H,W,1], x bits [B,H,W,1]; returns [B].
template <class T>
Var<T> bernoulli_loglik(const Var<T>& logits, const Tensor<std::uint8_t>& x);

/// Mixture log-likelihood summed over pixels; params [B,H,W,P], x values
/// [B,H,W,C] in 0..255; returns [B].
template <class T>
Var<T> dlm_loglik(const Var<T>& params, const Tensor<std::uint8_t>& x, int mixtures);

/// Dispatches on `head`.
template <class T>
Var<T> pixel_loglik(const HeadSpec& head, const Var<T>& params, const Tensor<std::uint8_t>& x);

/// Exact draws from the per-pixel distribution.
template <class T>
Tensor<std::uint8_t> sample_bernoulli(const Tensor<T>& logits, Rng& rng);
template <class T>
Tensor<std::uint8_t> sample_dlm(const Tensor<T>& params, int channels, int mixtures, Rng& rng);
template <class T>
Tensor<std::uint8_t> sample_pixels(const HeadSpec& head, const Tensor<T>& params, Rng& rng);

/// Draws one pixel's channel values from its parameter block `p`.
template <class T>
void sample_pixel(const HeadSpec& head, const T* p, Rng& rng, std::uint8_t* out);

/// -loglik / (n_dims ln 2).
double bits_per_dimension(double total_loglik_nats, std::size_t n_dims);

}  // namespace pvxl

#pragma once

// Parameterized building blocks. A layer `name` owns either `name.w` or the
// weight-normalized pair `name.v`, `name.g`, plus an optional `name.b`.

#include <string>

#include "pvxl/params.hpp"

namespace pvxl::layers {

struct Init {
  bool weight_norm = true;
  /// Output scale: the norm of each kernel column with weight norm,
  /// otherwise the multiplier on a 1/sqrt(fan_in) draw.
  double gain = 1.0;
  bool bias = true;
};

/// Kernel [kh, kw, cin, cout].
void add_conv(ParamSet<double>& ps, const std::string& name, int kh, int kw, std::size_t cin, std::size_t cout,
              Init init, Rng& rng);
/// Transposed conv mapping cin -> cout; kernel stored as [kh, kw, cout, cin].
void add_tconv(ParamSet<double>& ps, const std::string& name, int kh, int kw, std::size_t cin, std::size_t cout,
               Init init, Rng& rng);
/// Weights [nin, nout].
void add_dense(ParamSet<double>& ps, const std::string& name, std::size_t nin, std::size_t nout, Init init,
               Rng& rng);

template <class T>
Var<T> weights(const Binder<T>& b, const std::string& name);
template <class T>
Var<T> bias(const Binder<T>& b, const std::string& name);

template <class T>
Var<T> conv(const Binder<T>& b, const std::string& name, const Var<T>& x, int stride, Pad2d pad);
template <class T>
Var<T> tconv(const Binder<T>& b, const std::string& name, const Var<T>& x, int stride, Pad2d pad, std::size_t out_h,
             std::size_t out_w);
template <class T>
Var<T> linear(const Binder<T>& b, const std::string& name, const Var<T>& x);
/// 1x1 convolution on an NHWC map.
template <class T>
Var<T> nin(const Binder<T>& b, const std::string& name, const Var<T>& x);

/// Stride 1 keeps the size; stride 2 gives ceil(n / 2). Output (r, c)
/// reads rows <= r (all nearby columns).
template <class T>
Var<T> down_shifted_conv(const Binder<T>& b, const std::string& name, const Var<T>& x, int kh, int kw, int stride);
/// Output (r, c) reads rows <= r and columns <= c.
template <class T>
Var<T> down_right_shifted_conv(const Binder<T>& b, const std::string& name, const Var<T>& x, int kh, int kw,
                               int stride);
/// 2x3 stride-2 transposed conv; input (r, c) writes rows 2r, 2r+1 only.
template <class T>
Var<T> down_shifted_deconv(const Binder<T>& b, const std::string& name, const Var<T>& x, std::size_t out_h,
                           std::size_t out_w);
/// 2x2 stride-2 transposed conv; input (r, c) writes the 2x2 block at (2r, 2c).
template <class T>
Var<T> down_right_shifted_deconv(const Binder<T>& b, const std::string& name, const Var<T>& x, std::size_t out_h,
                                 std::size_t out_w);

}  // namespace pvxl::layers

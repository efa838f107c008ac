#include "layers.hpp"

#include <cmath>

namespace pvxl::layers {

namespace {

void add_kernel(ParamSet<double>& ps, const std::string& name, Shape shape, std::size_t fan_in, Init init,
                Rng& rng) {
  const std::size_t out = shape.back();
  if (init.weight_norm) {
    ps.add(name + ".v", normal_tensor<double>(shape, 0.05, rng));
    ps.add(name + ".g", Tensor<double>(Shape{out}, init.gain));
  } else {
    ps.add(name + ".w", normal_tensor<double>(shape, init.gain / std::sqrt(static_cast<double>(fan_in)), rng));
  }
}

}  // namespace

void add_conv(ParamSet<double>& ps, const std::string& name, int kh, int kw, std::size_t cin, std::size_t cout,
              Init init, Rng& rng) {
  const auto h = static_cast<std::size_t>(kh), w = static_cast<std::size_t>(kw);
  add_kernel(ps, name, Shape{h, w, cin, cout}, h * w * cin, init, rng);
  if (init.bias) ps.add(name + ".b", Tensor<double>(Shape{cout}));
}

void add_tconv(ParamSet<double>& ps, const std::string& name, int kh, int kw, std::size_t cin, std::size_t cout,
               Init init, Rng& rng) {
  const auto h = static_cast<std::size_t>(kh), w = static_cast<std::size_t>(kw);
  add_kernel(ps, name, Shape{h, w, cout, cin}, cin, init, rng);
  if (init.bias) ps.add(name + ".b", Tensor<double>(Shape{cout}));
}

void add_dense(ParamSet<double>& ps, const std::string& name, std::size_t nin, std::size_t nout, Init init,
               Rng& rng) {
  add_kernel(ps, name, Shape{nin, nout}, nin, init, rng);
  if (init.bias) ps.add(name + ".b", Tensor<double>(Shape{nout}));
}

template <class T>
Var<T> weights(const Binder<T>& b, const std::string& name) {
  if (b.has(name + ".w")) return b(name + ".w");
  return weight_norm(b(name + ".v"), b(name + ".g"));
}

template <class T>
Var<T> bias(const Binder<T>& b, const std::string& name) {
  return b.has(name + ".b") ? b(name + ".b") : Var<T>{};
}

template <class T>
Var<T> conv(const Binder<T>& b, const std::string& name, const Var<T>& x, int stride, Pad2d pad) {
  return conv2d(x, weights(b, name), stride, pad, bias(b, name));
}

template <class T>
Var<T> tconv(const Binder<T>& b, const std::string& name, const Var<T>& x, int stride, Pad2d pad, std::size_t out_h,
             std::size_t out_w) {
  return transposed_conv2d(x, weights(b, name), stride, pad, out_h, out_w, bias(b, name));
}

template <class T>
Var<T> linear(const Binder<T>& b, const std::string& name, const Var<T>& x) {
  return dense(x, weights(b, name), bias(b, name));
}

template <class T>
Var<T> nin(const Binder<T>& b, const std::string& name, const Var<T>& x) {
  const Shape& s = x.shape();
  auto flat = reshape(x, Shape{s[0] * s[1] * s[2], s[3]});
  auto y = linear(b, name, flat);
  return reshape(y, Shape{s[0], s[1], s[2], y.dim(1)});
}

template <class T>
Var<T> down_shifted_conv(const Binder<T>& b, const std::string& name, const Var<T>& x, int kh, int kw, int stride) {
  return conv(b, name, x, stride, Pad2d{kh - 1, 0, (kw - 1) / 2, (kw - 1) / 2});
}

template <class T>
Var<T> down_right_shifted_conv(const Binder<T>& b, const std::string& name, const Var<T>& x, int kh, int kw,
                               int stride) {
  return conv(b, name, x, stride, Pad2d{kh - 1, 0, kw - 1, 0});
}

template <class T>
Var<T> down_shifted_deconv(const Binder<T>& b, const std::string& name, const Var<T>& x, std::size_t out_h,
                           std::size_t out_w) {
  const int extra = static_cast<int>(2 * x.dim(1)) - static_cast<int>(out_h);
  return tconv(b, name, x, 2, Pad2d{0, extra, 1, 1}, out_h, out_w);
}

template <class T>
Var<T> down_right_shifted_deconv(const Binder<T>& b, const std::string& name, const Var<T>& x, std::size_t out_h,
                                 std::size_t out_w) {
  const int extra_h = static_cast<int>(2 * x.dim(1)) - static_cast<int>(out_h);
  const int extra_w = static_cast<int>(2 * x.dim(2)) - static_cast<int>(out_w);
  return tconv(b, name, x, 2, Pad2d{0, extra_h, 0, extra_w}, out_h, out_w);
}

#define PVXL_INSTANTIATE_LAYERS(T)                                                                               \
  template Var<T> weights<T>(const Binder<T>&, const std::string&);                                              \
  template Var<T> bias<T>(const Binder<T>&, const std::string&);                                                 \
  template Var<T> conv<T>(const Binder<T>&, const std::string&, const Var<T>&, int, Pad2d);                      \
  template Var<T> tconv<T>(const Binder<T>&, const std::string&, const Var<T>&, int, Pad2d, std::size_t,          \
                           std::size_t);                                                                         \
  template Var<T> linear<T>(const Binder<T>&, const std::string&, const Var<T>&);                                \
  template Var<T> nin<T>(const Binder<T>&, const std::string&, const Var<T>&);                                   \
  template Var<T> down_shifted_conv<T>(const Binder<T>&, const std::string&, const Var<T>&, int, int, int);      \
  template Var<T> down_right_shifted_conv<T>(const Binder<T>&, const std::string&, const Var<T>&, int, int, int); \
  template Var<T> down_shifted_deconv<T>(const Binder<T>&, const std::string&, const Var<T>&, std::size_t,       \
                                         std::size_t);                                                           \
  template Var<T> down_right_shifted_deconv<T>(const Binder<T>&, const std::string&, const Var<T>&, std::size_t, \
                                               std::size_t);

PVXL_INSTANTIATE_LAYERS(float)
PVXL_INSTANTIATE_LAYERS(double)

}  // namespace pvxl::layers

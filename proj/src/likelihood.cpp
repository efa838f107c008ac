#include "pvxl/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace pvxl {

namespace {

constexpr double kHalfBin = 1.0 / 255.0;

template <class T>
Var<T> per_sample_sum(const Var<T>& x) {
  const std::size_t b = x.dim(0);
  return sum_axis(reshape(x, Shape{b, x.size() / b}), 1);
}

// log P(bin) for a logistic with the given centered value and inverse scale.
template <class T>
Var<T> bin_log_prob(const Var<T>& centered, const Var<T>& inv_scale, const Tensor<T>& low_edge,
                    const Tensor<T>& high_edge, const Tensor<T>& interior) {
  Tape<T>& tape = centered.tape();
  auto plus = mul(inv_scale, add_scalar(centered, kHalfBin));
  auto minus = mul(inv_scale, add_scalar(centered, -kHalfBin));
  // log(sigmoid(b) - sigmoid(a)) = b + log(1 - e^(a - b)) - softplus(a) - softplus(b)
  auto width = mul(inv_scale, tape.constant(Tensor<T>(Shape{}, T(2 * kHalfBin))));
  auto mid = sub(sub(add(plus, log1mexp(width)), softplus(minus)), softplus(plus));
  auto lo = log_sigmoid(plus);
  auto hi = neg(softplus(minus));
  return add(add(mul(lo, tape.constant(low_edge)), mul(hi, tape.constant(high_edge))),
             mul(mid, tape.constant(interior)));
}

template <class T>
T logistic_sigmoid(T x) {
  return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

std::uint8_t to_bin(double x) {
  const double v = std::nearbyint((x + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

double bin_center(std::uint8_t v) { return 2.0 * v / 255.0 - 1.0; }

}  // namespace

std::size_t HeadSpec::params_per_pixel() const {
  if (kind == HeadKind::bernoulli) return 1;
  return channels == 1 ? 3 * static_cast<std::size_t>(mixtures) : 10 * static_cast<std::size_t>(mixtures);
}

void HeadSpec::validate() const {
  if (kind == HeadKind::bernoulli && channels != 1) throw std::invalid_argument("Bernoulli head is single-channel");
  if (channels != 1 && channels != 3) throw std::invalid_argument("images must have 1 or 3 channels");
  if (kind == HeadKind::dlm && mixtures < 1) throw std::invalid_argument("mixture needs at least one component");
}

template <class T>
Var<T> bernoulli_loglik(const Var<T>& logits, const Tensor<std::uint8_t>& x) {
  if (logits.shape() != x.shape()) {
    throw ShapeError("bernoulli_loglik: logits " + shape_str(logits.shape()) + " vs pixels " + shape_str(x.shape()));
  }
  Tensor<T> xf(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] > 1) throw std::invalid_argument("bernoulli_loglik needs binary pixels, got " + std::to_string(x[i]));
    xf[i] = static_cast<T>(x[i]);
  }
  auto terms = sub(mul(logits, logits.tape().constant(std::move(xf))), softplus(logits));
  return per_sample_sum(terms);
}

template <class T>
Var<T> dlm_loglik(const Var<T>& params, const Tensor<std::uint8_t>& x, int mixtures) {
  const std::size_t kk = static_cast<std::size_t>(mixtures);
  if (x.rank() != 4 || params.value().rank() != 4) throw ShapeError("dlm_loglik expects NHWC tensors");
  const std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  HeadSpec spec{HeadKind::dlm, static_cast<int>(c), mixtures};
  spec.validate();
  if (params.shape() != Shape{b, h, w, spec.params_per_pixel()}) {
    throw ShapeError("dlm_loglik: params " + shape_str(params.shape()) + " do not match pixels " + shape_str(x.shape()) +
                     " with " + std::to_string(mixtures) + " components");
  }
  Tape<T>& tape = params.tape();
  Tensor<T> xv(Shape{b, h, w, c, 1}), low(Shape{b, h, w, c, 1}), high(Shape{b, h, w, c, 1}), mid(Shape{b, h, w, c, 1});
  for (std::size_t i = 0; i < x.size(); ++i) {
    xv[i] = static_cast<T>(bin_center(x[i]));
    low[i] = x[i] == 0;
    high[i] = x[i] == 255;
    mid[i] = x[i] != 0 && x[i] != 255;
  }
  auto logits = slice(params, 3, 0, kk);
  auto means = reshape(slice(params, 3, kk, c * kk), Shape{b, h, w, c, kk});
  auto log_scales = clamp_min(reshape(slice(params, 3, (c + 1) * kk, c * kk), Shape{b, h, w, c, kk}), kMinLogScale);
  auto xs = tape.constant(xv);
  if (c == 3) {
    auto coeffs = tanh(reshape(slice(params, 3, 7 * kk, 3 * kk), Shape{b, h, w, 3, kk}));
    auto chan = [&](const Var<T>& t, std::size_t i) { return slice(t, 3, i, 1); };
    auto xr = chan(xs, 0), xg = chan(xs, 1);
    auto mg = add(chan(means, 1), mul(chan(coeffs, 0), xr));
    auto mb = add(add(chan(means, 2), mul(chan(coeffs, 1), xr)), mul(chan(coeffs, 2), xg));
    means = concat<T>({chan(means, 0), mg, mb}, 3);
  }
  auto centered = sub(xs, means);
  auto lp = bin_log_prob(centered, exp(neg(log_scales)), low, high, mid);
  auto per_component = sum_axis(lp, 3);  // [B,H,W,K]
  auto log_mix = sub(logits, reshape(log_sum_exp(logits, 3), Shape{b, h, w, 1}));
  auto per_pixel = log_sum_exp(add(per_component, log_mix), 3);
  return per_sample_sum(per_pixel);
}

template <class T>
Var<T> pixel_loglik(const HeadSpec& head, const Var<T>& params, const Tensor<std::uint8_t>& x) {
  head.validate();
  if (head.kind == HeadKind::bernoulli) return bernoulli_loglik(params, x);
  return dlm_loglik(params, x, head.mixtures);
}

template <class T>
void sample_pixel(const HeadSpec& head, const T* p, Rng& rng, std::uint8_t* out) {
  if (head.kind == HeadKind::bernoulli) {
    out[0] = rng.uniform() < logistic_sigmoid(static_cast<double>(p[0]));
    return;
  }
  const int kk = head.mixtures, c = head.channels;
  // Component by inverse CDF of the softmax.
  double mx = -INFINITY;
  for (int k = 0; k < kk; ++k) mx = std::max(mx, static_cast<double>(p[k]));
  double total = 0;
  for (int k = 0; k < kk; ++k) total += std::exp(p[k] - mx);
  double u = rng.uniform() * total;
  int comp = kk - 1;
  for (int k = 0; k < kk; ++k) {
    u -= std::exp(p[k] - mx);
    if (u < 0) {
      comp = k;
      break;
    }
  }
  const T* means = p + kk;
  const T* log_scales = p + kk + c * kk;
  const T* coeffs = p + kk + 2 * c * kk;
  double xr = 0, xg = 0;
  for (int ch = 0; ch < c; ++ch) {
    double m = means[ch * kk + comp];
    if (ch == 1) m += std::tanh(static_cast<double>(coeffs[comp])) * xr;
    if (ch == 2) m += std::tanh(static_cast<double>(coeffs[kk + comp])) * xr + std::tanh(static_cast<double>(coeffs[2 * kk + comp])) * xg;
    const double s = std::exp(std::max(static_cast<double>(log_scales[ch * kk + comp]), kMinLogScale));
    const double v = rng.uniform_open();
    const std::uint8_t bin = to_bin(m + s * (std::log(v) - std::log1p(-v)));
    out[ch] = bin;
    // Later channels condition on the discretized value, as the likelihood does.
    (ch == 0 ? xr : xg) = bin_center(bin);
  }
}

template <class T>
Tensor<std::uint8_t> sample_pixels(const HeadSpec& head, const Tensor<T>& params, Rng& rng) {
  head.validate();
  if (params.rank() != 4 || params.dim(3) != head.params_per_pixel()) {
    throw ShapeError("sample_pixels: params " + shape_str(params.shape()) + " do not match the head");
  }
  const std::size_t n = params.dim(0) * params.dim(1) * params.dim(2);
  const std::size_t c = static_cast<std::size_t>(head.channels), pp = head.params_per_pixel();
  Tensor<std::uint8_t> out(Shape{params.dim(0), params.dim(1), params.dim(2), c});
  for (std::size_t i = 0; i < n; ++i) sample_pixel(head, params.data() + i * pp, rng, out.data() + i * c);
  return out;
}

template <class T>
Tensor<std::uint8_t> sample_bernoulli(const Tensor<T>& logits, Rng& rng) {
  return sample_pixels(HeadSpec{HeadKind::bernoulli, 1, 1}, logits, rng);
}

template <class T>
Tensor<std::uint8_t> sample_dlm(const Tensor<T>& params, int channels, int mixtures, Rng& rng) {
  return sample_pixels(HeadSpec{HeadKind::dlm, channels, mixtures}, params, rng);
}

double bits_per_dimension(double total_loglik_nats, std::size_t n_dims) {
  if (n_dims == 0) throw std::invalid_argument("bits_per_dimension needs a positive dimension count");
  return -total_loglik_nats / (static_cast<double>(n_dims) * std::numbers::ln2);
}

#define PVXL_INSTANTIATE_LIK(T)                                                                  \
  template Var<T> bernoulli_loglik<T>(const Var<T>&, const Tensor<std::uint8_t>&);               \
  template Var<T> dlm_loglik<T>(const Var<T>&, const Tensor<std::uint8_t>&, int);                \
  template Var<T> pixel_loglik<T>(const HeadSpec&, const Var<T>&, const Tensor<std::uint8_t>&);  \
  template void sample_pixel<T>(const HeadSpec&, const T*, Rng&, std::uint8_t*);                 \
  template Tensor<std::uint8_t> sample_pixels<T>(const HeadSpec&, const Tensor<T>&, Rng&);       \
  template Tensor<std::uint8_t> sample_bernoulli<T>(const Tensor<T>&, Rng&);                     \
  template Tensor<std::uint8_t> sample_dlm<T>(const Tensor<T>&, int, int, Rng&);

PVXL_INSTANTIATE_LIK(float)
PVXL_INSTANTIATE_LIK(double)

}  // namespace pvxl

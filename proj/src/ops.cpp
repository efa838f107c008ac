#include <algorithm>
#include <cmath>
#include <limits>
#include <type_traits>

#include "pvxl/kernels.hpp"
#include "pvxl/tensor.hpp"

namespace pvxl {

namespace {

int norm_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return a;
}

// [outer, n, inner] view around `axis`.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  r.n = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <class T>
Tape<T>& tape_of(const Var<T>& x) {
  return x.tape();
}

// ----------------------------------------------------------------------------
// Elementwise unary helper: f(x) and df(x, y) = dy/dx.

template <class T, class F, class DF>
Var<T> unary(const Var<T>& x, F f, DF df) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const NodeId xi = x.id();
  return tape_of(x).record(std::move(out), {x}, [xi, df](Tape<T>& t, NodeId self) {
    if (!t.requires_grad(xi)) return;
    const Tensor<T>& g = t.grad_slot(self);
    const Tensor<T>& xv = t.value(xi);
    const Tensor<T>& yv = t.value(self);
    Tensor<T>& gx = t.grad_slot(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], yv[i]);
  });
}

template <class T>
T stable_sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
T stable_softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

// ----------------------------------------------------------------------------
// Broadcasting.

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `s` viewed in `out`'s rank, zero on broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& s, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> st(r, 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const std::size_t i = s.size() - 1 - k;
    const std::size_t o = r - 1 - k;
    st[o] = s[i] == 1 ? 0 : stride;
    stride *= s[i];
  }
  return st;
}

// Calls fn(out_index, a_offset, b_offset) for every output element.
template <class Fn>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, Fn fn) {
  const std::size_t n = shape_numel(out);
  if (n == 0) return;
  const std::size_t r = out.size();
  if (r == 0) {
    fn(0, 0, 0);
    return;
  }
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0;
  const std::size_t last = out[r - 1];
  const std::size_t la = sa[r - 1], lb = sb[r - 1];
  for (std::size_t i = 0; i < n; i += last) {
    for (std::size_t j = 0; j < last; ++j) fn(i + j, oa + j * la, ob + j * lb);
    for (long d = static_cast<long>(r) - 2; d >= 0; --d) {
      const auto du = static_cast<std::size_t>(d);
      ++idx[du];
      oa += sa[du];
      ob += sb[du];
      if (idx[du] < out[du]) break;
      oa -= sa[du] * out[du];
      ob -= sb[du] * out[du];
      idx[du] = 0;
    }
  }
}

enum class BinKind { add, sub, mul };

template <class T>
Var<T> binary(const Var<T>& a, const Var<T>& b, BinKind kind) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const NodeId ai = a.id(), bi = b.id();
  if (av.shape() == bv.shape()) {
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = kind == BinKind::add ? av[i] + bv[i] : kind == BinKind::sub ? av[i] - bv[i] : av[i] * bv[i];
    }
    return tape_of(a).record(std::move(out), {a, b}, [ai, bi, kind](Tape<T>& t, NodeId self) {
      const Tensor<T>& g = t.grad_slot(self);
      if (t.requires_grad(ai)) {
        Tensor<T>& ga = t.grad_slot(ai);
        if (kind == BinKind::mul) {
          const Tensor<T>& bv = t.value(bi);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
      }
      if (t.requires_grad(bi)) {
        Tensor<T>& gb = t.grad_slot(bi);
        if (kind == BinKind::mul) {
          const Tensor<T>& av = t.value(ai);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        } else if (kind == BinKind::sub) {
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
      }
    });
  }
  const Shape os = broadcast_shape(av.shape(), bv.shape());
  auto sa = broadcast_strides(av.shape(), os);
  auto sb = broadcast_strides(bv.shape(), os);
  Tensor<T> out(os);
  for_each_broadcast(os, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    out[i] = kind == BinKind::add ? av[ia] + bv[ib] : kind == BinKind::sub ? av[ia] - bv[ib] : av[ia] * bv[ib];
  });
  return tape_of(a).record(std::move(out), {a, b}, [ai, bi, kind, os, sa, sb](Tape<T>& t, NodeId self) {
    const Tensor<T>& g = t.grad_slot(self);
    const Tensor<T>& av = t.value(ai);
    const Tensor<T>& bv = t.value(bi);
    const bool ra = t.requires_grad(ai), rb = t.requires_grad(bi);
    Tensor<T>* ga = ra ? &t.grad_slot(ai) : nullptr;
    Tensor<T>* gb = rb ? &t.grad_slot(bi) : nullptr;
    for_each_broadcast(os, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      if (ga) (*ga)[ia] += kind == BinKind::mul ? g[i] * bv[ib] : g[i];
      if (gb) (*gb)[ib] += kind == BinKind::mul ? g[i] * av[ia] : kind == BinKind::sub ? -g[i] : g[i];
    });
  });
}

// ----------------------------------------------------------------------------
// im2col / col2im for NHWC convolution geometry.

struct ConvGeom {
  std::size_t batch, h, w, cin, kh, kw, cout, oh, ow;
  int stride;
  Pad2d pad;
  std::size_t rows() const { return batch * oh * ow; }
  std::size_t cols() const { return kh * kw * cin; }
  bool is_pointwise() const {
    return kh == 1 && kw == 1 && stride == 1 && pad.top == 0 && pad.bottom == 0 && pad.left == 0 &&
           pad.right == 0;
  }
};

template <class T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const std::size_t R = g.cols();
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        T* row = col + ((b * g.oh + oy) * g.ow + ox) * R;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad.top + static_cast<long>(ky);
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad.left + static_cast<long>(kx);
            T* dst = row + (ky * g.kw + kx) * g.cin;
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.h) || ix >= static_cast<long>(g.w)) {
              std::fill(dst, dst + g.cin, T(0));
            } else {
              const T* src = x + ((b * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)) * g.cin;
              std::copy(src, src + g.cin, dst);
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, const ConvGeom& g, T* x) {
  const std::size_t R = g.cols();
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        const T* row = col + ((b * g.oh + oy) * g.ow + ox) * R;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad.top + static_cast<long>(ky);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad.left + static_cast<long>(kx);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            const T* src = row + (ky * g.kw + kx) * g.cin;
            T* dst = x + ((b * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)) * g.cin;
            for (std::size_t c = 0; c < g.cin; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

// Transposes a row-major [rows x cols] matrix.
template <class T>
std::vector<T> transpose(const T* a, std::size_t rows, std::size_t cols) {
  std::vector<T> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = a[r * cols + c];
  }
  return t;
}

// "Image" view: x[B,H,W,C] for the conv input side.
ConvGeom make_geom(const Shape& xs, const Shape& ks, int stride, Pad2d pad, const char* op) {
  if (xs.size() != 4) throw ShapeError(std::string(op) + ": input must be [B,H,W,C], got " + shape_str(xs));
  if (ks.size() != 4) throw ShapeError(std::string(op) + ": kernel must be [kh,kw,Cin,Cout], got " + shape_str(ks));
  ConvGeom g{};
  g.batch = xs[0];
  g.h = xs[1];
  g.w = xs[2];
  g.cin = xs[3];
  g.kh = ks[0];
  g.kw = ks[1];
  g.cout = ks[3];
  g.stride = stride;
  g.pad = pad;
  if (ks[2] != g.cin) {
    throw ShapeError(std::string(op) + ": input " + shape_str(xs) + " incompatible with kernel " + shape_str(ks));
  }
  g.oh = conv_out_extent(g.h, static_cast<int>(g.kh), stride, pad.top, pad.bottom);
  g.ow = conv_out_extent(g.w, static_cast<int>(g.kw), stride, pad.left, pad.right);
  return g;
}

template <class T>
void check_bias(const Var<T>& bias, std::size_t n, const char* op) {
  if (bias.valid() && (bias.shape().size() != 1 || bias.shape()[0] != n)) {
    throw ShapeError(std::string(op) + ": bias shape " + shape_str(bias.shape()) + " expected [" +
                     std::to_string(n) + "]");
  }
}

template <class T>
void add_bias(Tensor<T>& out, const Tensor<T>& bias) {
  const std::size_t c = bias.size();
  for (std::size_t i = 0; i < out.size(); i += c) {
    for (std::size_t j = 0; j < c; ++j) out[i + j] += bias[j];
  }
}

template <class T>
void accumulate_bias_grad(const Tensor<T>& g, Tensor<T>& gb) {
  const std::size_t c = gb.size();
  for (std::size_t i = 0; i < g.size(); i += c) {
    for (std::size_t j = 0; j < c; ++j) gb[j] += g[i + j];
  }
}

}  // namespace

// ----------------------------------------------------------------------------
// Structural ops.

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const NodeId xi = x.id();
  return tape_of(x).record(std::move(out), {x}, [xi](Tape<T>& t, NodeId self) {
    const Tensor<T>& g = t.grad_slot(self);
    Tensor<T>& gx = t.grad_slot(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <class T>
Var<T> concat(std::span<const Var<T>> xs, int axis) {
  if (xs.empty()) throw ShapeError("concat of zero tensors");
  const Shape& s0 = xs[0].shape();
  const int a = norm_axis(axis, s0.size());
  Shape os = s0;
  os[static_cast<std::size_t>(a)] = 0;
  std::vector<NodeId> ids;
  std::vector<std::size_t> widths;
  for (const Var<T>& x : xs) {
    const Shape& s = x.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == static_cast<std::size_t>(a) || s[d] == s0[d];
    if (!ok) throw ShapeError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(s0));
    os[static_cast<std::size_t>(a)] += s[static_cast<std::size_t>(a)];
    ids.push_back(x.id());
  }
  const AxisSplit sp = split_at(os, a);
  for (const Var<T>& x : xs) widths.push_back(x.shape()[static_cast<std::size_t>(a)] * sp.inner);
  const std::size_t row = sp.n * sp.inner;
  Tensor<T> out(os);
  std::size_t col = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Tensor<T>& v = xs[k].value();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy(v.data() + o * widths[k], v.data() + (o + 1) * widths[k], out.data() + o * row + col);
    }
    col += widths[k];
  }
  return tape_of(xs[0]).record(std::move(out), xs, [ids, widths, sp, row](Tape<T>& t, NodeId self) {
    const Tensor<T>& g = t.grad_slot(self);
    std::size_t col = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) {
        Tensor<T>& gx = t.grad_slot(ids[k]);
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const T* src = g.data() + o * row + col;
          T* dst = gx.data() + o * widths[k];
          for (std::size_t i = 0; i < widths[k]; ++i) dst[i] += src[i];
        }
      }
      col += widths[k];
    }
  });
}

template <class T>
Var<T> concat(std::initializer_list<Var<T>> xs, int axis) {
  return concat<T>(std::span<const Var<T>>(xs.begin(), xs.size()), axis);
}

template <class T>
Var<T> slice(const Var<T>& x, int axis, std::size_t start, std::size_t len) {
  const Shape& s = x.shape();
  const int a = norm_axis(axis, s.size());
  if (start + len > s[static_cast<std::size_t>(a)]) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") out of range for axis " + std::to_string(a) + " of " + shape_str(s));
  }
  const AxisSplit sp = split_at(s, a);
  Shape os = s;
  os[static_cast<std::size_t>(a)] = len;
  Tensor<T> out(os);
  const std::size_t w = len * sp.inner, row = sp.n * sp.inner, off = start * sp.inner;
  const Tensor<T>& v = x.value();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy(v.data() + o * row + off, v.data() + o * row + off + w, out.data() + o * w);
  }
  const NodeId xi = x.id();
  return tape_of(x).record(std::move(out), {x}, [xi, sp, w, row, off](Tape<T>& t, NodeId self) {
    const Tensor<T>& g = t.grad_slot(self);
    Tensor<T>& gx = t.grad_slot(xi);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < w; ++i) gx[o * row + off + i] += g[o * w + i];
    }
  });
}

namespace {

// Shift by one along axis 1 (rows) or 2 (columns) of an NHWC tensor.
template <class T>
Var<T> shift(const Var<T>& x, int axis) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("shift expects [B,H,W,C], got " + shape_str(s));
  const AxisSplit sp = split_at(s, axis);
  const Tensor<T>& v = x.value();
  Tensor<T> out(s);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    const std::size_t base = o * sp.n * sp.inner;
    for (std::size_t k = 1; k < sp.n; ++k) {
      std::copy(v.data() + base + (k - 1) * sp.inner, v.data() + base + k * sp.inner,
                out.data() + base + k * sp.inner);
    }
  }
  const NodeId xi = x.id();
  return tape_of(x).record(std::move(out), {x}, [xi, sp](Tape<T>& t, NodeId self) {
    const Tensor<T>& g = t.grad_slot(self);
    Tensor<T>& gx = t.grad_slot(xi);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      const std::size_t base = o * sp.n * sp.inner;
      for (std::size_t k = 1; k < sp.n; ++k) {
        for (std::size_t i = 0; i < sp.inner; ++i) gx[base + (k - 1) * sp.inner + i] += g[base + k * sp.inner + i];
      }
    }
  });
}

}  // namespace

template <class T>
Var<T> downshift(const Var<T>& x) {
  return shift(x, 1);
}

template <class T>
Var<T> rightshift(const Var<T>& x) {
  return shift(x, 2);
}

template <class T>
Var<T> detach(const Var<T>& x) {
  return tape_of(x).constant(x.value());
}

// ----------------------------------------------------------------------------
// Arithmetic.

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return binary(a, b, BinKind::add);
}
template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return binary(a, b, BinKind::sub);
}
template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return binary(a, b, BinKind::mul);
}

template <class T>
Var<T> scale(const Var<T>& x, double c) {
  const T k = static_cast<T>(c);
  return unary(x, [k](T v) { return k * v; }, [k](T, T) { return k; });
}

template <class T>
Var<T> add_scalar(const Var<T>& x, double c) {
  const T k = static_cast<T>(c);
  return unary(x, [k](T v) { return v + k; }, [](T, T) { return T(1); });
}

template <class T>
Var<T> neg(const Var<T>& x) {
  return scale(x, -1.0);
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  return unary(x, [](T v) { return stable_sigmoid(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> tanh(const Var<T>& x) {
  return unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var<T> elu(const Var<T>& x) {
  return unary(
      x, [](T v) { return v > 0 ? v : std::expm1(v); }, [](T v, T y) { return v > 0 ? T(1) : y + T(1); });
}

template <class T>
Var<T> exp(const Var<T>& x) {
  return unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Var<T> log(const Var<T>& x) {
  if constexpr (std::is_same_v<T, double>) {
    for (double v : x.value().values()) {
      if (!(v > 0)) throw std::domain_error("log of non-positive value " + std::to_string(v));
    }
  }
  return unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <class T>
Var<T> softplus(const Var<T>& x) {
  return unary(x, [](T v) { return stable_softplus(v); }, [](T v, T) { return stable_sigmoid(v); });
}

template <class T>
Var<T> log_sigmoid(const Var<T>& x) {
  return unary(x, [](T v) { return -stable_softplus(-v); }, [](T v, T) { return stable_sigmoid(-v); });
}

template <class T>
Var<T> log1mexp(const Var<T>& x) {
  return unary(
      x,
      [](T d) {
        return d < T(0.6931471805599453) ? std::log(-std::expm1(-d)) : std::log1p(-std::exp(-d));
      },
      [](T d, T) { return T(1) / std::expm1(d); });
}

template <class T>
Var<T> clamp_min(const Var<T>& x, double lo) {
  const T l = static_cast<T>(lo);
  return unary(x, [l](T v) { return v < l ? l : v; }, [l](T v, T) { return v < l ? T(0) : T(1); });
}

template <class T>
Var<T> square(const Var<T>& x) {
  return unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <class T>
Var<T> concat_elu(const Var<T>& x) {
  return elu(concat<T>({x, neg(x)}, -1));
}

// ----------------------------------------------------------------------------
// Reductions.

template <class T>
Var<T> sum(const Var<T>& x) {
  const Tensor<T>& v = x.value();
  double acc = 0;
  for (T e : v.values()) acc += static_cast<double>(e);
  const NodeId xi = x.id();
  return tape_of(x).record(Tensor<T>::scalar(static_cast<T>(acc)), {x}, [xi](Tape<T>& t, NodeId self) {
    const T g = t.grad_slot(self)[0];
    Tensor<T>& gx = t.grad_slot(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

template <class T>
Var<T> mean(const Var<T>& x) {
  const std::size_t n = x.size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

template <class T>
Var<T> sum_axis(const Var<T>& x, int axis) {
  const Shape& s = x.shape();
  const int a = norm_axis(axis, s.size());
  const AxisSplit sp = split_at(s, a);
  Shape os = s;
  os.erase(os.begin() + a);
  Tensor<T> out(os);
  const Tensor<T>& v = x.value();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t k = 0; k < sp.n; ++k) {
      const T* src = v.data() + (o * sp.n + k) * sp.inner;
      T* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  }
  const NodeId xi = x.id();
  return tape_of(x).record(std::move(out), {x}, [xi, sp](Tape<T>& t, NodeId self) {
    const Tensor<T>& g = t.grad_slot(self);
    Tensor<T>& gx = t.grad_slot(xi);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t k = 0; k < sp.n; ++k) {
        for (std::size_t i = 0; i < sp.inner; ++i) gx[(o * sp.n + k) * sp.inner + i] += g[o * sp.inner + i];
      }
    }
  });
}

template <class T>
Var<T> log_sum_exp(const Var<T>& x, int axis) {
  const Shape& s = x.shape();
  const int a = norm_axis(axis, s.size());
  const AxisSplit sp = split_at(s, a);
  Shape os = s;
  os.erase(os.begin() + a);
  Tensor<T> out(os);
  const Tensor<T>& v = x.value();
  constexpr T ninf = -std::numeric_limits<T>::infinity();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      T m = ninf;
      for (std::size_t k = 0; k < sp.n; ++k) m = std::max(m, v[(o * sp.n + k) * sp.inner + i]);
      if (m == ninf) {
        out[o * sp.inner + i] = ninf;
        continue;
      }
      T acc = 0;
      for (std::size_t k = 0; k < sp.n; ++k) acc += std::exp(v[(o * sp.n + k) * sp.inner + i] - m);
      out[o * sp.inner + i] = m + std::log(acc);
    }
  }
  const NodeId xi = x.id();
  return tape_of(x).record(std::move(out), {x}, [xi, sp](Tape<T>& t, NodeId self) {
    const Tensor<T>& g = t.grad_slot(self);
    const Tensor<T>& y = t.value(self);
    const Tensor<T>& v = t.value(xi);
    Tensor<T>& gx = t.grad_slot(xi);
    constexpr T ninf = -std::numeric_limits<T>::infinity();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const T yi = y[o * sp.inner + i];
        if (yi == ninf) continue;
        const T gi = g[o * sp.inner + i];
        for (std::size_t k = 0; k < sp.n; ++k) {
          const std::size_t idx = (o * sp.n + k) * sp.inner + i;
          gx[idx] += gi * std::exp(v[idx] - yi);
        }
      }
    }
  });
}

// ----------------------------------------------------------------------------
// Linear maps.

template <class T>
Var<T> dense(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[0]) {
    throw ShapeError("dense: input " + shape_str(xs) + " incompatible with weights " + shape_str(ws));
  }
  const std::size_t B = xs[0], n = xs[1], m = ws[1];
  check_bias(bias, m, "dense");
  Tensor<T> out(Shape{B, m});
  kernels::gemm_nn<T>(static_cast<int>(B), static_cast<int>(m), static_cast<int>(n), x.value().data(),
                      static_cast<int>(n), w.value().data(), static_cast<int>(m), out.data(), static_cast<int>(m));
  if (bias.valid()) add_bias(out, bias.value());
  const NodeId xi = x.id(), wi = w.id();
  const bool has_bias = bias.valid();
  const NodeId bi = has_bias ? bias.id() : 0;
  std::vector<Var<T>> ins{x, w};
  if (has_bias) ins.push_back(bias);
  return tape_of(x).record(std::move(out), std::span<const Var<T>>(ins), [=](Tape<T>& t, NodeId self) {
    const Tensor<T>& g = t.grad_slot(self);
    if (t.requires_grad(xi)) {
      const std::vector<T> wt = transpose(t.value(wi).data(), n, m);
      kernels::gemm_nn<T>(static_cast<int>(B), static_cast<int>(n), static_cast<int>(m), g.data(),
                          static_cast<int>(m), wt.data(), static_cast<int>(n), t.grad_slot(xi).data(),
                          static_cast<int>(n));
    }
    if (t.requires_grad(wi)) {
      kernels::gemm_tn<T>(static_cast<int>(n), static_cast<int>(m), static_cast<int>(B), t.value(xi).data(),
                          static_cast<int>(n), g.data(), static_cast<int>(m), t.grad_slot(wi).data(),
                          static_cast<int>(m));
    }
    if (has_bias && t.requires_grad(bi)) accumulate_bias_grad(g, t.grad_slot(bi));
  });
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, int stride, Pad2d pad, const Var<T>& bias) {
  const ConvGeom g = make_geom(x.shape(), kernel.shape(), stride, pad, "conv2d");
  check_bias(bias, g.cout, "conv2d");
  const std::size_t P = g.rows(), R = g.cols();
  Tensor<T> out(Shape{g.batch, g.oh, g.ow, g.cout});
  {
    std::vector<T> col;
    const T* a = x.value().data();
    if (!g.is_pointwise()) {
      col.resize(P * R);
      im2col(x.value().data(), g, col.data());
      a = col.data();
    }
    kernels::gemm_nn<T>(static_cast<int>(P), static_cast<int>(g.cout), static_cast<int>(R), a, static_cast<int>(R),
                        kernel.value().data(), static_cast<int>(g.cout), out.data(), static_cast<int>(g.cout));
  }
  if (bias.valid()) add_bias(out, bias.value());
  const NodeId xi = x.id(), ki = kernel.id();
  const bool has_bias = bias.valid();
  const NodeId bi = has_bias ? bias.id() : 0;
  std::vector<Var<T>> ins{x, kernel};
  if (has_bias) ins.push_back(bias);
  return tape_of(x).record(std::move(out), std::span<const Var<T>>(ins), [=](Tape<T>& t, NodeId self) {
    const Tensor<T>& gout = t.grad_slot(self);
    if (t.requires_grad(ki)) {
      std::vector<T> col;
      const T* a = t.value(xi).data();
      if (!g.is_pointwise()) {
        col.resize(P * R);
        im2col(t.value(xi).data(), g, col.data());
        a = col.data();
      }
      kernels::gemm_tn<T>(static_cast<int>(R), static_cast<int>(g.cout), static_cast<int>(P), a, static_cast<int>(R),
                          gout.data(), static_cast<int>(g.cout), t.grad_slot(ki).data(), static_cast<int>(g.cout));
    }
    if (t.requires_grad(xi)) {
      const std::vector<T> kt = transpose(t.value(ki).data(), R, g.cout);
      if (g.is_pointwise()) {
        kernels::gemm_nn<T>(static_cast<int>(P), static_cast<int>(R), static_cast<int>(g.cout), gout.data(),
                            static_cast<int>(g.cout), kt.data(), static_cast<int>(R), t.grad_slot(xi).data(),
                            static_cast<int>(R));
      } else {
        std::vector<T> gcol(P * R, T(0));
        kernels::gemm_nn<T>(static_cast<int>(P), static_cast<int>(R), static_cast<int>(g.cout), gout.data(),
                            static_cast<int>(g.cout), kt.data(), static_cast<int>(R), gcol.data(), static_cast<int>(R));
        col2im_add(gcol.data(), g, t.grad_slot(xi).data());
      }
    }
    if (has_bias && t.requires_grad(bi)) accumulate_bias_grad(gout, t.grad_slot(bi));
  });
}

template <class T>
Var<T> transposed_conv2d(const Var<T>& x, const Var<T>& kernel, int stride, Pad2d pad, std::size_t out_h,
                         std::size_t out_w, const Var<T>& bias) {
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (xs.size() != 4 || ks.size() != 4) {
    throw ShapeError("transposed_conv2d: input " + shape_str(xs) + ", kernel " + shape_str(ks));
  }
  // Geometry of the forward conv this op is the adjoint of.
  const ConvGeom g = make_geom(Shape{xs[0], out_h, out_w, ks[2]}, ks, stride, pad, "transposed_conv2d");
  if (g.oh != xs[1] || g.ow != xs[2] || g.cout != xs[3]) {
    throw ShapeError("transposed_conv2d: input " + shape_str(xs) + " is not the conv2d image of output [" +
                     std::to_string(xs[0]) + "," + std::to_string(out_h) + "," + std::to_string(out_w) + "," +
                     std::to_string(ks[2]) + "] under kernel " + shape_str(ks));
  }
  check_bias(bias, g.cin, "transposed_conv2d");
  const std::size_t P = g.rows(), R = g.cols();
  Tensor<T> out(Shape{g.batch, g.h, g.w, g.cin});
  {
    const std::vector<T> kt = transpose(kernel.value().data(), R, g.cout);
    std::vector<T> ycol(P * R, T(0));
    kernels::gemm_nn<T>(static_cast<int>(P), static_cast<int>(R), static_cast<int>(g.cout), x.value().data(),
                        static_cast<int>(g.cout), kt.data(), static_cast<int>(R), ycol.data(), static_cast<int>(R));
    col2im_add(ycol.data(), g, out.data());
  }
  if (bias.valid()) add_bias(out, bias.value());
  const NodeId xi = x.id(), ki = kernel.id();
  const bool has_bias = bias.valid();
  const NodeId bi = has_bias ? bias.id() : 0;
  std::vector<Var<T>> ins{x, kernel};
  if (has_bias) ins.push_back(bias);
  return tape_of(x).record(std::move(out), std::span<const Var<T>>(ins), [=](Tape<T>& t, NodeId self) {
    const Tensor<T>& gout = t.grad_slot(self);
    std::vector<T> dcol(P * R);
    im2col(gout.data(), g, dcol.data());
    if (t.requires_grad(xi)) {
      kernels::gemm_nn<T>(static_cast<int>(P), static_cast<int>(g.cout), static_cast<int>(R), dcol.data(),
                          static_cast<int>(R), t.value(ki).data(), static_cast<int>(g.cout), t.grad_slot(xi).data(),
                          static_cast<int>(g.cout));
    }
    if (t.requires_grad(ki)) {
      kernels::gemm_tn<T>(static_cast<int>(R), static_cast<int>(g.cout), static_cast<int>(P), dcol.data(),
                          static_cast<int>(R), t.value(xi).data(), static_cast<int>(g.cout), t.grad_slot(ki).data(),
                          static_cast<int>(g.cout));
    }
    if (has_bias && t.requires_grad(bi)) accumulate_bias_grad(gout, t.grad_slot(bi));
  });
}

template <class T>
Var<T> weight_norm(const Var<T>& v, const Var<T>& gain) {
  const Tensor<T>& vv = v.value();
  const std::size_t C = vv.dim(-1);
  if (gain.shape() != Shape{C}) {
    throw ShapeError("weight_norm: gain " + shape_str(gain.shape()) + " does not match " + shape_str(vv.shape()));
  }
  const std::size_t rows = vv.size() / C;
  std::vector<T> norms(C, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < C; ++c) norms[c] += vv[r * C + c] * vv[r * C + c];
  }
  for (T& n : norms) n = std::sqrt(n);
  Tensor<T> out(vv.shape());
  const Tensor<T>& gv = gain.value();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      out[r * C + c] = norms[c] > 0 ? gv[c] * vv[r * C + c] / norms[c] : T(0);
    }
  }
  const NodeId vi = v.id(), gi = gain.id();
  return tape_of(v).record(std::move(out), {v, gain}, [=](Tape<T>& t, NodeId self) {
    const Tensor<T>& gw = t.grad_slot(self);
    const Tensor<T>& vv = t.value(vi);
    const Tensor<T>& gv = t.value(gi);
    std::vector<T> proj(C, T(0));  // sum_r gw * v / ||v||
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < C; ++c) {
        if (norms[c] > 0) proj[c] += gw[r * C + c] * vv[r * C + c] / norms[c];
      }
    }
    if (t.requires_grad(gi)) {
      Tensor<T>& gg = t.grad_slot(gi);
      for (std::size_t c = 0; c < C; ++c) gg[c] += proj[c];
    }
    if (t.requires_grad(vi)) {
      Tensor<T>& gvv = t.grad_slot(vi);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < C; ++c) {
          if (norms[c] <= 0) continue;
          const T u = vv[r * C + c] / norms[c];
          gvv[r * C + c] += gv[c] / norms[c] * (gw[r * C + c] - u * proj[c]);
        }
      }
    }
  });
}

#define PVXL_INSTANTIATE_OPS(T)                                                                   \
  template Var<T> reshape(const Var<T>&, Shape);                                                  \
  template Var<T> concat(std::span<const Var<T>>, int);                                           \
  template Var<T> concat(std::initializer_list<Var<T>>, int);                                     \
  template Var<T> slice(const Var<T>&, int, std::size_t, std::size_t);                            \
  template Var<T> downshift(const Var<T>&);                                                       \
  template Var<T> rightshift(const Var<T>&);                                                      \
  template Var<T> detach(const Var<T>&);                                                          \
  template Var<T> add(const Var<T>&, const Var<T>&);                                              \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                              \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                              \
  template Var<T> scale(const Var<T>&, double);                                                   \
  template Var<T> add_scalar(const Var<T>&, double);                                              \
  template Var<T> neg(const Var<T>&);                                                             \
  template Var<T> sigmoid(const Var<T>&);                                                         \
  template Var<T> tanh(const Var<T>&);                                                            \
  template Var<T> elu(const Var<T>&);                                                             \
  template Var<T> exp(const Var<T>&);                                                             \
  template Var<T> log(const Var<T>&);                                                             \
  template Var<T> softplus(const Var<T>&);                                                        \
  template Var<T> log_sigmoid(const Var<T>&);                                                     \
  template Var<T> log1mexp(const Var<T>&);                                                        \
  template Var<T> clamp_min(const Var<T>&, double);                                               \
  template Var<T> square(const Var<T>&);                                                          \
  template Var<T> concat_elu(const Var<T>&);                                                      \
  template Var<T> sum(const Var<T>&);                                                             \
  template Var<T> mean(const Var<T>&);                                                            \
  template Var<T> sum_axis(const Var<T>&, int);                                                   \
  template Var<T> log_sum_exp(const Var<T>&, int);                                                \
  template Var<T> dense(const Var<T>&, const Var<T>&, const Var<T>&);                             \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, int, Pad2d, const Var<T>&);                \
  template Var<T> transposed_conv2d(const Var<T>&, const Var<T>&, int, Pad2d, std::size_t, std::size_t, \
                                    const Var<T>&);                                               \
  template Var<T> weight_norm(const Var<T>&, const Var<T>&);

PVXL_INSTANTIATE_OPS(float)
PVXL_INSTANTIATE_OPS(double)

}  // namespace pvxl

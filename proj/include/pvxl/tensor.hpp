#pragma once

// Dense NHWC arrays and a reverse-mode tape.
//
// `Tensor<T>` is a plain value type (shape + contiguous row-major data).
// `Tape<T>` records every operation applied to `Var<T>` handles; `backward`
// walks the records in reverse creation order, which is a valid topological
// order because an operation can only consume nodes that already exist.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pvxl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  /// Extent of `axis`; negative axes count from the back.
  std::size_t dim(int axis) const;

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Element access by multi-index (bounds checked).
  T& at(std::initializer_list<std::size_t> index);
  const T& at(std::initializer_list<std::size_t> index) const;

  T item() const;

  Tensor reshaped(Shape shape) const;
  void fill(T v);

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<T> data_;
};

using NodeId = std::uint32_t;

template <class T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, NodeId id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  NodeId id() const { return id_; }
  Tape<T>& tape() const;
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(int axis) const { return value().dim(axis); }
  std::size_t size() const { return value().size(); }
  T item() const { return value().item(); }
  bool requires_grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  NodeId id_ = 0;
};

template <class T>
class Tape {
 public:
  /// Backward rule: reads the output gradient of `self` and accumulates into
  /// the gradient slots of its inputs.
  using Backward = std::function<void(Tape&, NodeId self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = true);
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Appends an operation output. The node tracks gradients when any input
  /// does; otherwise `fn` is dropped.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward fn);
  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, Backward fn);

  const Tensor<T>& value(NodeId id) const { return nodes_.at(id).value; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }

  /// Gradient of node `id` after `backward`; zeros when the node was never
  /// reached.
  Tensor<T> grad(NodeId id) const;
  Tensor<T> grad(const Var<T>& v) const { return grad(v.id()); }
  /// Mutable gradient slot, allocated as zeros on first access.
  Tensor<T>& grad_slot(NodeId id);
  bool has_grad(NodeId id) const { return !nodes_.at(id).grad.empty(); }

  /// Seeds d(root)/d(root) = 1 and propagates. Rejects non-scalar roots.
  void backward(const Var<T>& root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::deque<Node> nodes_;
};

template <class T>
Tape<T>& Var<T>::tape() const {
  if (!tape_) throw std::logic_error("use of an unbound Var");
  return *tape_;
}
template <class T>
const Tensor<T>& Var<T>::value() const {
  return tape().value(id_);
}
template <class T>
bool Var<T>::requires_grad() const {
  return tape().requires_grad(id_);
}

/// Explicit per-edge zero padding for 2-D convolutions.
struct Pad2d {
  int top = 0;
  int bottom = 0;
  int left = 0;
  int right = 0;
};

/// floor((n + pad_lo + pad_hi - k) / stride) + 1; throws when the window
/// does not fit.
std::size_t conv_out_extent(std::size_t n, int k, int stride, int pad_lo, int pad_hi);

// ---------------------------------------------------------------------------
// Operations. All inputs must live on the same tape.

template <class T> Var<T> reshape(const Var<T>& x, Shape shape);
template <class T> Var<T> concat(std::span<const Var<T>> xs, int axis);
template <class T> Var<T> concat(std::initializer_list<Var<T>> xs, int axis);
template <class T> Var<T> slice(const Var<T>& x, int axis, std::size_t start, std::size_t len);
/// NHWC: inserts a zero row at the top and drops the bottom row.
template <class T> Var<T> downshift(const Var<T>& x);
/// NHWC: inserts a zero column at the left and drops the rightmost column.
template <class T> Var<T> rightshift(const Var<T>& x);
/// Same value, no gradient flows back through it.
template <class T> Var<T> detach(const Var<T>& x);

// Numpy-style broadcasting on right-aligned shapes.
template <class T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> scale(const Var<T>& x, double c);
template <class T> Var<T> add_scalar(const Var<T>& x, double c);
template <class T> Var<T> neg(const Var<T>& x);

template <class T> Var<T> sigmoid(const Var<T>& x);
template <class T> Var<T> tanh(const Var<T>& x);
template <class T> Var<T> elu(const Var<T>& x);
template <class T> Var<T> exp(const Var<T>& x);
/// Rejects non-positive inputs in 64-bit mode.
template <class T> Var<T> log(const Var<T>& x);
template <class T> Var<T> softplus(const Var<T>& x);
template <class T> Var<T> log_sigmoid(const Var<T>& x);
/// log(1 - exp(-x)) for x > 0.
template <class T> Var<T> log1mexp(const Var<T>& x);
template <class T> Var<T> clamp_min(const Var<T>& x, double lo);
template <class T> Var<T> square(const Var<T>& x);
/// elu(concat(x, -x)) along the last axis.
template <class T> Var<T> concat_elu(const Var<T>& x);

/// Sum of all elements; rank-0 result.
template <class T> Var<T> sum(const Var<T>& x);
template <class T> Var<T> mean(const Var<T>& x);
/// Reduces `axis` away.
template <class T> Var<T> sum_axis(const Var<T>& x, int axis);
/// Max-shifted log(sum(exp(x))) over `axis` (reduced away). An all -inf
/// slice yields -inf.
template <class T> Var<T> log_sum_exp(const Var<T>& x, int axis);

/// x[B, n] * w[n, m] (+ bias[m]).
template <class T> Var<T> dense(const Var<T>& x, const Var<T>& w, const Var<T>& bias = {});
/// Cross-correlation, x[B,H,W,Cin] with kernel[kh,kw,Cin,Cout] (+ bias[Cout]).
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, int stride, Pad2d pad,
              const Var<T>& bias = {});
/// Adjoint of conv2d with the same kernel/stride/padding, mapping
/// [B,H',W',Cout] back to [B,out_h,out_w,Cin] (+ bias[Cin]).
template <class T>
Var<T> transposed_conv2d(const Var<T>& x, const Var<T>& kernel, int stride, Pad2d pad,
                         std::size_t out_h, std::size_t out_w, const Var<T>& bias = {});
/// kernel[..., c] = gain[c] * v[..., c] / ||v[..., c]||.
template <class T> Var<T> weight_norm(const Var<T>& v, const Var<T>& gain);

}  // namespace pvxl

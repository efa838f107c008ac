#include "pvxl/tensor.hpp"

#include <sstream>

namespace pvxl {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t conv_out_extent(std::size_t n, int k, int stride, int pad_lo, int pad_hi) {
  if (k < 1 || stride < 1 || pad_lo < 0 || pad_hi < 0) {
    throw ShapeError("conv geometry must have positive kernel/stride and non-negative padding");
  }
  const long padded = static_cast<long>(n) + pad_lo + pad_hi;
  if (padded < k) {
    throw ShapeError("conv window " + std::to_string(k) + " does not fit extent " +
                     std::to_string(n) + " with padding " + std::to_string(pad_lo) + "+" +
                     std::to_string(pad_hi));
  }
  return static_cast<std::size_t>((padded - k) / stride + 1);
}

template <class T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
  }
}

template <class T>
std::size_t Tensor<T>::dim(int axis) const {
  const int r = static_cast<int>(shape_.size());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
  return shape_[static_cast<std::size_t>(a)];
}

template <class T>
std::size_t Tensor<T>::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) throw ShapeError("index rank mismatch for " + shape_str(shape_));
  std::size_t off = 0;
  std::size_t d = 0;
  for (std::size_t i : index) {
    if (i >= shape_[d]) throw std::out_of_range("index out of range for " + shape_str(shape_));
    off = off * shape_[d] + i;
    ++d;
  }
  return off;
}

template <class T>
T& Tensor<T>::at(std::initializer_list<std::size_t> index) {
  return data_[offset(index)];
}

template <class T>
const T& Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  return data_[offset(index)];
}

template <class T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

template <class T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

template <class T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <class T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), {}, requires_grad, {}});
  return Var<T>(this, static_cast<NodeId>(nodes_.size() - 1));
}

template <class T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward fn) {
  return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(fn));
}

template <class T>
Var<T> Tape<T>::record(Tensor<T> value, std::span<const Var<T>> inputs, Backward fn) {
  bool track = false;
  for (const Var<T>& in : inputs) {
    if (!in.valid()) continue;
    if (&in.tape() != this) throw std::logic_error("operation mixes nodes from different tapes");
    track = track || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, track, track ? std::move(fn) : Backward{}});
  return Var<T>(this, static_cast<NodeId>(nodes_.size() - 1));
}

template <class T>
Tensor<T> Tape<T>::grad(NodeId id) const {
  const Node& n = nodes_.at(id);
  if (n.grad.empty() && !n.value.empty()) return Tensor<T>(n.value.shape());
  return n.grad;
}

template <class T>
Tensor<T>& Tape<T>::grad_slot(NodeId id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <class T>
void Tape<T>::backward(const Var<T>& root) {
  if (&root.tape() != this) throw std::logic_error("backward root belongs to another tape");
  if (root.value().size() != 1) {
    throw ShapeError("backward requires a scalar root, got shape " + shape_str(root.shape()));
  }
  grad_slot(root.id()).fill(T(1));
  for (long id = static_cast<long>(root.id()); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.backward && !n.grad.empty()) n.backward(*this, static_cast<NodeId>(id));
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class Tensor<std::uint8_t>;
template class Tape<float>;
template class Tape<double>;

}  // namespace pvxl

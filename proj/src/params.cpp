#include "pvxl/params.hpp"

#include <stdexcept>

namespace pvxl {

template <class T>
void ParamSet<T>::add(const std::string& name, Tensor<T> value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  index_.emplace(name, names_.size());
  names_.push_back(name);
  values_.push_back(std::move(value));
}

template <class T>
Tensor<T>& ParamSet<T>::operator[](const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return values_[it->second];
}

template <class T>
const Tensor<T>& ParamSet<T>::operator[](const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return values_[it->second];
}

template <class T>
std::size_t ParamSet<T>::numel() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

template <class T>
ParamSet<T> ParamSet<T>::zeros_like() const {
  ParamSet out;
  for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], Tensor<T>(values_[i].shape()));
  return out;
}

template <class T>
Binder<T>::Binder(Tape<T>& tape, const ParamSet<T>& params, bool requires_grad) : tape_(&tape), params_(&params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    vars_.emplace(params.names()[i], tape.leaf(params.at(i), requires_grad));
  }
}

template <class T>
Binder<T>::Binder(Tape<T>& tape, const ParamSet<T>& params, std::span<const Var<T>> leaves)
    : tape_(&tape), params_(&params) {
  if (leaves.size() != params.size()) throw std::invalid_argument("Binder: one leaf per parameter required");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (leaves[i].shape() != params.at(i).shape()) {
      throw ShapeError("Binder: leaf for '" + params.names()[i] + "' has shape " + shape_str(leaves[i].shape()));
    }
    vars_.emplace(params.names()[i], leaves[i]);
  }
}

template <class T>
Var<T> Binder<T>::operator()(const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

template <class T>
ParamSet<T> Binder<T>::grads() const {
  ParamSet<T> out;
  for (const auto& name : params_->names()) out.add(name, tape_->grad(vars_.at(name)));
  return out;
}

template <class T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (T& v : t.values()) v = static_cast<T>(stddev * rng.normal());
  return t;
}

template class ParamSet<float>;
template class ParamSet<double>;
template class Binder<float>;
template class Binder<double>;
template Tensor<float> normal_tensor<float>(Shape, double, Rng&);
template Tensor<double> normal_tensor<double>(Shape, double, Rng&);

}  // namespace pvxl

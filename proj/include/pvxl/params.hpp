#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pvxl/random.hpp"
#include "pvxl/tensor.hpp"

namespace pvxl {

/// Named tensors in insertion order.
template <class T>
class ParamSet {
 public:
  /// Throws std::invalid_argument on a duplicate name.
  void add(const std::string& name, Tensor<T> value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  /// Throws std::out_of_range naming the missing parameter.
  Tensor<T>& operator[](const std::string& name);
  const Tensor<T>& operator[](const std::string& name) const;
  Tensor<T>& at(std::size_t i) { return values_[i]; }
  const Tensor<T>& at(std::size_t i) const { return values_[i]; }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  std::size_t numel() const;

  /// Same names and shapes, all zeros.
  ParamSet zeros_like() const;

  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], values_[i].template cast<U>());
    return out;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    return a.names_ == b.names_ && a.values_ == b.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Puts every parameter of a set on a tape and looks them up by name.
template <class T>
class Binder {
 public:
  Binder(Tape<T>& tape, const ParamSet<T>& params, bool requires_grad = true);
  /// Uses existing leaves, one per parameter in order (values must match).
  Binder(Tape<T>& tape, const ParamSet<T>& params, std::span<const Var<T>> leaves);

  Tape<T>& tape() const { return *tape_; }
  const ParamSet<T>& params() const { return *params_; }
  bool has(const std::string& name) const { return params_->contains(name); }
  Var<T> operator()(const std::string& name) const;
  /// Gradients after a backward pass, zeros for unreached parameters.
  ParamSet<T> grads() const;

 private:
  Tape<T>* tape_;
  const ParamSet<T>* params_;
  std::unordered_map<std::string, Var<T>> vars_;
};

/// Fills with Normal(0, stddev) draws.
template <class T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng);

}  // namespace pvxl

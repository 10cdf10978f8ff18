#pragma once

// Reverse-mode automatic differentiation over dense row-major tensors.
//
// A Tape owns every node created while building a graph. Nodes are appended
// in creation order, which is already a topological order, so backward walks
// ids from the loss downwards and visits each reachable node exactly once.
// Each op records a pullback that reads the node's gradient and accumulates
// into its inputs' gradients.

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "smsd/error.hpp"

namespace smsd::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? " x " : "") << s[i];
  os << ']';
  return os.str();
}

template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> values;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), values(shape_size(shape), T(0)) {}
  Tensor(Shape s, std::vector<T> v) : shape(std::move(s)), values(std::move(v)) {
    if (shape_size(shape) != values.size())
      throw ShapeError("tensor shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) + " values");
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::size_t cols() const {
    std::size_t c = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) c *= shape[i];
    return c;
  }
  T& operator[](std::size_t i) { return values[i]; }
  const T& operator[](std::size_t i) const { return values[i]; }
  T& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape, std::vector<U>(values.begin(), values.end()));
  }
  bool operator==(const Tensor&) const = default;
};

template <class T>
using TensorMap = std::map<std::string, Tensor<T>>;

template <class T>
class Tape;

/// Handle to a node on a tape.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <class T>
class Tape {
 public:
  using Pullback = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), {}, nullptr); }

  /// Trainable leaf. Names must be unique on a tape.
  Var<T> parameter(const std::string& name, Tensor<T> value) {
    if (params_.count(name)) throw Error("duplicate parameter '" + name + "'");
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    n.param_name = name;
    nodes_.push_back(std::move(n));
    params_[name] = nodes_.size() - 1;
    return Var<T>(this, nodes_.size() - 1);
  }

  /// Records an op output. `inputs` are the node ids the pullback may touch.
  Var<T> push(Tensor<T> value, std::vector<std::size_t> inputs, Pullback pullback) {
#ifdef SMSD_CHECK_FINITE
    for (const T& v : value.values)
      if (!std::isfinite(static_cast<double>(v))) throw Error("non-finite value produced on tape");
#endif
    Node n;
    n.value = std::move(value);
    for (std::size_t i : inputs) n.requires_grad = n.requires_grad || nodes_.at(i).requires_grad;
    if (n.requires_grad) {
      n.inputs = std::move(inputs);
      n.pullback = std::move(pullback);
    }
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer of a node, allocated (zeroed) on first use.
  std::vector<T>& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), T(0));
    return n.grad;
  }

  /// Gradient of `loss` w.r.t. every parameter on the tape. Parameters that
  /// the loss does not reach get zero tensors.
  TensorMap<T> backward(Var<T> loss) {
    if (&loss.tape() != this) throw Error("backward: loss belongs to another tape");
    if (loss.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    for (auto& n : nodes_) n.grad.clear();
    std::vector<char> reachable(nodes_.size(), 0);
    reachable[loss.id()] = 1;
    grad(loss.id())[0] = T(1);
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      if (!reachable[id]) continue;
      Node& n = nodes_[id];
      if (!n.requires_grad || !n.pullback) continue;
      for (std::size_t in : n.inputs) reachable[in] = 1;
      grad(id);
      n.pullback(*this, id);
    }
    TensorMap<T> out;
    for (const auto& [name, id] : params_) {
      Tensor<T> g(nodes_[id].value.shape);
      if (reachable[id] && !nodes_[id].grad.empty()) g.values = nodes_[id].grad;
      out.emplace(name, std::move(g));
    }
    return out;
  }

  const std::map<std::string, std::size_t>& parameters() const { return params_; }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    std::vector<std::size_t> inputs;
    Pullback pullback;
    bool requires_grad = false;
    std::string param_name;
  };

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> params_;
};

/// Registers every tensor of `params` on `tape` and returns the leaf handles.
template <class T>
std::map<std::string, Var<T>> bind_parameters(Tape<T>& tape, const TensorMap<T>& params) {
  std::map<std::string, Var<T>> out;
  for (const auto& [name, value] : params) out.emplace(name, tape.parameter(name, value));
  return out;
}

}  // namespace smsd::ad

#pragma once

// Minimal reverse-mode automatic differentiation over dense CHW tensors.
//
// Every value is a (channels, height, width) array; vectors use height = width = 1.
// Graphs are built per sample. Leaves created with Var::parameter accumulate
// gradients across backward() calls until zero_grad().

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <vector>

namespace wplus::ad {

struct Shape {
  int c = 1;
  int h = 1;
  int w = 1;

  Eigen::Index size() const { return static_cast<Eigen::Index>(c) * h * w; }
  int plane() const { return h * w; }
  static Shape vec(Eigen::Index n) { return {static_cast<int>(n), 1, 1}; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

template <typename T>
using Array = Eigen::Array<T, Eigen::Dynamic, 1>;

template <typename T>
struct Node {
  Shape shape;
  Array<T> value;
  Array<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Array<T>& ensure_grad() {
    if (grad.size() != value.size()) grad = Array<T>::Zero(value.size());
    return grad;
  }
};

/// Whether newly created nodes record their backward closures.
bool grad_enabled();

/// Disables graph recording for its lifetime (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Var {
 public:
  using Scalar = T;

  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Shape shape, Array<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->shape = shape;
    n->value = std::move(value);
    return Var(std::move(n));
  }
  static Var constant(Shape shape, T fill) { return constant(shape, Array<T>::Constant(shape.size(), fill)); }
  static Var parameter(Shape shape, Array<T> value) {
    Var v = constant(shape, std::move(value));
    v.node_->requires_grad = true;
    return v;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Eigen::Index size() const { return node_->value.size(); }
  const Array<T>& value() const { return node_->value; }
  Array<T>& value() { return node_->value; }
  T item() const { return node_->value[0]; }

  const Array<T>& grad() const { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.setZero(node_->value.size()); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Creates an op node; `backward` is only kept when some input needs gradients.
template <typename T>
Var<T> make_node(Shape shape, Array<T> value, std::vector<std::shared_ptr<Node<T>>> inputs,
                 std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->shape = shape;
  n->value = std::move(value);
  if (grad_enabled()) {
    for (const auto& in : inputs) {
      if (in->requires_grad) {
        n->requires_grad = true;
        break;
      }
    }
    if (n->requires_grad) {
      n->inputs = std::move(inputs);
      n->backward = std::move(backward);
    }
  }
  return Var<T>(std::move(n));
}

/// Seeds d(output)/d(output) = 1 (output must be a scalar unless `seed` is given)
/// and propagates to every reachable node.
template <typename T>
void backward(const Var<T>& output, const Array<T>* seed = nullptr);

extern template void backward<float>(const Var<float>&, const Array<float>*);
extern template void backward<double>(const Var<double>&, const Array<double>*);

}  // namespace wplus::ad

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "edt/numerics/rng.hpp"

namespace edt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until backward touches the node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads self.grad and accumulates into parents' grads. Null on a node with
  // parents means the op has no derivative.
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

}  // namespace detail

/// Dense row-major tensor handle. Copies share storage and graph position;
/// use clone() for an independent copy. Every op result is checked for
/// finiteness and raises NumericError instead of propagating NaN/Inf.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1), bool requires_grad = false);
  static Tensor scalar(T value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  /// Extent of axis `axis`; negative values count from the back.
  std::size_t dim(int axis) const;
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  /// Direct write access; only meaningful for leaves (parameters, buffers).
  std::span<T> mutable_data() { return node_->value; }
  T item() const;
  T operator[](std::size_t flat) const { return node_->value[flat]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  /// Accumulated gradient (zeros if backward never reached this tensor).
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  /// Same values, no graph history.
  Tensor detach() const;
  Tensor clone() const;
  Tensor<double> to_double() const;
  Tensor<float> to_float() const;

  const NodePtr& node() const { return node_; }
  const char* op_name() const { return node_->op; }

 private:
  NodePtr node_;
};

/// Disables graph recording on this thread for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

/// Reverse-mode sweep from a scalar. Leaf gradients accumulate; interior
/// gradients are released after use. Throws CapabilityError when the graph
/// contains a primitive without a derivative.
template <typename T>
void backward(const Tensor<T>& loss);

/// d(loss)/d(param) for each param. Resets the params' accumulated grads.
template <typename T>
std::vector<Tensor<T>> grad(const Tensor<T>& loss, std::span<const Tensor<T>> params);

namespace detail {

template <typename T>
void check_finite(const std::vector<T>& values, const char* op);

/// Builds the result node, attaching parents only when recording is on and
/// some parent needs gradients.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const char* op,
                      std::vector<std::shared_ptr<Node<T>>> parents,
                      std::function<void(Node<T>&)> backward);

}  // namespace detail

}  // namespace edt

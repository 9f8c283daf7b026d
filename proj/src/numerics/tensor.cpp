#include "edt/numerics/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <type_traits>
#include <sstream>
#include <unordered_set>

#include "edt/error.hpp"

namespace edt {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {
thread_local bool g_grad_mode = true;
}

bool grad_mode_enabled() { return g_grad_mode; }

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

namespace detail {

template <typename T>
void check_finite(const std::vector<T>& values, const char* op) {
  // Exponent field all ones <=> NaN or Inf. Integer OR-reduction vectorizes.
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  constexpr Bits exponent = static_cast<Bits>(sizeof(T) == 4 ? 0x7f800000ull : 0x7ff0000000000000ull);
  Bits bad = 0;
  for (const T v : values) {
    Bits b;
    std::memcpy(&b, &v, sizeof b);
    bad |= static_cast<Bits>((b & exponent) == exponent);
  }
  if (bad) throw NumericError(std::string("non-finite value produced by ") + op);
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const char* op,
                      std::vector<std::shared_ptr<Node<T>>> parents,
                      std::function<void(Node<T>&)> backward) {
  check_finite(value, op);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (g_grad_mode) {
    for (const auto& p : parents) needs = needs || (p && p->requires_grad);
  }
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

}  // namespace detail

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  std::vector<T> data(shape_numel(shape), value);
  return from(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("Tensor::from: shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " elements, got " +
                         std::to_string(data.size()));
  }
  detail::check_finite(data, "Tensor::from");
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::randn(Shape shape, Rng& rng, T stddev, bool requires_grad) {
  std::vector<T> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<T>(rng.normal()) * stddev;
  return from(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return from({}, {value});
}

template <typename T>
std::size_t Tensor<T>::dim(int axis) const {
  const int r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape()));
  }
  return node_->shape[static_cast<std::size_t>(a)];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  node_->grad.assign(node_->value.size(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from(shape(), node_->value, false);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return from(shape(), node_->value, node_->requires_grad);
}

template <typename T>
Tensor<double> Tensor<T>::to_double() const {
  return Tensor<double>::from(shape(), std::vector<double>(data().begin(), data().end()));
}

template <typename T>
Tensor<float> Tensor<T>::to_float() const {
  std::vector<float> out(numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(node_->value[i]);
  return Tensor<float>::from(shape(), std::move(out));
}

template <typename T>
void backward(const Tensor<T>& loss) {
  using NodeT = detail::Node<T>;
  if (loss.numel() != 1) {
    throw DimensionError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (NodeT* node : order) {
    if (!node->parents.empty() && !node->backward) {
      throw CapabilityError(std::string("backward: primitive '") + node->op +
                            "' has no derivative");
    }
  }

  NodeT* root = loss.node().get();
  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    if (node->parents.empty()) continue;
    for (auto& p : node->parents) {
      if (p->requires_grad) p->ensure_grad();
    }
    node->ensure_grad();
    node->backward(*node);
    std::vector<T>().swap(node->grad);
  }
}

template <typename T>
std::vector<Tensor<T>> grad(const Tensor<T>& loss, std::span<const Tensor<T>> params) {
  for (const auto& p : params) {
    if (!p.requires_grad()) throw ArgumentError("grad: parameter does not require grad");
    p.node()->grad.assign(p.numel(), T(0));
  }
  backward(loss);
  std::vector<Tensor<T>> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    p.node()->ensure_grad();
    out.push_back(Tensor<T>::from(p.shape(), p.node()->grad));
    p.node()->grad.assign(p.numel(), T(0));
  }
  return out;
}

template class Tensor<float>;
template class Tensor<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);
template std::vector<Tensor<float>> grad(const Tensor<float>&, std::span<const Tensor<float>>);
template std::vector<Tensor<double>> grad(const Tensor<double>&, std::span<const Tensor<double>>);

namespace detail {
template void check_finite(const std::vector<float>&, const char*);
template void check_finite(const std::vector<double>&, const char*);
template Tensor<float> make_result(Shape, std::vector<float>, const char*,
                                   std::vector<std::shared_ptr<Node<float>>>,
                                   std::function<void(Node<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>, const char*,
                                    std::vector<std::shared_ptr<Node<double>>>,
                                    std::function<void(Node<double>&)>);
}  // namespace detail

}  // namespace edt

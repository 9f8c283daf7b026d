#pragma once

#include <cstdint>
#include <type_traits>
#include <vector>

#include "edt/numerics/tensor.hpp"

namespace edt {

// Elementwise with numpy-style broadcasting.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, std::type_identity_t<T> factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, std::type_identity_t<T> offset);

// Matmul-class kernels. These are the only ops that feed OpCounter, with
// forward MACs only; backward products are not counted.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// [..., m, k] x [..., k, p] with identical leading extents.
template <typename T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);
/// x[..., in] * weight[in, out] (+ bias[out]). Pass an undefined bias to skip it.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// Layout.
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
/// Rows of table[V, d] selected by index -> [indices.size(), d].
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<std::size_t>& indices);

// Nonlinearities and normalization over the trailing axis.
template <typename T> Tensor<T> layer_norm(const Tensor<T>& x, std::type_identity_t<T> eps = T(1e-6));
template <typename T> Tensor<T> gelu(const Tensor<T>& x);  // tanh approximation
template <typename T> Tensor<T> silu(const Tensor<T>& x);
template <typename T> Tensor<T> softmax(const Tensor<T>& x);

// Reductions to a scalar.
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
template <typename T> Tensor<T> mse(const Tensor<T>& prediction, const Tensor<T>& target);

/// x[B, n, d]: rows whose mask byte is set are replaced by token[d].
/// The mask holds n (shared over the batch) or B*n bytes.
template <typename T>
Tensor<T> mask_replace(const Tensor<T>& x, const std::vector<std::uint8_t>& mask,
                       const Tensor<T>& token);

/// Elementwise rounding. Has no derivative: backward through it throws.
template <typename T> Tensor<T> round(const Tensor<T>& x);

}  // namespace edt

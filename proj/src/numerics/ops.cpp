#include "edt/numerics/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "edt/error.hpp"
#include "edt/numerics/op_counter.hpp"

namespace edt {
namespace {

template <typename T>
using NodeT = detail::Node<T>;
template <typename T>
using NodePtrT = std::shared_ptr<NodeT<T>>;

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
ConstMatMap<T> view(const std::vector<T>& v, std::size_t rows, std::size_t cols,
                    std::size_t offset = 0) {
  return ConstMatMap<T>(v.data() + offset, static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(cols));
}

template <typename T>
MatMap<T> view(std::vector<T>& v, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return MatMap<T>(v.data() + offset, static_cast<Eigen::Index>(rows),
                   static_cast<Eigen::Index>(cols));
}

// ---------------------------------------------------------------------------
// Broadcasting

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
};

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> strides(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) strides[i - 1] = strides[i] * s[i];
  return strides;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Broadcast bc;
  bc.out.assign(r, 1);
  bc.stride_a.assign(r, 0);
  bc.stride_b.assign(r, 0);
  const auto sa = row_major_strides(a);
  const auto sb = row_major_strides(b);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ea = i + a.size() >= r ? a[i + a.size() - r] : 1;
    const std::size_t eb = i + b.size() >= r ? b[i + b.size() - r] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                           shape_str(b));
    }
    bc.out[i] = std::max(ea, eb);
    if (ea != 1) bc.stride_a[i] = sa[i + a.size() - r];
    if (eb != 1) bc.stride_b[i] = sb[i + b.size() - r];
  }
  return bc;
}

// Calls f(out_index, a_offset, b_offset) in row-major output order.
template <typename F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  const std::size_t r = bc.out.size();
  if (r == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t inner = bc.out[r - 1];
  const std::size_t ia = bc.stride_a[r - 1];
  const std::size_t ib = bc.stride_b[r - 1];
  const std::size_t total = shape_numel(bc.out);
  if (total == 0) return;
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0;
  std::size_t ob = 0;
  for (std::size_t base = 0; base < total; base += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(base + j, oa + j * ia, ob + j * ib);
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      oa += bc.stride_a[d];
      ob += bc.stride_b[d];
      if (idx[d] < bc.out[d]) break;
      oa -= bc.stride_a[d] * idx[d];
      ob -= bc.stride_b[d] * idx[d];
      idx[d] = 0;
    }
  }
}

template <typename T, typename Fwd, typename GradA, typename GradB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* op, Fwd fwd, GradA ga,
                 GradB gb) {
  auto bc = plan_broadcast(a.shape(), b.shape(), op);
  std::vector<T> out(shape_numel(bc.out));
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) {
    out[o] = fwd(av[i], bv[j]);
  });
  NodePtrT<T> pa = a.node();
  NodePtrT<T> pb = b.node();
  return detail::make_result<T>(
      bc.out, std::move(out), op, {pa, pb}, [bc, ga, gb](NodeT<T>& self) {
        auto& A = *self.parents[0];
        auto& B = *self.parents[1];
        for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) {
          const T g = self.grad[o];
          if (A.requires_grad) A.grad[i] += ga(g, A.value[i], B.value[j]);
          if (B.requires_grad) B.grad[j] += gb(g, A.value[i], B.value[j]);
        });
      });
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, const char* op, Fwd fwd, Deriv deriv) {
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return detail::make_result<T>(x.shape(), std::move(out), op, {x.node()},
                                [deriv](NodeT<T>& self) {
                                  auto& X = *self.parents[0];
                                  for (std::size_t i = 0; i < X.value.size(); ++i) {
                                    X.grad[i] += self.grad[i] * deriv(X.value[i], self.value[i]);
                                  }
                                });
}

std::size_t rows_of(const Shape& s) {
  std::size_t rows = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) rows *= s[i];
  return rows;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      a, b, "add", [](T x, T y) { return x + y; }, [](T g, T, T) { return g; },
      [](T g, T, T) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T g, T, T) { return g; },
      [](T g, T, T) { return -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
      [](T g, T x, T) { return g * x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, std::type_identity_t<T> factor) {
  return unary<T>(
      x, "scale", [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, std::type_identity_t<T> offset) {
  return unary<T>(
      x, "add_scalar", [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

// ---------------------------------------------------------------------------
// Matmul class

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  std::vector<T> out(m * p);
  view(out, m, p).noalias() = view(a.node()->value, m, k) * view(b.node()->value, k, p);
  OpCounter::add(static_cast<std::uint64_t>(m) * k * p);
  return detail::make_result<T>({m, p}, std::move(out), "matmul", {a.node(), b.node()},
                                [m, k, p](NodeT<T>& self) {
                                  auto& A = *self.parents[0];
                                  auto& B = *self.parents[1];
                                  auto g = view(self.grad, m, p);
                                  if (A.requires_grad) {
                                    view(A.grad, m, k).noalias() +=
                                        g * view(B.value, k, p).transpose();
                                  }
                                  if (B.requires_grad) {
                                    view(B.grad, k, p).noalias() +=
                                        view(A.value, m, k).transpose() * g;
                                  }
                                });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() < 2 || sa.size() != sb.size() ||
      !std::equal(sa.begin(), sa.end() - 2, sb.begin()) || sa[sa.size() - 1] != sb[sb.size() - 2]) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  }
  const std::size_t m = sa[sa.size() - 2], k = sa.back(), p = sb.back();
  const std::size_t batch = shape_numel(sa) / (m * k);
  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(p);
  std::vector<T> out(batch * m * p);
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < batch; ++i) {
    view(out, m, p, i * m * p).noalias() = view(av, m, k, i * m * k) * view(bv, k, p, i * k * p);
  }
  OpCounter::add(static_cast<std::uint64_t>(batch) * m * k * p);
  return detail::make_result<T>(
      std::move(out_shape), std::move(out), "bmm", {a.node(), b.node()},
      [batch, m, k, p](NodeT<T>& self) {
        auto& A = *self.parents[0];
        auto& B = *self.parents[1];
        for (std::size_t i = 0; i < batch; ++i) {
          auto g = view(self.grad, m, p, i * m * p);
          if (A.requires_grad) {
            view(A.grad, m, k, i * m * k).noalias() += g * view(B.value, k, p, i * k * p).transpose();
          }
          if (B.requires_grad) {
            view(B.grad, k, p, i * k * p).noalias() += view(A.value, m, k, i * m * k).transpose() * g;
          }
        }
      });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() < 1 || weight.rank() != 2 || x.dim(-1) != weight.dim(0)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(weight.shape()));
  }
  const std::size_t in = weight.dim(0), out_dim = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " vs out " +
                         std::to_string(out_dim));
  }
  const std::size_t rows = rows_of(x.shape());
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  std::vector<T> out(rows * out_dim);
  auto y = view(out, rows, out_dim);
  y.noalias() = view(x.node()->value, rows, in) * view(weight.node()->value, in, out_dim);
  if (bias.defined()) {
    const auto& bv = bias.node()->value;
    for (std::size_t r = 0; r < rows; ++r) {
      T* row = out.data() + r * out_dim;
      for (std::size_t c = 0; c < out_dim; ++c) row[c] += bv[c];
    }
  }
  OpCounter::add(static_cast<std::uint64_t>(rows) * in * out_dim);
  std::vector<NodePtrT<T>> parents{x.node(), weight.node()};
  if (bias.defined()) parents.push_back(bias.node());
  return detail::make_result<T>(
      std::move(out_shape), std::move(out), "linear", std::move(parents),
      [rows, in, out_dim](NodeT<T>& self) {
        auto& X = *self.parents[0];
        auto& W = *self.parents[1];
        auto g = view(self.grad, rows, out_dim);
        if (X.requires_grad) {
          view(X.grad, rows, in).noalias() += g * view(W.value, in, out_dim).transpose();
        }
        if (W.requires_grad) {
          view(W.grad, in, out_dim).noalias() += view(X.value, rows, in).transpose() * g;
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
          auto& Bn = *self.parents[2];
          for (std::size_t r = 0; r < rows; ++r) {
            const T* row = self.grad.data() + r * out_dim;
            for (std::size_t c = 0; c < out_dim; ++c) Bn.grad[c] += row[c];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Layout

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return detail::make_result<T>(std::move(shape), x.node()->value, "reshape", {x.node()},
                                [](NodeT<T>& self) {
                                  auto& X = *self.parents[0];
                                  for (std::size_t i = 0; i < X.grad.size(); ++i) {
                                    X.grad[i] += self.grad[i];
                                  }
                                });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  const Shape& in = x.shape();
  const std::size_t r = in.size();
  std::vector<bool> seen(r, false);
  if (order.size() != r) throw DimensionError("permute: order rank mismatch");
  for (auto o : order) {
    if (o >= r || seen[o]) throw DimensionError("permute: invalid axis order");
    seen[o] = true;
  }
  Shape out_shape(r);
  const auto in_strides = row_major_strides(in);
  Broadcast walk;  // reuse the odometer: "a" strides gather from the input
  walk.out.resize(r);
  walk.stride_a.resize(r);
  walk.stride_b.assign(r, 0);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in[order[i]];
    walk.out[i] = in[order[i]];
    walk.stride_a[i] = in_strides[order[i]];
  }
  std::vector<std::size_t> source(x.numel());
  for_each_broadcast(walk, [&](std::size_t o, std::size_t i, std::size_t) { source[o] = i; });
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size());
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = xv[source[o]];
  return detail::make_result<T>(std::move(out_shape), std::move(out), "permute", {x.node()},
                                [source = std::move(source)](NodeT<T>& self) {
                                  auto& X = *self.parents[0];
                                  for (std::size_t o = 0; o < source.size(); ++o) {
                                    X.grad[source[o]] += self.grad[o];
                                  }
                                });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& in = x.shape();
  if (axis >= in.size() || start + length > in[axis]) {
    throw DimensionError("slice: axis " + std::to_string(axis) + " range [" +
                         std::to_string(start) + ", " + std::to_string(start + length) +
                         ") outside " + shape_str(in));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  const std::size_t span_in = in[axis] * inner;
  const std::size_t span_out = length * inner;
  Shape out_shape = in;
  out_shape[axis] = length;
  std::vector<T> out(outer * span_out);
  const auto& xv = x.node()->value;
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(o * span_in + start * inner), span_out,
                out.begin() + static_cast<std::ptrdiff_t>(o * span_out));
  }
  return detail::make_result<T>(
      std::move(out_shape), std::move(out), "slice", {x.node()},
      [outer, span_in, span_out, offset = start * inner](NodeT<T>& self) {
        auto& X = *self.parents[0];
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t j = 0; j < span_out; ++j) {
            X.grad[o * span_in + offset + j] += self.grad[o * span_out + j];
          }
        }
      });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(first));
    }
    out_shape[axis] += s[axis];
    widths.push_back(s[axis] * inner);
  }
  const std::size_t row = out_shape[axis] * inner;
  std::vector<T> out(outer * row);
  std::vector<NodePtrT<T>> parents;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].node()->value;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * widths[k]), widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(o * row + offset));
    }
    offset += widths[k];
    parents.push_back(parts[k].node());
  }
  return detail::make_result<T>(std::move(out_shape), std::move(out), "concat", std::move(parents),
                                [outer, row, widths](NodeT<T>& self) {
                                  std::size_t offset = 0;
                                  for (std::size_t k = 0; k < widths.size(); ++k) {
                                    auto& P = *self.parents[k];
                                    if (P.requires_grad) {
                                      for (std::size_t o = 0; o < outer; ++o) {
                                        for (std::size_t j = 0; j < widths[k]; ++j) {
                                          P.grad[o * widths[k] + j] +=
                                              self.grad[o * row + offset + j];
                                        }
                                      }
                                    }
                                    offset += widths[k];
                                  }
                                });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<std::size_t>& indices) {
  if (table.rank() != 2) throw DimensionError("gather_rows: table must be 2-D");
  const std::size_t rows = table.dim(0), width = table.dim(1);
  std::vector<T> out(indices.size() * width);
  const auto& tv = table.node()->value;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows) {
      throw DimensionError("gather_rows: index " + std::to_string(indices[i]) + " >= " +
                           std::to_string(rows));
    }
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(indices[i] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  return detail::make_result<T>({indices.size(), width}, std::move(out), "gather_rows",
                                {table.node()}, [indices, width](NodeT<T>& self) {
                                  auto& Tb = *self.parents[0];
                                  for (std::size_t i = 0; i < indices.size(); ++i) {
                                    for (std::size_t j = 0; j < width; ++j) {
                                      Tb.grad[indices[i] * width + j] += self.grad[i * width + j];
                                    }
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Nonlinearities

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, std::type_identity_t<T> eps) {
  if (x.rank() < 1) throw DimensionError("layer_norm: scalar input");
  const std::size_t width = x.dim(-1);
  const std::size_t rows = rows_of(x.shape());
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * width;
    T mu = 0;
    for (std::size_t j = 0; j < width; ++j) mu += in[j];
    mu /= static_cast<T>(width);
    T var = 0;
    for (std::size_t j = 0; j < width; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<T>(width);
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = (in[j] - mu) * inv;
  }
  return detail::make_result<T>(
      x.shape(), std::move(out), "layer_norm", {x.node()},
      [rows, width, inv_std = std::move(inv_std)](NodeT<T>& self) {
        auto& X = *self.parents[0];
        for (std::size_t r = 0; r < rows; ++r) {
          const T* g = self.grad.data() + r * width;
          const T* y = self.value.data() + r * width;
          T mean_g = 0, mean_gy = 0;
          for (std::size_t j = 0; j < width; ++j) {
            mean_g += g[j];
            mean_gy += g[j] * y[j];
          }
          mean_g /= static_cast<T>(width);
          mean_gy /= static_cast<T>(width);
          for (std::size_t j = 0; j < width; ++j) {
            X.grad[r * width + j] += inv_std[r] * (g[j] - mean_g - y[j] * mean_gy);
          }
        }
      });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = static_cast<T>(0.044715);
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size());
  std::vector<T> th(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T v = xv[i];
    // tanh(u) = 1 - 2 / (exp(2u) + 1); saturates cleanly for large |u|.
    const T u = c * (v + a * v * v * v);
    th[i] = T(1) - T(2) / (std::exp(T(2) * u) + T(1));
    out[i] = T(0.5) * v * (T(1) + th[i]);
  }
  return detail::make_result<T>(
      x.shape(), std::move(out), "gelu", {x.node()}, [th = std::move(th)](NodeT<T>& self) {
        auto& X = *self.parents[0];
        for (std::size_t i = 0; i < th.size(); ++i) {
          const T v = X.value[i];
          const T d = T(0.5) * (T(1) + th[i]) +
                      T(0.5) * v * (T(1) - th[i] * th[i]) * c * (T(1) + T(3) * a * v * v);
          X.grad[i] += self.grad[i] * d;
        }
      });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return unary<T>(
      x, "silu", [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.rank() < 1) throw DimensionError("softmax: scalar input");
  const std::size_t width = x.dim(-1);
  const std::size_t rows = rows_of(x.shape());
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * width;
    T* o = out.data() + r * width;
    const T mx = *std::max_element(in, in + width);
    T total = 0;
    for (std::size_t j = 0; j < width; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    const T inv = T(1) / total;
    for (std::size_t j = 0; j < width; ++j) o[j] *= inv;
  }
  return detail::make_result<T>(x.shape(), std::move(out), "softmax", {x.node()},
                                [rows, width](NodeT<T>& self) {
                                  auto& X = *self.parents[0];
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    const T* g = self.grad.data() + r * width;
                                    const T* y = self.value.data() + r * width;
                                    T dot = 0;
                                    for (std::size_t j = 0; j < width; ++j) dot += g[j] * y[j];
                                    for (std::size_t j = 0; j < width; ++j) {
                                      X.grad[r * width + j] += y[j] * (g[j] - dot);
                                    }
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (const T v : x.node()->value) total += v;
  return detail::make_result<T>({}, {total}, "sum", {x.node()}, [](NodeT<T>& self) {
    auto& X = *self.parents[0];
    for (auto& g : X.grad) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean: empty tensor");
  T total = 0;
  for (const T v : x.node()->value) total += v;
  const T inv = T(1) / static_cast<T>(x.numel());
  return detail::make_result<T>({}, {total * inv}, "mean", {x.node()}, [inv](NodeT<T>& self) {
    auto& X = *self.parents[0];
    for (auto& g : X.grad) g += self.grad[0] * inv;
  });
}

template <typename T>
Tensor<T> mse(const Tensor<T>& prediction, const Tensor<T>& target) {
  if (prediction.shape() != target.shape()) {
    throw DimensionError("mse: " + shape_str(prediction.shape()) + " vs " +
                         shape_str(target.shape()));
  }
  if (prediction.numel() == 0) throw DimensionError("mse: empty tensor");
  const auto& pv = prediction.node()->value;
  const auto& tv = target.node()->value;
  T total = 0;
  for (std::size_t i = 0; i < pv.size(); ++i) total += (pv[i] - tv[i]) * (pv[i] - tv[i]);
  const T inv = T(1) / static_cast<T>(pv.size());
  return detail::make_result<T>({}, {total * inv}, "mse", {prediction.node(), target.node()},
                                [inv](NodeT<T>& self) {
                                  auto& P = *self.parents[0];
                                  auto& Q = *self.parents[1];
                                  const T g = self.grad[0] * T(2) * inv;
                                  for (std::size_t i = 0; i < P.value.size(); ++i) {
                                    const T d = g * (P.value[i] - Q.value[i]);
                                    if (P.requires_grad) P.grad[i] += d;
                                    if (Q.requires_grad) Q.grad[i] -= d;
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Masking and non-differentiable

template <typename T>
Tensor<T> mask_replace(const Tensor<T>& x, const std::vector<std::uint8_t>& mask,
                       const Tensor<T>& token) {
  if (x.rank() != 3 || token.rank() != 1 || token.dim(0) != x.dim(2)) {
    throw DimensionError("mask_replace: tokens " + shape_str(x.shape()) + " vs mask token " +
                         shape_str(token.shape()));
  }
  const std::size_t batch = x.dim(0), n = x.dim(1), width = x.dim(2);
  if (mask.size() != n && mask.size() != batch * n) {
    throw DimensionError("mask_replace: mask of " + std::to_string(mask.size()) +
                         " entries for " + std::to_string(batch) + "x" + std::to_string(n) +
                         " tokens");
  }
  const bool shared = mask.size() == n && batch != 1;
  auto masked = [&mask, shared, n](std::size_t row) {
    return mask[shared ? row % n : row] != 0;
  };
  std::vector<T> out = x.node()->value;
  const auto& tv = token.node()->value;
  for (std::size_t row = 0; row < batch * n; ++row) {
    if (masked(row)) std::copy(tv.begin(), tv.end(), out.begin() + static_cast<std::ptrdiff_t>(row * width));
  }
  return detail::make_result<T>(
      x.shape(), std::move(out), "mask_replace", {x.node(), token.node()},
      [mask, shared, n, batch, width](NodeT<T>& self) {
        auto& X = *self.parents[0];
        auto& Tk = *self.parents[1];
        for (std::size_t row = 0; row < batch * n; ++row) {
          const bool m = mask[shared ? row % n : row] != 0;
          const T* g = self.grad.data() + row * width;
          if (m) {
            if (Tk.requires_grad) {
              for (std::size_t j = 0; j < width; ++j) Tk.grad[j] += g[j];
            }
          } else if (X.requires_grad) {
            for (std::size_t j = 0; j < width; ++j) X.grad[row * width + j] += g[j];
          }
        }
      });
}

template <typename T>
Tensor<T> round(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto& xv = x.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::round(xv[i]);
  return detail::make_result<T>(x.shape(), std::move(out), "round", {x.node()}, nullptr);
}

// ---------------------------------------------------------------------------

#define EDT_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> scale(const Tensor<T>&, T);                                            \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                       \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                      \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);            \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);        \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                    \
  template Tensor<T> gather_rows(const Tensor<T>&, const std::vector<std::size_t>&);        \
  template Tensor<T> layer_norm(const Tensor<T>&, T);                                       \
  template Tensor<T> gelu(const Tensor<T>&);                                                \
  template Tensor<T> silu(const Tensor<T>&);                                                \
  template Tensor<T> softmax(const Tensor<T>&);                                             \
  template Tensor<T> sum(const Tensor<T>&);                                                 \
  template Tensor<T> mean(const Tensor<T>&);                                                \
  template Tensor<T> mse(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mask_replace(const Tensor<T>&, const std::vector<std::uint8_t>&,       \
                                  const Tensor<T>&);                                        \
  template Tensor<T> round(const Tensor<T>&);

EDT_INSTANTIATE_OPS(float)
EDT_INSTANTIATE_OPS(double)

#undef EDT_INSTANTIATE_OPS

}  // namespace edt

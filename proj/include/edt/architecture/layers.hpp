#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "edt/amm/amm.hpp"
#include "edt/numerics/ops.hpp"

namespace edt::arch {

/// Ordered, named parameter list shared by a model and its modules.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
  };

  Tensor<T> add(std::string name, Tensor<T> tensor);
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Tensor<T>> tensors() const;
  std::size_t count() const;
  const Tensor<T>* find(const std::string& name) const;

 private:
  std::vector<Entry> entries_;
};

enum class Init { kXavier, kZero, kNormal002 };

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out], undefined when bias-free

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
         bool with_bias, Init init, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

/// Fixed 2-D sin-cos table [side*side, dim]: the first half of the channels
/// encodes the row index, the second half the column index.
std::vector<double> sincos_2d(std::size_t side, std::size_t dim);

/// Sinusoidal timestep features [B, dim].
std::vector<double> timestep_features(const std::vector<double>& t, std::size_t dim);

/// layer_norm(x) * (1 + scale) + shift with scale/shift [B, d] broadcast over tokens.
template <typename T>
Tensor<T> adaln_modulate(const Tensor<T>& x, const Tensor<T>& shift, const Tensor<T>& scale);

/// [B, N*N, d] -> [B, N*N/4, 4d]: each output token concatenates its 2x2
/// source window in order (2X,2Y), (2X,2Y+1), (2X+1,2Y), (2X+1,2Y+1).
template <typename T>
Tensor<T> merge_2x2(const Tensor<T>& tokens, std::size_t side);

/// Inverse of merge_2x2: [B, M*M, 4d] -> [B, 4*M*M, d].
template <typename T>
Tensor<T> split_2x2(const Tensor<T>& tokens, std::size_t side);

/// Optional capture of named intermediate activations.
template <typename T>
using Trace = std::vector<std::pair<std::string, Tensor<T>>>;

/// AdaLN -> MHSA -> FFN block with zero-initialized gates. Every linear is
/// bias-free so the block holds exactly 18 d^2 parameters.
template <typename T>
class EdtBlock {
 public:
  EdtBlock(ParamStore<T>& store, const std::string& name, std::size_t dim, std::size_t heads,
           Rng& rng);

  /// tokens [B, n, d], cond [B, d]. `amm` (may be null) modulates post-softmax
  /// scores before the value product.
  Tensor<T> operator()(const Tensor<T>& tokens, const Tensor<T>& cond,
                       const amm::ModulationMatrix* amm = nullptr) const;

  std::size_t dim() const { return dim_; }
  std::size_t heads() const { return heads_; }

 private:
  std::size_t dim_;
  std::size_t heads_;
  Linear<T> modulation_;  // d -> 6d
  Linear<T> qkv_;         // d -> 3d
  Linear<T> proj_;        // d -> d
  Linear<T> fc1_;         // d -> 4d
  Linear<T> fc2_;         // 4d -> d
};

/// Replaces merged tokens before mask substitution. Used to probe that
/// masked positions carry no information downstream.
template <typename T>
using TokenRewrite = std::function<Tensor<T>(const Tensor<T>&)>;

/// Condition-modulated 2x2 merge with dimension expansion, optional mask
/// substitution and the merged grid's positional encoding.
template <typename T>
class Downsample {
 public:
  Downsample(ParamStore<T>& store, const std::string& name, std::size_t side, std::size_t dim_in,
             std::size_t dim_out, Rng& rng);

  /// mask: empty, n_out bytes (shared) or B*n_out bytes; true = masked.
  Tensor<T> operator()(const Tensor<T>& tokens, const Tensor<T>& cond,
                       const std::vector<std::uint8_t>* mask = nullptr,
                       Trace<T>* trace = nullptr,
                       const TokenRewrite<T>* rewrite = nullptr) const;

  std::size_t side_in() const { return side_; }
  const Tensor<T>& mask_token() const { return mask_token_; }
  const Tensor<T>& positional() const { return pos_; }

 private:
  std::size_t side_;
  std::size_t dim_in_;
  std::size_t dim_out_;
  Linear<T> modulation_;  // d_in -> 2 d_in
  Linear<T> proj_;        // 4 d_in -> d_out
  Tensor<T> mask_token_;
  Tensor<T> pos_;  // [n_out, d_out], constant
};

template <typename T>
class Upsample {
 public:
  Upsample(ParamStore<T>& store, const std::string& name, std::size_t side_in, std::size_t dim_in,
           std::size_t dim_out, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& tokens) const;

 private:
  std::size_t side_in_;
  std::size_t dim_out_;
  Linear<T> proj_;  // d_in -> 4 d_out
};

/// Encoder branch AdaLN, channel concat with the decoder branch, projection
/// to the decoder dim and positional encoding.
template <typename T>
class LongSkip {
 public:
  LongSkip(ParamStore<T>& store, const std::string& name, std::size_t side, std::size_t dim_enc,
           std::size_t dim_dec, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& encoder, const Tensor<T>& decoder,
                       const Tensor<T>& cond) const;
  const Tensor<T>& positional() const { return pos_; }

 private:
  std::size_t dim_enc_;
  Linear<T> modulation_;  // d_enc -> 2 d_enc
  Linear<T> proj_;        // d_enc + d_dec -> d_dec
  Tensor<T> pos_;
};

}  // namespace edt::arch

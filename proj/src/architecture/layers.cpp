#include "edt/architecture/layers.hpp"

#include <cmath>

#include "edt/error.hpp"

namespace edt::arch {

template <typename T>
Tensor<T> ParamStore<T>::add(std::string name, Tensor<T> tensor) {
  for (const auto& e : entries_) {
    if (e.name == name) throw ConfigError("duplicate parameter name " + name);
  }
  tensor.set_requires_grad(true);
  entries_.push_back({std::move(name), tensor});
  return tensor;
}

template <typename T>
std::vector<Tensor<T>> ParamStore<T>::tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.tensor);
  return out;
}

template <typename T>
std::size_t ParamStore<T>::count() const {
  std::size_t total = 0;
  for (const auto& e : entries_) total += e.tensor.numel();
  return total;
}

template <typename T>
const Tensor<T>* ParamStore<T>::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e.tensor;
  }
  return nullptr;
}

namespace {

template <typename T>
Tensor<T> init_tensor(Shape shape, Init init, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  std::vector<T> data(shape_numel(shape), T(0));
  switch (init) {
    case Init::kZero:
      break;
    case Init::kXavier: {
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      for (auto& v : data) v = static_cast<T>(rng.uniform(-limit, limit));
      break;
    }
    case Init::kNormal002:
      for (auto& v : data) v = static_cast<T>(0.02 * rng.normal());
      break;
  }
  return Tensor<T>::from(std::move(shape), std::move(data));
}

template <typename T>
Tensor<T> constant(const std::vector<double>& values, Shape shape) {
  return Tensor<T>::from(std::move(shape), std::vector<T>(values.begin(), values.end()));
}

}  // namespace

template <typename T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                  bool with_bias, Init init, Rng& rng) {
  weight = store.add(name + ".weight", init_tensor<T>({in, out}, init, in, out, rng));
  if (with_bias) bias = store.add(name + ".bias", Tensor<T>::zeros({out}));
}

std::vector<double> sincos_2d(std::size_t side, std::size_t dim) {
  if (dim % 4 != 0) throw DimensionError("sincos_2d: dim must be a multiple of 4");
  const std::size_t quarter = dim / 4;
  std::vector<double> table(side * side * dim);
  for (std::size_t x = 0; x < side; ++x) {
    for (std::size_t y = 0; y < side; ++y) {
      double* row = table.data() + (x * side + y) * dim;
      for (std::size_t k = 0; k < quarter; ++k) {
        const double omega =
            1.0 / std::pow(10000.0, static_cast<double>(k) / static_cast<double>(quarter));
        row[k] = std::sin(static_cast<double>(x) * omega);
        row[quarter + k] = std::cos(static_cast<double>(x) * omega);
        row[2 * quarter + k] = std::sin(static_cast<double>(y) * omega);
        row[3 * quarter + k] = std::cos(static_cast<double>(y) * omega);
      }
    }
  }
  return table;
}

std::vector<double> timestep_features(const std::vector<double>& t, std::size_t dim) {
  const std::size_t half = dim / 2;
  std::vector<double> out(t.size() * dim);
  for (std::size_t b = 0; b < t.size(); ++b) {
    for (std::size_t k = 0; k < half; ++k) {
      const double freq =
          std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
      out[b * dim + k] = std::cos(t[b] * freq);
      out[b * dim + half + k] = std::sin(t[b] * freq);
    }
  }
  return out;
}

template <typename T>
Tensor<T> adaln_modulate(const Tensor<T>& x, const Tensor<T>& shift, const Tensor<T>& scale) {
  const std::size_t batch = x.dim(0), width = x.dim(-1);
  auto s = reshape(scale, {batch, 1, width});
  auto b = reshape(shift, {batch, 1, width});
  return add(mul(layer_norm(x), add_scalar(s, T(1))), b);
}

template <typename T>
Tensor<T> merge_2x2(const Tensor<T>& tokens, std::size_t side) {
  if (tokens.rank() != 3 || side % 2 != 0 || tokens.dim(1) != side * side) {
    throw DimensionError("merge_2x2: tokens " + shape_str(tokens.shape()) +
                         " are not an even square grid of side " + std::to_string(side));
  }
  const std::size_t batch = tokens.dim(0), d = tokens.dim(2), half = side / 2;
  auto grid = reshape(tokens, {batch, half, 2, half, 2, d});
  auto windows = permute(grid, {0, 1, 3, 2, 4, 5});
  return reshape(windows, {batch, half * half, 4 * d});
}

template <typename T>
Tensor<T> split_2x2(const Tensor<T>& tokens, std::size_t side) {
  if (tokens.rank() != 3 || tokens.dim(1) != side * side || tokens.dim(2) % 4 != 0) {
    throw DimensionError("split_2x2: tokens " + shape_str(tokens.shape()) +
                         " incompatible with grid side " + std::to_string(side));
  }
  const std::size_t batch = tokens.dim(0), d = tokens.dim(2) / 4;
  auto windows = reshape(tokens, {batch, side, side, 2, 2, d});
  auto grid = permute(windows, {0, 1, 3, 2, 4, 5});
  return reshape(grid, {batch, 4 * side * side, d});
}

// ---------------------------------------------------------------------------

template <typename T>
EdtBlock<T>::EdtBlock(ParamStore<T>& store, const std::string& name, std::size_t dim,
                      std::size_t heads, Rng& rng)
    : dim_(dim),
      heads_(heads),
      modulation_(store, name + ".adaln", dim, 6 * dim, false, Init::kZero, rng),
      qkv_(store, name + ".attn.qkv", dim, 3 * dim, false, Init::kXavier, rng),
      proj_(store, name + ".attn.proj", dim, dim, false, Init::kXavier, rng),
      fc1_(store, name + ".mlp.fc1", dim, 4 * dim, false, Init::kXavier, rng),
      fc2_(store, name + ".mlp.fc2", 4 * dim, dim, false, Init::kXavier, rng) {
  if (heads == 0 || dim % heads != 0) {
    throw DimensionError("EdtBlock: dim " + std::to_string(dim) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
}

template <typename T>
Tensor<T> EdtBlock<T>::operator()(const Tensor<T>& tokens, const Tensor<T>& cond,
                                  const amm::ModulationMatrix* amm) const {
  if (tokens.rank() != 3 || tokens.dim(2) != dim_) {
    throw DimensionError("EdtBlock: tokens " + shape_str(tokens.shape()) + " for dim " +
                         std::to_string(dim_));
  }
  const std::size_t batch = tokens.dim(0), n = tokens.dim(1), d = dim_;
  const std::size_t head_dim = d / heads_;
  if (amm && amm->tokens() != n) {
    throw DimensionError("EdtBlock: AMM for " + std::to_string(amm->tokens()) +
                         " tokens applied to " + std::to_string(n) + " tokens");
  }
  auto mod = modulation_(silu(cond));
  auto piece = [&](std::size_t k) { return slice(mod, 1, k * d, d); };

  auto h = adaln_modulate(tokens, piece(0), piece(1));
  auto qkv = permute(reshape(qkv_(h), {batch, n, 3, heads_, head_dim}), {2, 0, 3, 1, 4});
  const Shape head_shape{batch, heads_, n, head_dim};
  auto q = scale(reshape(slice(qkv, 0, 0, 1), head_shape),
                 static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim))));
  auto k = reshape(slice(qkv, 0, 1, 1), head_shape);
  auto v = reshape(slice(qkv, 0, 2, 1), head_shape);
  auto scores = softmax(bmm(q, permute(k, {0, 1, 3, 2})));
  if (amm) scores = amm::modulate(scores, *amm);
  auto attended = reshape(permute(bmm(scores, v), {0, 2, 1, 3}), {batch, n, d});
  auto x = add(tokens, mul(reshape(piece(2), {batch, 1, d}), proj_(attended)));

  h = adaln_modulate(x, piece(3), piece(4));
  auto ffn = fc2_(gelu(fc1_(h)));
  return add(x, mul(reshape(piece(5), {batch, 1, d}), ffn));
}

// ---------------------------------------------------------------------------

template <typename T>
Downsample<T>::Downsample(ParamStore<T>& store, const std::string& name, std::size_t side,
                          std::size_t dim_in, std::size_t dim_out, Rng& rng)
    : side_(side),
      dim_in_(dim_in),
      dim_out_(dim_out),
      modulation_(store, name + ".adaln", dim_in, 2 * dim_in, true, Init::kZero, rng),
      proj_(store, name + ".proj", 4 * dim_in, dim_out, true, Init::kXavier, rng) {
  if (side % 2 != 0) throw DimensionError("Downsample: odd grid side " + std::to_string(side));
  mask_token_ = store.add(name + ".mask_token", init_tensor<T>({dim_out}, Init::kNormal002, 0, 0, rng));
  const std::size_t half = side / 2;
  pos_ = constant<T>(sincos_2d(half, dim_out), {half * half, dim_out});
}

template <typename T>
Tensor<T> Downsample<T>::operator()(const Tensor<T>& tokens, const Tensor<T>& cond,
                                    const std::vector<std::uint8_t>* mask, Trace<T>* trace,
                                    const TokenRewrite<T>* rewrite) const {
  if (tokens.rank() != 3 || tokens.dim(1) != side_ * side_ || tokens.dim(2) != dim_in_) {
    throw DimensionError("Downsample: tokens " + shape_str(tokens.shape()) + " for grid " +
                         std::to_string(side_) + " dim " + std::to_string(dim_in_));
  }
  auto mod = modulation_(silu(cond));
  auto h = adaln_modulate(tokens, slice(mod, 1, 0, dim_in_), slice(mod, 1, dim_in_, dim_in_));
  auto merged = proj_(merge_2x2(h, side_));
  if (rewrite) merged = (*rewrite)(merged);
  if (trace) trace->emplace_back("merged", merged);
  if (mask && !mask->empty()) merged = mask_replace(merged, *mask, mask_token_);
  return add(merged, pos_);
}

template <typename T>
Upsample<T>::Upsample(ParamStore<T>& store, const std::string& name, std::size_t side_in,
                      std::size_t dim_in, std::size_t dim_out, Rng& rng)
    : side_in_(side_in),
      dim_out_(dim_out),
      proj_(store, name + ".proj", dim_in, 4 * dim_out, true, Init::kXavier, rng) {}

template <typename T>
Tensor<T> Upsample<T>::operator()(const Tensor<T>& tokens) const {
  return split_2x2(proj_(tokens), side_in_);
}

template <typename T>
LongSkip<T>::LongSkip(ParamStore<T>& store, const std::string& name, std::size_t side,
                      std::size_t dim_enc, std::size_t dim_dec, Rng& rng)
    : dim_enc_(dim_enc),
      modulation_(store, name + ".adaln", dim_enc, 2 * dim_enc, true, Init::kZero, rng),
      proj_(store, name + ".proj", dim_enc + dim_dec, dim_dec, true, Init::kXavier, rng) {
  pos_ = constant<T>(sincos_2d(side, dim_dec), {side * side, dim_dec});
}

template <typename T>
Tensor<T> LongSkip<T>::operator()(const Tensor<T>& encoder, const Tensor<T>& decoder,
                                  const Tensor<T>& cond) const {
  if (encoder.rank() != 3 || decoder.rank() != 3 || encoder.dim(0) != decoder.dim(0) ||
      encoder.dim(1) != decoder.dim(1)) {
    throw DimensionError("LongSkip: encoder " + shape_str(encoder.shape()) + " vs decoder " +
                         shape_str(decoder.shape()));
  }
  auto mod = modulation_(silu(cond));
  auto enc = adaln_modulate(encoder, slice(mod, 1, 0, dim_enc_), slice(mod, 1, dim_enc_, dim_enc_));
  return add(proj_(concat<T>({enc, decoder}, 2)), pos_);
}

#define EDT_INSTANTIATE_LAYERS(T)                                                    \
  template class ParamStore<T>;                                                      \
  template struct Linear<T>;                                                         \
  template class EdtBlock<T>;                                                        \
  template class Downsample<T>;                                                      \
  template class Upsample<T>;                                                        \
  template class LongSkip<T>;                                                        \
  template Tensor<T> adaln_modulate(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> merge_2x2(const Tensor<T>&, std::size_t);                       \
  template Tensor<T> split_2x2(const Tensor<T>&, std::size_t);

EDT_INSTANTIATE_LAYERS(float)
EDT_INSTANTIATE_LAYERS(double)

#undef EDT_INSTANTIATE_LAYERS

}  // namespace edt::arch

#include "edt/masking/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "edt/error.hpp"

namespace edt::masking {

std::size_t MaskGrid::count() const {
  return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), std::uint8_t{1}));
}

double MaskGrid::fraction() const {
  return cells.empty() ? 0.0 : static_cast<double>(count()) / static_cast<double>(cells.size());
}

std::size_t masked_count(double ratio, const RatioRange& range, std::size_t tokens) {
  const auto bounds = count_bounds(range, tokens);
  if (bounds.empty()) {
    throw ConfigError("mask range [" + std::to_string(range.low) + ", " +
                      std::to_string(range.high) + "] admits no whole count over " +
                      std::to_string(tokens) + " tokens");
  }
  const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(tokens)));
  return std::clamp(k, bounds.min, bounds.max);
}

std::vector<std::uint8_t> sample_positions(std::size_t tokens, std::size_t count, Rng& rng) {
  if (count > tokens) throw ArgumentError("cannot mask more positions than tokens");
  std::vector<std::size_t> order(tokens);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::uint8_t> cells(tokens, 0);
  // Partial Fisher-Yates: the first `count` slots are a uniform subset.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(tokens - i));
    std::swap(order[i], order[j]);
    cells[order[i]] = 1;
  }
  return cells;
}

MaskGrid sample_mask(std::size_t side, const RatioRange& range, Rng& rng) {
  validate_range(range, "sample_mask");
  MaskGrid grid;
  grid.side = side;
  grid.ratio = rng.uniform(range.low, range.high);
  grid.cells = sample_positions(side * side, masked_count(grid.ratio, range, side * side), rng);
  return grid;
}

namespace {

std::vector<std::uint8_t> batch_mask(std::size_t tokens, const RatioRange& range,
                                     std::size_t batch, Rng& rng) {
  const double ratio = rng.uniform(range.low, range.high);
  const std::size_t k = masked_count(ratio, range, tokens);
  std::vector<std::uint8_t> out;
  out.reserve(batch * tokens);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto cells = sample_positions(tokens, k, rng);
    out.insert(out.end(), cells.begin(), cells.end());
  }
  return out;
}

}  // namespace

arch::TokenMasks sample_token_masks(const arch::ModelConfig& config, const MaskSpec& spec,
                                    std::size_t batch, Rng& rng) {
  spec.validate();
  arch::TokenMasks masks;
  masks.downsample1 = batch_mask(config.stage_tokens(1), spec.stage1, batch, rng);
  masks.downsample2 = batch_mask(config.stage_tokens(2), spec.stage2, batch, rng);
  return masks;
}

arch::TokenMasks sample_input_masks(const arch::ModelConfig& config, double ratio,
                                    std::size_t batch, Rng& rng) {
  validate_range({ratio, ratio}, "input mask");
  const std::size_t n = config.stage_tokens(0);
  const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
  arch::TokenMasks masks;
  for (std::size_t b = 0; b < batch; ++b) {
    const auto cells = sample_positions(n, k, rng);
    masks.input.insert(masks.input.end(), cells.begin(), cells.end());
  }
  return masks;
}

template <typename T>
LossPair<T> edt_training_losses(const arch::EdtModel<T>& model, const Tensor<T>& x_t,
                                const std::vector<double>& t, const std::vector<std::size_t>& y,
                                const Tensor<T>& eps, const arch::TokenMasks& masks) {
  return {mse(model.forward(x_t, t, y), eps), mse(model.forward(x_t, t, y, &masks), eps)};
}

template <typename T>
LossPair<T> mdt_style_losses(const arch::EdtModel<T>& model, const Tensor<T>& x_t,
                             const std::vector<double>& t, const std::vector<std::size_t>& y,
                             const Tensor<T>& eps, double ratio, Rng& rng) {
  const auto masks = sample_input_masks(model.config(), ratio, x_t.dim(0), rng);
  return {mse(model.forward(x_t, t, y), eps), mse(model.forward(x_t, t, y, &masks), eps)};
}

#define EDT_INSTANTIATE_MASKING(T)                                                          \
  template LossPair<T> edt_training_losses(const arch::EdtModel<T>&, const Tensor<T>&,      \
                                           const std::vector<double>&,                      \
                                           const std::vector<std::size_t>&,                 \
                                           const Tensor<T>&, const arch::TokenMasks&);      \
  template LossPair<T> mdt_style_losses(const arch::EdtModel<T>&, const Tensor<T>&,         \
                                        const std::vector<double>&,                         \
                                        const std::vector<std::size_t>&, const Tensor<T>&,  \
                                        double, Rng&);

EDT_INSTANTIATE_MASKING(float)
EDT_INSTANTIATE_MASKING(double)

#undef EDT_INSTANTIATE_MASKING

}  // namespace edt::masking

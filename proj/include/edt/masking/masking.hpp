#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "edt/architecture/model.hpp"
#include "edt/masking/mask_spec.hpp"
#include "edt/numerics/rng.hpp"

namespace edt::masking {

/// Boolean grid over side*side token positions; 1 = masked.
struct MaskGrid {
  std::size_t side = 0;
  double ratio = 0.0;  // the drawn ratio; count() / cells.size() is the realized one
  std::vector<std::uint8_t> cells;

  std::size_t count() const;
  double fraction() const;
};

/// Masked count for a drawn ratio: floor(ratio * n), clamped into the whole
/// counts whose fraction lies inside `range`.
std::size_t masked_count(double ratio, const RatioRange& range, std::size_t tokens);

/// `count` distinct positions out of `tokens`, uniformly without replacement.
std::vector<std::uint8_t> sample_positions(std::size_t tokens, std::size_t count, Rng& rng);

/// Ratio uniform in the range, then masked_count positions without replacement.
MaskGrid sample_mask(std::size_t side, const RatioRange& range, Rng& rng);

/// Masks for both down-sampling modules of a batch. Each module draws one
/// ratio for the batch, then independent positions per sample; the first
/// module is drawn completely before the second.
arch::TokenMasks sample_token_masks(const arch::ModelConfig& config, const MaskSpec& spec,
                                    std::size_t batch, Rng& rng);

/// Input-grid masks for the masked-input variant: floor(ratio * n) patches
/// per sample.
arch::TokenMasks sample_input_masks(const arch::ModelConfig& config, double ratio,
                                    std::size_t batch, Rng& rng);

template <typename T>
struct LossPair {
  Tensor<T> full;
  Tensor<T> masked;

  Tensor<T> total() const { return add(full, masked); }
};

/// Unmasked and masked noise-prediction losses on the same corrupted batch.
template <typename T>
LossPair<T> edt_training_losses(const arch::EdtModel<T>& model, const Tensor<T>& x_t,
                                const std::vector<double>& t, const std::vector<std::size_t>& y,
                                const Tensor<T>& eps, const arch::TokenMasks& masks);

/// Same pair with masking applied to the patch grid before the first stage.
template <typename T>
LossPair<T> mdt_style_losses(const arch::EdtModel<T>& model, const Tensor<T>& x_t,
                             const std::vector<double>& t, const std::vector<std::size_t>& y,
                             const Tensor<T>& eps, double ratio, Rng& rng);

}  // namespace edt::masking

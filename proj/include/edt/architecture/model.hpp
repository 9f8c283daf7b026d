#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "edt/amm/amm.hpp"
#include "edt/architecture/config.hpp"
#include "edt/architecture/layers.hpp"

namespace edt::arch {

/// Token masks for one forward pass; empty vectors mean "no mask". Each
/// vector holds n (shared by the batch) or B*n bytes over its token grid.
struct TokenMasks {
  std::vector<std::uint8_t> downsample1;  // grid after the first merge
  std::vector<std::uint8_t> downsample2;  // grid after the second merge
  std::vector<std::uint8_t> input;        // patch grid, input-masking variant

  bool empty() const { return downsample1.empty() && downsample2.empty() && input.empty(); }
};

/// Optional per-module rewrites of the merged tokens (index 0: first
/// down-sampling, 1: second).
template <typename T>
using MergeRewrites = std::array<TokenRewrite<T>, 2>;

struct AmmOptions {
  double scale = 0.5;
  std::optional<double> radius;  // per-grid default when unset
};

/// [B, C, H, W] -> [B, (H/p)*(W/p), C*p*p], channel-major within a patch.
template <typename T>
Tensor<T> patchify(const Tensor<T>& latent, std::size_t patch);

/// Inverse of patchify for a square grid of side `grid`.
template <typename T>
Tensor<T> unpatchify(const Tensor<T>& tokens, std::size_t channels, std::size_t patch,
                     std::size_t grid);

/// The down/up-sampling diffusion transformer: three encoder stages joined by
/// two down-samplings, two decoder stages reached by up-sampling plus long
/// skips, a final AdaLN head predicting the noise.
template <typename T>
class EdtModel {
 public:
  EdtModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::size_t null_class() const { return config_.class_count; }

  /// x_t [B, C, H, W], timesteps t[B], classes y[B] (class_count = unconditional).
  Tensor<T> forward(const Tensor<T>& x_t, const std::vector<double>& t,
                    const std::vector<std::size_t>& y, const TokenMasks* masks = nullptr,
                    Trace<T>* trace = nullptr,
                    const MergeRewrites<T>* rewrites = nullptr) const;

  /// Combined condition vector [B, d0] (timestep MLP + class embedding).
  Tensor<T> condition(const std::vector<double>& t, const std::vector<std::size_t>& y) const;

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  std::size_t parameter_count() const { return params_.count(); }
  std::size_t block_parameter_count() const;

  const EdtBlock<T>& block(std::size_t stage, std::size_t index) const;
  const Downsample<T>& downsample(std::size_t which) const { return *downs_.at(which); }
  const LongSkip<T>& long_skip(std::size_t which) const { return *skips_.at(which); }
  const Tensor<T>& input_mask_token() const { return input_mask_token_; }

  /// Inference-time attachment: builds (cached) matrices for the decoder grids
  /// per schedule. Parameters are untouched. The schedule must have one flag
  /// per block of each decoder stage, else ConfigError.
  void attach_amm(const AmmOptions& options, const amm::PlacementSchedule& schedule);
  void detach_amm();
  bool amm_attached() const { return amm_schedule_.has_value(); }
  const std::optional<amm::PlacementSchedule>& amm_schedule() const { return amm_schedule_; }

 private:
  Tensor<T> cond_for(const Tensor<T>& base, std::size_t dim) const;

  ModelConfig config_;
  ParamStore<T> params_;
  Linear<T> patch_embed_;
  Tensor<T> patch_pos_;
  Tensor<T> input_mask_token_;
  Linear<T> time_fc1_;
  Linear<T> time_fc2_;
  Tensor<T> class_table_;
  std::map<std::size_t, Linear<T>> cond_proj_;
  std::array<std::vector<std::unique_ptr<EdtBlock<T>>>, kStages> stages_;
  std::array<std::unique_ptr<Downsample<T>>, 2> downs_;
  std::array<std::unique_ptr<Upsample<T>>, 2> ups_;
  std::array<std::unique_ptr<LongSkip<T>>, 2> skips_;  // [0]: stage1<->3, [1]: stage0<->4
  Linear<T> final_modulation_;
  Linear<T> final_proj_;

  std::optional<amm::PlacementSchedule> amm_schedule_;
  std::array<std::vector<std::shared_ptr<const amm::ModulationMatrix>>, 2> amm_blocks_;
};

}  // namespace edt::arch

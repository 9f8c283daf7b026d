#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "edt/masking/mask_spec.hpp"

namespace edt::arch {

inline constexpr std::size_t kStages = 5;
inline constexpr std::size_t kEncoderStages = 3;

/// Inference-time attention modulation settings. An empty schedule means the
/// default alternating schedule over the decoder stages.
struct AmmConfig {
  bool enabled = false;
  double scale = 0.5;
  std::optional<double> radius;  // default sqrt((N-1)^2 + 4) per grid
  std::vector<std::vector<bool>> schedule;

  bool operator==(const AmmConfig&) const = default;
};

struct ModelConfig {
  std::size_t patch_size = 2;
  std::size_t in_channels = 4;
  std::size_t image_size = 16;  // latent height == width
  std::size_t class_count = 8;
  std::size_t time_embed_dim = 64;  // sinusoidal frequency features
  std::array<std::size_t, kStages> stage_blocks{2, 2, 2, 3, 3};
  std::array<std::size_t, kStages> stage_dims{24, 32, 40, 32, 24};
  std::array<std::size_t, kStages> stage_heads{2, 4, 4, 4, 2};
  AmmConfig amm;
  // The second merged grid has 4 tokens; one masked token is the closest
  // realizable fraction to the 0.1-0.2 range used at larger grids.
  masking::MaskSpec mask{{0.4, 0.5}, {0.25, 0.25}, 0};

  /// Grid side after patchify.
  std::size_t grid() const { return image_size / patch_size; }
  /// Grid side of stage s (halved by each down-sampling, restored on the way up).
  std::size_t stage_grid(std::size_t stage) const;
  std::size_t stage_tokens(std::size_t stage) const;
  std::size_t patch_dim() const { return in_channels * patch_size * patch_size; }
  std::size_t total_blocks() const;
  /// Dimension expansion of the down-sampling into stage+1 (stage 0 or 1).
  double expansion(std::size_t stage) const;

  /// Throws ConfigError describing the first violated constraint.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;

  /// 16x16x4 latents, 8 classes; keeps the EDT-S shape ratios at desk scale.
  static ModelConfig nano();
  static ModelConfig small();   // EDT-S/2 at 256x256 (32x32x4 latents)
  static ModelConfig base();    // EDT-B/2
  static ModelConfig xlarge();  // EDT-XL/2
  static ModelConfig preset(const std::string& name);
};

nlohmann::json to_json(const ModelConfig& config);
/// Strict parse: unknown keys are rejected, missing keys keep defaults.
ModelConfig model_config_from_json(const nlohmann::json& j);
ModelConfig load_model_config(const std::filesystem::path& path);
void save_model_config(const ModelConfig& config, const std::filesystem::path& path);

}  // namespace edt::arch

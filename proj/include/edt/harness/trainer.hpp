#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "edt/architecture/model.hpp"
#include "edt/diffusion/diffusion.hpp"
#include "edt/diffusion/optimizer.hpp"
#include "edt/harness/dataset.hpp"

namespace edt::harness {

enum class Strategy {
  kEdt,   // masks inside both down-sampling modules
  kMdt,   // masks on the input patch grid
  kNone,  // unmasked loss only
};

std::string strategy_name(Strategy s);
Strategy parse_strategy(const std::string& name);

struct RunConfig {
  arch::ModelConfig model = arch::ModelConfig::nano();
  DatasetSpec data;
  std::size_t iterations = 6000;
  std::size_t batch_size = 16;
  double lr_start = 1e-3;
  double lr_end = 5e-5;
  double weight_decay = 0.0;
  double p_uncond = 0.1;
  std::size_t diffusion_steps = 1000;
  Strategy strategy = Strategy::kEdt;
  double input_mask_ratio = 0.5;  // kMdt only
  std::size_t checkpoint_every = 1000;
  std::filesystem::path out_dir = "run";
  std::uint64_t seed = 0;

  bool operator==(const RunConfig&) const = default;
};

nlohmann::json to_json(const RunConfig& config);
/// Strict parse. "model" is a preset name, a path to a model config JSON
/// (relative to `base_dir`), or an inline object; referenced files must exist.
RunConfig run_config_from_json(const nlohmann::json& j,
                               const std::filesystem::path& base_dir = ".");
RunConfig load_run_config(const std::filesystem::path& path);

/// Exponential moving average factor used for the smoothed loss columns.
inline constexpr double kLossSmoothing = 0.99;

struct LossRow {
  std::size_t iteration = 0;  // 1-based update index
  double full = 0.0;
  double masked = 0.0;
  double lr = 0.0;
  double full_ema = 0.0;
  double masked_ema = 0.0;
};

std::string loss_log_header();
std::string format_loss_row(const LossRow& row);
/// Parses a log written by the trainer (comment lines skipped).
std::vector<LossRow> read_loss_log(const std::filesystem::path& path);

/// Trend figures of a loss log, taken on the smoothed columns.
struct LossSummary {
  std::size_t rows = 0;
  double initial_full = 0.0;       // first smoothed L_full (equals the first raw value)
  double final_full = 0.0;
  double final_masked = 0.0;
  double full_ratio = 0.0;         // final_full / initial_full
  double full_slope = 0.0;         // least-squares slope over the final third
  double masked_slope = 0.0;
};
/// Throws ArgumentError with fewer than 6 rows.
LossSummary summarize_losses(const std::vector<LossRow>& rows);
nlohmann::json to_json(const LossSummary& summary);

/// Single-writer training loop with checkpoint/resume. Every step draws, in
/// order: batch indices, timesteps, noise, dropout uniforms, then masks, all
/// from one stream whose state is checkpointed, so a resumed run repeats an
/// uninterrupted one bit for bit.
class Trainer {
 public:
  explicit Trainer(RunConfig config, std::size_t threads = 1);
  /// Restores model, optimizer moments, step, random stream and smoothing
  /// state. `out_dir` overrides the stored output directory.
  static Trainer resume(const std::filesystem::path& checkpoint,
                        std::optional<std::filesystem::path> out_dir = std::nullopt,
                        std::size_t threads = 1);

  const RunConfig& config() const { return config_; }
  std::size_t step() const { return step_; }
  const arch::EdtModel<float>& model() const { return *model_; }
  const SyntheticDataset& dataset() const { return dataset_; }

  LossRow train_step();

  /// Trains until `stop_at` (default: config iterations), appending to
  /// out_dir/loss.csv and writing checkpoints every checkpoint_every steps
  /// and at the end. A fresh run first writes the step-0 checkpoint.
  void run(std::optional<std::size_t> stop_at = std::nullopt,
           const std::function<void(const LossRow&)>& progress = {});

  void save_checkpoint(const std::filesystem::path& dir) const;
  std::filesystem::path checkpoint_dir(std::size_t step) const;

 private:
  Trainer(RunConfig config, SyntheticDataset dataset);

  RunConfig config_;
  SyntheticDataset dataset_;
  diffusion::NoiseSchedule schedule_;
  std::unique_ptr<arch::EdtModel<float>> model_;
  std::unique_ptr<diffusion::AdamW<float>> optimizer_;
  Rng rng_;
  std::size_t step_ = 0;
  std::optional<double> full_ema_;
  std::optional<double> masked_ema_;
};

}  // namespace edt::harness

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "edt/architecture/config.hpp"

namespace edt::flops {

/// Multiply-accumulates of one transformer block over n tokens of width d:
/// 2 n^2 d + 12 n d^2 + 6 d^2 (adaLN 6d^2, qkv 3nd^2, scores n^2 d,
/// values n^2 d, projection nd^2, feed-forward 8nd^2).
std::uint64_t block_flops(std::uint64_t n, std::uint64_t d);
/// 18 d^2 (bias-free linears).
std::uint64_t block_params(std::uint64_t d);

/// Block cost after a merge that quarters the tokens and doubles the width:
/// n^2 d / 4 + 12 n d^2 + 24 d^2. Requires n % 4 == 0.
std::uint64_t conventional_after_flops(std::uint64_t n, std::uint64_t d);
/// 72 d^2.
std::uint64_t conventional_after_params(std::uint64_t d);

/// Block cost after a merge that quarters the tokens and widens by r, in real
/// arithmetic: r n^2 d / 8 + 3 n r^2 d^2 + 6 r^2 d^2.
double redesigned_after_flops(double n, double d, double r);

struct ConventionalDrop {
  double j = 0.0;      // n / d
  double rho = 0.0;    // (F - F') / F
  double bound = 0.0;  // 7j / (8j + 48)
  bool below_bound = false;
};
ConventionalDrop conventional_drop_ratio(std::uint64_t n, std::uint64_t d);

struct RedesignedDrop {
  double j = 0.0;
  double r = 0.0;
  double rho = 0.0;
  double approximation = 0.0;  // 1 - (r j + 24 r^2) / (16 j + 96)
  double approximation_gap_bound = 0.0;  // 48 (r^2 + 1) / (n (16 j + 96))
  double bound = 0.0;          // 1 - 0.4375 r
  double rounded_bound = 0.0;  // 1 - 0.43 r, the constant rounded to two digits
  bool bound_applies = false;  // the bound is derived for j >= 1 only
  bool above_bound = false;
};
/// Requires 1 < r < 2.
RedesignedDrop redesigned_drop_ratio(std::uint64_t n, std::uint64_t d, double r);

struct StageCost {
  std::size_t stage = 0;
  std::uint64_t tokens = 0;
  std::uint64_t dim = 0;
  std::uint64_t heads = 0;
  std::uint64_t blocks = 0;
  std::uint64_t block_flops = 0;   // per block
  std::uint64_t block_params = 0;  // per block
  std::uint64_t amm_macs = 0;      // modulation cost over the stage
  std::uint64_t total_flops = 0;   // blocks * block_flops + amm_macs
};

struct ModuleCost {
  std::string name;
  std::uint64_t macs = 0;
  std::uint64_t params = 0;
};

struct DownsampleDrop {
  std::string name;
  std::uint64_t tokens_in = 0;
  std::uint64_t dim_in = 0;
  std::uint64_t dim_out = 0;
  RedesignedDrop ratio;
};

/// Per-sample forward cost of a configuration, mirroring every matrix
/// product of the model.
struct FlopsReport {
  std::vector<StageCost> stages;
  std::vector<ModuleCost> modules;  // embedding, condition, sampling, skips, head
  std::vector<DownsampleDrop> drops;
  std::uint64_t block_macs = 0;
  std::uint64_t amm_macs = 0;
  std::uint64_t module_macs = 0;
  std::uint64_t total_macs = 0;
  std::uint64_t block_param_count = 0;
  std::uint64_t total_param_count = 0;
  std::optional<std::uint64_t> measured_macs;  // instrumented forward, when requested
};

/// AMM cost is included when config.amm.enabled (schedule as the model builds it).
FlopsReport model_flops(const arch::ModelConfig& config);

/// One batch-1 forward pass of a freshly built model under the MAC counter.
std::uint64_t measure_forward_macs(const arch::ModelConfig& config);

std::string format_table(const FlopsReport& report);
std::string format_csv(const FlopsReport& report);

}  // namespace edt::flops

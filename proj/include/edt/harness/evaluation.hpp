#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "edt/numerics/tensor.hpp"

namespace edt::harness {

/// Biased (V-statistic) kernel MMD with k(x, y) = exp(-|x - y|^2 / h).
struct MmdResult {
  double mmd2 = 0.0;      // squared discrepancy, clamped at 0
  double mmd = 0.0;       // sqrt(mmd2)
  double bandwidth = 0.0; // h
};

/// Median of the pairwise squared distances over the pooled rows of the
/// given sets (each [N, ...], flattened per row); 1 when that median is 0.
double median_bandwidth(const std::vector<const Tensor<float>*>& sets);

/// MMD between the row sets x and y. Bandwidth defaults to the median
/// heuristic over x and y pooled. Throws ArgumentError on an empty set and
/// DimensionError on mismatched row extents.
MmdResult kernel_mmd(const Tensor<float>& x, const Tensor<float>& y,
                     std::optional<double> bandwidth = std::nullopt);

struct ClassStats {
  std::size_t cls = 0;
  std::size_t generated = 0;
  std::size_t reference = 0;
  double mean_distance = 0.0;  // RMS gap between per-pixel means
  double std_distance = 0.0;   // RMS gap between per-pixel standard deviations
  std::vector<double> mmd_to_class;  // MMD of this class's samples to each class's references
  std::size_t nearest_class = 0;
};

struct EvalReport {
  MmdResult overall;
  std::vector<ClassStats> classes;
  std::size_t classes_nearest_own = 0;  // classes whose nearest reference class is their own
};

/// Overall and per-class comparison of generated vs reference sets. One
/// bandwidth is used throughout: `bandwidth` when given, else the median
/// heuristic over the reference set.
EvalReport evaluate(const Tensor<float>& generated, const std::vector<std::size_t>& generated_labels,
                    const Tensor<float>& reference, const std::vector<std::size_t>& reference_labels,
                    std::size_t class_count, std::optional<double> bandwidth = std::nullopt);

nlohmann::json to_json(const EvalReport& report);

/// Least-squares slope of ys against xs.
double linear_slope(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace edt::harness

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "edt/numerics/tensor.hpp"

namespace edt::harness {

/// Class-conditional synthetic latents in [-1, 1]. Class c draws a shape of
/// kind c % 4 (square, disk, vertical bar, horizontal bar) whose colour on
/// channels 0-2 follows the binary code of c, at a jittered position over a
/// flat background, plus Gaussian pixel noise.
struct DatasetSpec {
  std::size_t class_count = 8;
  std::size_t channels = 4;
  std::size_t size = 16;
  std::size_t count = 4096;
  std::uint64_t seed = 0;
  std::size_t jitter = 2;      // max shape offset in pixels along each axis
  double noise = 0.05;         // pixel noise standard deviation
  double min_margin = 0.05;    // required pairwise distance of class channel means

  bool operator==(const DatasetSpec&) const = default;
};

nlohmann::json to_json(const DatasetSpec& spec);
/// Strict parse; missing keys keep defaults.
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);

struct SyntheticDataset {
  DatasetSpec spec;
  Tensor<float> images;            // [count, channels, size, size]
  std::vector<std::size_t> labels;  // item i has class i % class_count
  std::vector<std::vector<double>> class_means;  // per class, per channel
  double margin = 0.0;             // smallest pairwise distance of class_means
};

/// Item `index` of the dataset; depends only on (spec, index).
std::vector<float> render_item(const DatasetSpec& spec, std::size_t index, std::size_t& label);

/// All items, generated in parallel with per-item seeds. Throws ConfigError
/// on an invalid spec or when the realized class margin is below min_margin.
SyntheticDataset generate_dataset(const DatasetSpec& spec, std::size_t threads = 1);

/// Per-class, per-channel pixel means of an image set [N, C, H, W].
std::vector<std::vector<double>> class_channel_means(const Tensor<float>& images,
                                                     const std::vector<std::size_t>& labels,
                                                     std::size_t class_count);

/// Rows of `images` whose label is `cls`, as [k, C, H, W].
Tensor<float> select_class(const Tensor<float>& images, const std::vector<std::size_t>& labels,
                           std::size_t cls);

}  // namespace edt::harness

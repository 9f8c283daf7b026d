#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "edt/numerics/tensor.hpp"

namespace edt::amm {

/// Square token grid of side N; token i sits at (x, y) with i = N*x + y.
struct GridGeometry {
  std::size_t side = 2;

  explicit GridGeometry(std::size_t n);
  std::size_t tokens() const { return side * side; }
  std::size_t x(std::size_t token) const { return token / side; }
  std::size_t y(std::size_t token) const { return token % side; }
};

/// Scale k, and the cosine window derived from the grid: d_max = (N-1)*sqrt(2),
/// period T = 4*d_max, frequency f = 2*pi/T, cutoff radius R.
struct AmmParams {
  double scale = 0.5;
  double d_max = 0.0;
  double period = 0.0;
  double frequency = 0.0;
  double radius = 0.0;

  /// Default radius is sqrt((N-1)^2 + 4).
  static AmmParams for_grid(const GridGeometry& grid, double scale = 0.5,
                            std::optional<double> radius = std::nullopt);
  static double default_radius(std::size_t side);
};

/// Pairwise Euclidean token distances, N^2 x N^2 row-major.
std::vector<double> distance_matrix(const GridGeometry& grid);

/// k * exp(cos(f * d)).
double generation_function(double distance, const AmmParams& params);

/// Immutable N^2 x N^2 modulation matrix; m_ir = F(d_ir) if d_ir <= R else 0.
class ModulationMatrix {
 public:
  ModulationMatrix(const GridGeometry& grid, const AmmParams& params);
  /// Arbitrary entries over the grid, for ablations and identity checks.
  ModulationMatrix(const GridGeometry& grid, const AmmParams& params, std::vector<double> entries);

  std::size_t side() const { return side_; }
  std::size_t tokens() const { return side_ * side_; }
  const AmmParams& params() const { return params_; }
  double at(std::size_t i, std::size_t r) const { return entries_[i * tokens() + r]; }
  std::span<const double> entries() const { return entries_; }

  /// Constant [n, n] tensor view at the requested precision.
  template <typename T>
  const Tensor<T>& as_tensor() const;

 private:
  std::size_t side_;
  AmmParams params_;
  std::vector<double> entries_;
  Tensor<float> f32_;
  Tensor<double> f64_;
};

template <>
const Tensor<float>& ModulationMatrix::as_tensor<float>() const;
template <>
const Tensor<double>& ModulationMatrix::as_tensor<double>() const;

ModulationMatrix build_amm(const GridGeometry& grid, const AmmParams& params);

/// Shared, process-wide cache keyed by (N, k, R).
std::shared_ptr<const ModulationMatrix> cached_amm(const GridGeometry& grid, const AmmParams& params);

/// Hadamard product of post-softmax scores [..., n, n] with the matrix,
/// broadcast over leading axes. Adds one MAC per score element to OpCounter.
template <typename T>
Tensor<T> modulate(const Tensor<T>& scores, const ModulationMatrix& matrix);

/// On/off flag per block of each up-sampling stage.
struct PlacementSchedule {
  std::vector<std::vector<bool>> stages;

  std::size_t block_count() const;
  bool enabled(std::size_t stage, std::size_t block) const;
  bool any() const;
  static PlacementSchedule all_off(std::span<const std::size_t> decoder_block_counts);
};

/// AMM on the even in-stage block indices (0, 2, ...) of every decoder stage.
PlacementSchedule default_schedule(std::span<const std::size_t> decoder_block_counts);

/// Full matrix as row-major CSV plus `<path>.json` with N, k, d_max, T, f, R.
void export_csv(const ModulationMatrix& matrix, const std::filesystem::path& path);

}  // namespace edt::amm

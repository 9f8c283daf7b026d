#include "edt/amm/amm.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <numbers>
#include <tuple>

#include "edt/error.hpp"
#include "edt/numerics/op_counter.hpp"
#include "edt/numerics/ops.hpp"

namespace edt::amm {

GridGeometry::GridGeometry(std::size_t n) : side(n) {
  if (n < 2) throw DimensionError("AMM grid side must be at least 2, got " + std::to_string(n));
}

double AmmParams::default_radius(std::size_t side) {
  const double s = static_cast<double>(side) - 1.0;
  return std::sqrt(s * s + 4.0);
}

AmmParams AmmParams::for_grid(const GridGeometry& grid, double scale, std::optional<double> radius) {
  if (!(scale > 0.0)) throw ConfigError("AMM scale must be positive");
  AmmParams p;
  p.scale = scale;
  p.d_max = (static_cast<double>(grid.side) - 1.0) * std::numbers::sqrt2;
  p.period = 4.0 * p.d_max;
  p.frequency = 2.0 * std::numbers::pi / p.period;
  p.radius = radius.value_or(default_radius(grid.side));
  if (!(p.radius > 0.0)) throw ConfigError("AMM radius must be positive");
  return p;
}

std::vector<double> distance_matrix(const GridGeometry& grid) {
  const std::size_t n = grid.tokens();
  std::vector<double> d(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < n; ++r) {
      const double dx = static_cast<double>(grid.x(i)) - static_cast<double>(grid.x(r));
      const double dy = static_cast<double>(grid.y(i)) - static_cast<double>(grid.y(r));
      d[i * n + r] = std::sqrt(dx * dx + dy * dy);
    }
  }
  return d;
}

double generation_function(double distance, const AmmParams& params) {
  if (distance < 0.0) throw DomainError("AMM distance must be non-negative");
  return params.scale * std::exp(std::cos(params.frequency * distance));
}

ModulationMatrix::ModulationMatrix(const GridGeometry& grid, const AmmParams& params)
    : side_(grid.side), params_(params) {
  const std::size_t n = grid.tokens();
  const auto dist = distance_matrix(grid);
  entries_.resize(n * n);
  for (std::size_t k = 0; k < dist.size(); ++k) {
    entries_[k] = dist[k] <= params.radius ? generation_function(dist[k], params) : 0.0;
  }
  f64_ = Tensor<double>::from({n, n}, entries_);
  f32_ = f64_.to_float();
}

ModulationMatrix::ModulationMatrix(const GridGeometry& grid, const AmmParams& params,
                                   std::vector<double> entries)
    : side_(grid.side), params_(params), entries_(std::move(entries)) {
  const std::size_t n = grid.tokens();
  if (entries_.size() != n * n) {
    throw DimensionError("ModulationMatrix: expected " + std::to_string(n * n) + " entries, got " +
                         std::to_string(entries_.size()));
  }
  f64_ = Tensor<double>::from({n, n}, entries_);
  f32_ = f64_.to_float();
}

template <>
const Tensor<float>& ModulationMatrix::as_tensor<float>() const {
  return f32_;
}
template <>
const Tensor<double>& ModulationMatrix::as_tensor<double>() const {
  return f64_;
}

ModulationMatrix build_amm(const GridGeometry& grid, const AmmParams& params) {
  return ModulationMatrix(grid, params);
}

std::shared_ptr<const ModulationMatrix> cached_amm(const GridGeometry& grid,
                                                   const AmmParams& params) {
  static std::mutex mutex;
  static std::map<std::tuple<std::size_t, double, double>, std::shared_ptr<const ModulationMatrix>>
      cache;
  const auto key = std::make_tuple(grid.side, params.scale, params.radius);
  std::lock_guard lock(mutex);
  auto& slot = cache[key];
  if (!slot) slot = std::make_shared<const ModulationMatrix>(grid, params);
  return slot;
}

template <typename T>
Tensor<T> modulate(const Tensor<T>& scores, const ModulationMatrix& matrix) {
  const std::size_t n = matrix.tokens();
  if (scores.rank() < 2 || scores.dim(-1) != n || scores.dim(-2) != n) {
    throw DimensionError("AMM modulate: scores " + shape_str(scores.shape()) +
                         " do not match a " + std::to_string(n) + "x" + std::to_string(n) +
                         " modulation matrix");
  }
  auto out = mul(scores, matrix.as_tensor<T>());
  OpCounter::add(scores.numel());
  return out;
}

template Tensor<float> modulate(const Tensor<float>&, const ModulationMatrix&);
template Tensor<double> modulate(const Tensor<double>&, const ModulationMatrix&);

std::size_t PlacementSchedule::block_count() const {
  std::size_t total = 0;
  for (const auto& s : stages) total += s.size();
  return total;
}

bool PlacementSchedule::enabled(std::size_t stage, std::size_t block) const {
  return stage < stages.size() && block < stages[stage].size() && stages[stage][block];
}

bool PlacementSchedule::any() const {
  for (const auto& s : stages) {
    for (bool b : s) {
      if (b) return true;
    }
  }
  return false;
}

PlacementSchedule PlacementSchedule::all_off(std::span<const std::size_t> decoder_block_counts) {
  PlacementSchedule s;
  for (auto count : decoder_block_counts) s.stages.emplace_back(count, false);
  return s;
}

PlacementSchedule default_schedule(std::span<const std::size_t> decoder_block_counts) {
  PlacementSchedule s;
  for (auto count : decoder_block_counts) {
    std::vector<bool> flags(count);
    for (std::size_t b = 0; b < count; ++b) flags[b] = b % 2 == 0;
    s.stages.push_back(std::move(flags));
  }
  return s;
}

void export_csv(const ModulationMatrix& matrix, const std::filesystem::path& path) {
  std::ofstream csv(path);
  if (!csv) throw ArgumentError("cannot open " + path.string() + " for writing");
  csv.precision(17);
  const std::size_t n = matrix.tokens();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < n; ++r) {
      if (r) csv << ',';
      csv << matrix.at(i, r);
    }
    csv << '\n';
  }
  const auto& p = matrix.params();
  nlohmann::json meta{{"N", matrix.side()},    {"tokens", n},           {"k", p.scale},
                      {"d_max", p.d_max},      {"T", p.period},         {"f", p.frequency},
                      {"R", p.radius},         {"layout", "row-major"}};
  std::ofstream side(path.string() + ".json");
  if (!side) throw ArgumentError("cannot open " + path.string() + ".json for writing");
  side << meta.dump(2) << '\n';
}

}  // namespace edt::amm

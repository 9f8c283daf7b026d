#include "edt/harness/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <nlohmann/json.hpp>

#include "edt/error.hpp"
#include "edt/harness/parallel.hpp"
#include "edt/numerics/rng.hpp"

namespace edt::harness {

using nlohmann::json;

namespace {

constexpr double kBackground = -0.8;
constexpr double kColorOn = 0.9;
constexpr double kColorOff = -0.2;
constexpr double kExtraChannel = 0.5;

bool inside(std::size_t kind, double dx, double dy) {
  switch (kind) {
    case 0: return std::abs(dx) <= 3.0 && std::abs(dy) <= 3.0;
    case 1: return dx * dx + dy * dy <= 3.5 * 3.5;
    case 2: return std::abs(dx) <= 1.5 && std::abs(dy) <= 5.0;
    default: return std::abs(dx) <= 5.0 && std::abs(dy) <= 1.5;
  }
}

void validate(const DatasetSpec& s) {
  if (s.class_count < 1 || s.class_count > 8) throw ConfigError("dataset: class_count must be in [1, 8]");
  if (s.channels < 3) throw ConfigError("dataset: need at least 3 channels");
  if (s.size < 12) throw ConfigError("dataset: size must be at least 12");
  if (2 * s.jitter + 12 > s.size) throw ConfigError("dataset: jitter too large for the image size");
  if (s.count == 0) throw ConfigError("dataset: count must be positive");
  if (!(s.noise >= 0.0)) throw ConfigError("dataset: noise must be non-negative");
}

}  // namespace

json to_json(const DatasetSpec& s) {
  return {{"class_count", s.class_count}, {"channels", s.channels}, {"size", s.size},
          {"count", s.count},             {"seed", s.seed},         {"jitter", s.jitter},
          {"noise", s.noise},             {"min_margin", s.min_margin}};
}

DatasetSpec dataset_spec_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("dataset: expected an object");
  static const std::set<std::string> keys{"class_count", "channels", "size",  "count",
                                          "seed",        "jitter",   "noise", "min_margin"};
  for (const auto& [k, v] : j.items()) {
    if (!keys.count(k)) throw ConfigError("dataset: unknown key '" + k + "'");
  }
  DatasetSpec s;
  auto read = [&](const char* k, auto& field) {
    if (j.contains(k)) field = j.at(k).get<std::decay_t<decltype(field)>>();
  };
  read("class_count", s.class_count);
  read("channels", s.channels);
  read("size", s.size);
  read("count", s.count);
  read("seed", s.seed);
  read("jitter", s.jitter);
  read("noise", s.noise);
  read("min_margin", s.min_margin);
  return s;
}

std::vector<float> render_item(const DatasetSpec& s, std::size_t index, std::size_t& label) {
  Rng rng(mix_seed(s.seed, index));
  label = index % s.class_count;
  const std::size_t kind = label % 4;
  const double span = static_cast<double>(2 * s.jitter + 1);
  const double cx = (static_cast<double>(s.size) - 1.0) / 2.0 +
                    static_cast<double>(rng.below(static_cast<std::uint64_t>(span))) - s.jitter;
  const double cy = (static_cast<double>(s.size) - 1.0) / 2.0 +
                    static_cast<double>(rng.below(static_cast<std::uint64_t>(span))) - s.jitter;
  std::vector<float> out(s.channels * s.size * s.size);
  for (std::size_t c = 0; c < s.channels; ++c) {
    const double fg = c < 3 ? ((label >> c) & 1 ? kColorOn : kColorOff) : kExtraChannel;
    for (std::size_t y = 0; y < s.size; ++y) {
      for (std::size_t x = 0; x < s.size; ++x) {
        const bool in = inside(kind, static_cast<double>(x) - cx, static_cast<double>(y) - cy);
        const double v = (in ? fg : kBackground) + s.noise * rng.normal();
        out[(c * s.size + y) * s.size + x] = static_cast<float>(std::clamp(v, -1.0, 1.0));
      }
    }
  }
  return out;
}

std::vector<std::vector<double>> class_channel_means(const Tensor<float>& images,
                                                     const std::vector<std::size_t>& labels,
                                                     std::size_t class_count) {
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw DimensionError("class_channel_means: expected [N, C, H, W] with N labels");
  }
  const std::size_t channels = images.dim(1), plane = images.dim(2) * images.dim(3);
  std::vector<std::vector<double>> sums(class_count, std::vector<double>(channels, 0.0));
  std::vector<std::size_t> counts(class_count, 0);
  const auto data = images.data();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= class_count) throw ArgumentError("class_channel_means: label out of range");
    ++counts[labels[i]];
    for (std::size_t c = 0; c < channels; ++c) {
      const float* p = data.data() + (i * channels + c) * plane;
      double s = 0.0;
      for (std::size_t k = 0; k < plane; ++k) s += p[k];
      sums[labels[i]][c] += s / static_cast<double>(plane);
    }
  }
  for (std::size_t k = 0; k < class_count; ++k) {
    for (auto& v : sums[k]) v = counts[k] ? v / static_cast<double>(counts[k]) : 0.0;
  }
  return sums;
}

Tensor<float> select_class(const Tensor<float>& images, const std::vector<std::size_t>& labels,
                           std::size_t cls) {
  const std::size_t row = images.numel() / images.dim(0);
  std::vector<float> out;
  std::size_t k = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != cls) continue;
    out.insert(out.end(), images.data().begin() + i * row, images.data().begin() + (i + 1) * row);
    ++k;
  }
  Shape shape = images.shape();
  shape[0] = k;
  return Tensor<float>::from(shape, std::move(out));
}

SyntheticDataset generate_dataset(const DatasetSpec& spec, std::size_t threads) {
  validate(spec);
  SyntheticDataset ds;
  ds.spec = spec;
  const std::size_t row = spec.channels * spec.size * spec.size;
  std::vector<float> pixels(spec.count * row);
  ds.labels.assign(spec.count, 0);
  parallel_for(spec.count, threads, [&](std::size_t i) {
    const auto item = render_item(spec, i, ds.labels[i]);
    std::copy(item.begin(), item.end(), pixels.begin() + i * row);
  });
  ds.images = Tensor<float>::from({spec.count, spec.channels, spec.size, spec.size}, std::move(pixels));
  ds.class_means = class_channel_means(ds.images, ds.labels, spec.class_count);
  ds.margin = spec.class_count > 1 ? std::numeric_limits<double>::infinity() : 0.0;
  for (std::size_t a = 0; a < spec.class_count; ++a) {
    for (std::size_t b = a + 1; b < spec.class_count; ++b) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < spec.channels; ++c) {
        const double d = ds.class_means[a][c] - ds.class_means[b][c];
        d2 += d * d;
      }
      ds.margin = std::min(ds.margin, std::sqrt(d2));
    }
  }
  if (spec.class_count > 1 && spec.count >= spec.class_count && ds.margin < spec.min_margin) {
    throw ConfigError("dataset: class mean margin " + std::to_string(ds.margin) + " below " +
                      std::to_string(spec.min_margin));
  }
  return ds;
}

}  // namespace edt::harness

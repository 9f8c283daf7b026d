#include "edt/architecture/config.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <set>

#include "edt/error.hpp"

namespace edt::arch {

using nlohmann::json;

std::size_t ModelConfig::stage_grid(std::size_t stage) const {
  static constexpr std::array<std::size_t, kStages> shrink{1, 2, 4, 2, 1};
  return grid() / shrink.at(stage);
}

std::size_t ModelConfig::stage_tokens(std::size_t stage) const {
  const auto g = stage_grid(stage);
  return g * g;
}

std::size_t ModelConfig::total_blocks() const {
  std::size_t total = 0;
  for (auto b : stage_blocks) total += b;
  return total;
}

double ModelConfig::expansion(std::size_t stage) const {
  if (stage > 1) throw ConfigError("expansion: only stages 0 and 1 feed a down-sampling");
  return static_cast<double>(stage_dims[stage + 1]) / static_cast<double>(stage_dims[stage]);
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (patch_size == 0 || in_channels == 0 || class_count == 0) {
    fail("patch_size, in_channels and class_count must be positive");
  }
  if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
  if (grid() % 4 != 0 || grid() == 0) {
    fail("grid after patchify must be a positive multiple of 4 (two 2x down-samplings)");
  }
  if (time_embed_dim == 0 || time_embed_dim % 2 != 0) fail("time_embed_dim must be even");
  for (std::size_t s = 0; s < kStages; ++s) {
    if (stage_heads[s] == 0 || stage_dims[s] == 0) fail("stage dims and heads must be positive");
    if (stage_dims[s] % stage_heads[s] != 0) {
      fail("stage " + std::to_string(s) + " dim not divisible by head count");
    }
    if (stage_dims[s] % 4 != 0) {
      fail("stage " + std::to_string(s) + " dim must be a multiple of 4 (2-D sin-cos encoding)");
    }
  }
  if (stage_dims[3] != stage_dims[1] || stage_dims[4] != stage_dims[0]) {
    fail("decoder dims must mirror the encoder: dims[3] == dims[1], dims[4] == dims[0]");
  }
  for (std::size_t s : {std::size_t{0}, std::size_t{1}}) {
    if (!(stage_dims[s + 1] > stage_dims[s] && stage_dims[s + 1] < 2 * stage_dims[s])) {
      fail("down-sampling " + std::to_string(s + 1) + " expansion must lie strictly in (1, 2)");
    }
  }
  if (!amm.schedule.empty()) {
    if (amm.schedule.size() != 2 || amm.schedule[0].size() != stage_blocks[3] ||
        amm.schedule[1].size() != stage_blocks[4]) {
      fail("amm.schedule must list one flag per block of the two decoder stages");
    }
  }
  if (!(amm.scale > 0.0)) fail("amm.scale must be positive");
  if (amm.radius && !(*amm.radius > 0.0)) fail("amm.radius must be positive");
  mask.validate();
  const std::pair<const masking::RatioRange*, std::size_t> masked[] = {
      {&mask.stage1, stage_tokens(1)}, {&mask.stage2, stage_tokens(2)}};
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& [range, n] = masked[k];
    if (masking::count_bounds(*range, n).empty()) {
      fail("mask range [" + std::to_string(range->low) + ", " + std::to_string(range->high) +
           "] of down-sampling " + std::to_string(k + 1) + " admits no whole token count over " +
           std::to_string(n) + " tokens");
    }
  }
}

ModelConfig ModelConfig::nano() { return ModelConfig{}; }

ModelConfig ModelConfig::small() {
  ModelConfig c;
  c.image_size = 32;
  c.class_count = 1000;
  c.time_embed_dim = 256;
  c.stage_blocks = {2, 2, 2, 3, 3};
  c.stage_dims = {312, 416, 520, 416, 312};
  c.stage_heads = {6, 8, 10, 8, 6};
  c.mask = masking::MaskSpec{};
  return c;
}

ModelConfig ModelConfig::base() {
  ModelConfig c = small();
  c.stage_dims = {624, 832, 1040, 832, 624};
  c.stage_heads = {12, 16, 20, 16, 12};
  return c;
}

ModelConfig ModelConfig::xlarge() {
  ModelConfig c = small();
  c.stage_blocks = {6, 4, 4, 7, 7};
  c.stage_dims = {936, 1248, 1560, 1248, 936};
  c.stage_heads = {18, 24, 30, 24, 18};
  return c;
}

ModelConfig ModelConfig::preset(const std::string& name) {
  if (name == "nano" || name == "edt-nano") return nano();
  if (name == "small" || name == "edt-s") return small();
  if (name == "base" || name == "edt-b") return base();
  if (name == "xlarge" || name == "edt-xl") return xlarge();
  throw ConfigError("unknown model preset '" + name + "' (nano, small, base, xlarge)");
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename V>
void read(const json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

masking::RatioRange read_range(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2) throw ConfigError(where + ": expected [low, high]");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

json to_json(const ModelConfig& c) {
  json amm{{"enabled", c.amm.enabled}, {"scale", c.amm.scale}, {"schedule", c.amm.schedule}};
  amm["radius"] = c.amm.radius ? json(*c.amm.radius) : json(nullptr);
  return json{
      {"patch_size", c.patch_size},
      {"in_channels", c.in_channels},
      {"image_size", c.image_size},
      {"class_count", c.class_count},
      {"time_embed_dim", c.time_embed_dim},
      {"stage_blocks", c.stage_blocks},
      {"stage_dims", c.stage_dims},
      {"stage_heads", c.stage_heads},
      {"amm", amm},
      {"mask",
       {{"stage1_ratio", {c.mask.stage1.low, c.mask.stage1.high}},
        {"stage2_ratio", {c.mask.stage2.low, c.mask.stage2.high}},
        {"seed", c.mask.seed}}},
  };
}

ModelConfig model_config_from_json(const json& j) {
  const std::string where = "model config";
  reject_unknown(j,
                 {"preset", "patch_size", "in_channels", "image_size", "class_count",
                  "time_embed_dim", "stage_blocks", "stage_dims", "stage_heads", "amm", "mask"},
                 where);
  ModelConfig c;
  if (j.contains("preset")) c = ModelConfig::preset(j.at("preset").get<std::string>());
  read(j, "patch_size", c.patch_size, where);
  read(j, "in_channels", c.in_channels, where);
  read(j, "image_size", c.image_size, where);
  read(j, "class_count", c.class_count, where);
  read(j, "time_embed_dim", c.time_embed_dim, where);
  read(j, "stage_blocks", c.stage_blocks, where);
  read(j, "stage_dims", c.stage_dims, where);
  read(j, "stage_heads", c.stage_heads, where);
  if (j.contains("amm")) {
    const auto& a = j.at("amm");
    reject_unknown(a, {"enabled", "scale", "radius", "schedule"}, where + ".amm");
    read(a, "enabled", c.amm.enabled, where + ".amm");
    read(a, "scale", c.amm.scale, where + ".amm");
    read(a, "schedule", c.amm.schedule, where + ".amm");
    if (a.contains("radius") && !a.at("radius").is_null()) c.amm.radius = a.at("radius").get<double>();
  }
  if (j.contains("mask")) {
    const auto& m = j.at("mask");
    reject_unknown(m, {"stage1_ratio", "stage2_ratio", "seed"}, where + ".mask");
    if (m.contains("stage1_ratio")) c.mask.stage1 = read_range(m.at("stage1_ratio"), where + ".mask.stage1_ratio");
    if (m.contains("stage2_ratio")) c.mask.stage2 = read_range(m.at("stage2_ratio"), where + ".mask.stage2_ratio");
    read(m, "seed", c.mask.seed, where + ".mask");
  }
  c.validate();
  return c;
}

ModelConfig load_model_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  try {
    return model_config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void save_model_config(const ModelConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write model config " + path.string());
  out << to_json(config).dump(2) << '\n';
}

}  // namespace edt::arch

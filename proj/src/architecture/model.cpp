#include "edt/architecture/model.hpp"

#include <cmath>

#include "edt/error.hpp"

namespace edt::arch {

template <typename T>
Tensor<T> patchify(const Tensor<T>& latent, std::size_t patch) {
  if (latent.rank() != 4 || patch == 0 || latent.dim(2) % patch != 0 ||
      latent.dim(3) % patch != 0) {
    throw DimensionError("patchify: latent " + shape_str(latent.shape()) +
                         " not divisible by patch size " + std::to_string(patch));
  }
  const std::size_t b = latent.dim(0), c = latent.dim(1);
  const std::size_t gh = latent.dim(2) / patch, gw = latent.dim(3) / patch;
  auto split = reshape(latent, {b, c, gh, patch, gw, patch});
  auto ordered = permute(split, {0, 2, 4, 1, 3, 5});
  return reshape(ordered, {b, gh * gw, c * patch * patch});
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& tokens, std::size_t channels, std::size_t patch,
                     std::size_t grid) {
  if (tokens.rank() != 3 || tokens.dim(1) != grid * grid ||
      tokens.dim(2) != channels * patch * patch) {
    throw DimensionError("unpatchify: tokens " + shape_str(tokens.shape()) + " for grid " +
                         std::to_string(grid));
  }
  const std::size_t b = tokens.dim(0);
  auto split = reshape(tokens, {b, grid, grid, channels, patch, patch});
  auto ordered = permute(split, {0, 3, 1, 4, 2, 5});
  return reshape(ordered, {b, channels, grid * patch, grid * patch});
}

namespace {

template <typename T>
Tensor<T> constant_table(const std::vector<double>& values, Shape shape) {
  return Tensor<T>::from(std::move(shape), std::vector<T>(values.begin(), values.end()));
}

template <typename T>
Tensor<T> normal_param(Shape shape, double stddev, Rng& rng) {
  std::vector<T> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<T>(stddev * rng.normal());
  return Tensor<T>::from(std::move(shape), std::move(data));
}

}  // namespace

template <typename T>
EdtModel<T>::EdtModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const auto& dims = config_.stage_dims;
  const std::size_t d0 = dims[0];
  const std::size_t grid = config_.grid();

  patch_embed_ = Linear<T>(params_, "patch_embed", config_.patch_dim(), d0, true, Init::kXavier, rng);
  patch_pos_ = constant_table<T>(sincos_2d(grid, d0), {grid * grid, d0});
  input_mask_token_ = params_.add("input_mask_token", normal_param<T>({d0}, 0.02, rng));
  time_fc1_ = Linear<T>(params_, "time.fc1", config_.time_embed_dim, d0, true, Init::kNormal002, rng);
  time_fc2_ = Linear<T>(params_, "time.fc2", d0, d0, true, Init::kNormal002, rng);
  class_table_ = params_.add("class_embed", normal_param<T>({config_.class_count + 1, d0}, 0.02, rng));
  for (std::size_t s = 1; s < kStages; ++s) {
    const std::size_t d = dims[s];
    if (d != d0 && !cond_proj_.count(d)) {
      cond_proj_.emplace(d, Linear<T>(params_, "cond_proj." + std::to_string(d), d0, d, true,
                                      Init::kXavier, rng));
    }
  }

  auto make_stage = [&](std::size_t s) {
    for (std::size_t b = 0; b < config_.stage_blocks[s]; ++b) {
      stages_[s].push_back(std::make_unique<EdtBlock<T>>(
          params_, "stage" + std::to_string(s) + ".block" + std::to_string(b), dims[s],
          config_.stage_heads[s], rng));
    }
  };
  make_stage(0);
  downs_[0] = std::make_unique<Downsample<T>>(params_, "down1", grid, dims[0], dims[1], rng);
  make_stage(1);
  downs_[1] = std::make_unique<Downsample<T>>(params_, "down2", grid / 2, dims[1], dims[2], rng);
  make_stage(2);
  ups_[0] = std::make_unique<Upsample<T>>(params_, "up1", grid / 4, dims[2], dims[3], rng);
  skips_[0] = std::make_unique<LongSkip<T>>(params_, "skip1_3", grid / 2, dims[1], dims[3], rng);
  make_stage(3);
  ups_[1] = std::make_unique<Upsample<T>>(params_, "up2", grid / 2, dims[3], dims[4], rng);
  skips_[1] = std::make_unique<LongSkip<T>>(params_, "skip0_4", grid, dims[0], dims[4], rng);
  make_stage(4);
  final_modulation_ = Linear<T>(params_, "final.adaln", dims[4], 2 * dims[4], true, Init::kZero, rng);
  final_proj_ = Linear<T>(params_, "final.proj", dims[4], config_.patch_dim(), true, Init::kZero, rng);

  if (config_.amm.enabled) {
    const std::vector<std::size_t> counts{config_.stage_blocks[3], config_.stage_blocks[4]};
    amm::PlacementSchedule schedule{config_.amm.schedule};
    if (schedule.stages.empty()) schedule = amm::default_schedule(counts);
    attach_amm({config_.amm.scale, config_.amm.radius}, schedule);
  }
}

template <typename T>
std::size_t EdtModel<T>::block_parameter_count() const {
  std::size_t total = 0;
  for (const auto& e : params_.entries()) {
    if (e.name.rfind("stage", 0) == 0) total += e.tensor.numel();
  }
  return total;
}

template <typename T>
const EdtBlock<T>& EdtModel<T>::block(std::size_t stage, std::size_t index) const {
  return *stages_.at(stage).at(index);
}

template <typename T>
void EdtModel<T>::attach_amm(const AmmOptions& options, const amm::PlacementSchedule& schedule) {
  if (schedule.stages.size() != 2 || schedule.stages[0].size() != config_.stage_blocks[3] ||
      schedule.stages[1].size() != config_.stage_blocks[4]) {
    throw ConfigError("attach_amm: schedule must have " + std::to_string(config_.stage_blocks[3]) +
                      " and " + std::to_string(config_.stage_blocks[4]) +
                      " flags for the two decoder stages");
  }
  for (std::size_t k = 0; k < 2; ++k) {
    const std::size_t stage = 3 + k;
    amm::GridGeometry geometry(config_.stage_grid(stage));
    const auto p = amm::AmmParams::for_grid(geometry, options.scale, options.radius);
    amm_blocks_[k].assign(schedule.stages[k].size(), nullptr);
    for (std::size_t b = 0; b < schedule.stages[k].size(); ++b) {
      if (schedule.stages[k][b]) amm_blocks_[k][b] = amm::cached_amm(geometry, p);
    }
  }
  amm_schedule_ = schedule;
}

template <typename T>
void EdtModel<T>::detach_amm() {
  amm_schedule_.reset();
  for (auto& v : amm_blocks_) v.clear();
}

template <typename T>
Tensor<T> EdtModel<T>::condition(const std::vector<double>& t,
                                 const std::vector<std::size_t>& y) const {
  if (t.size() != y.size()) throw DimensionError("condition: timestep and class batch differ");
  for (auto c : y) {
    if (c > config_.class_count) {
      throw DimensionError("condition: class " + std::to_string(c) + " > null class " +
                           std::to_string(config_.class_count));
    }
  }
  const auto features = timestep_features(t, config_.time_embed_dim);
  auto freq = Tensor<T>::from({t.size(), config_.time_embed_dim},
                              std::vector<T>(features.begin(), features.end()));
  auto temb = time_fc2_(silu(time_fc1_(freq)));
  return add(temb, gather_rows(class_table_, y));
}

template <typename T>
Tensor<T> EdtModel<T>::cond_for(const Tensor<T>& base, std::size_t dim) const {
  if (dim == config_.stage_dims[0]) return base;
  return cond_proj_.at(dim)(base);
}

template <typename T>
Tensor<T> EdtModel<T>::forward(const Tensor<T>& x_t, const std::vector<double>& t,
                               const std::vector<std::size_t>& y, const TokenMasks* masks,
                               Trace<T>* trace, const MergeRewrites<T>* rewrites) const {
  const auto& c = config_;
  if (x_t.rank() != 4 || x_t.dim(1) != c.in_channels || x_t.dim(2) != c.image_size ||
      x_t.dim(3) != c.image_size) {
    throw DimensionError("forward: latent " + shape_str(x_t.shape()) + " does not match " +
                         std::to_string(c.in_channels) + "x" + std::to_string(c.image_size) + "x" +
                         std::to_string(c.image_size));
  }
  if (t.size() != x_t.dim(0)) throw DimensionError("forward: timestep batch mismatch");
  auto record = [trace](const std::string& name, const Tensor<T>& v) {
    if (trace) trace->emplace_back(name, v);
  };

  const auto base = condition(t, y);
  std::map<std::size_t, Tensor<T>> cond;
  for (auto d : c.stage_dims) {
    if (!cond.count(d)) cond.emplace(d, cond_for(base, d));
  }

  auto x = patch_embed_(patchify(x_t, c.patch_size));
  if (masks && !masks->input.empty()) x = mask_replace(x, masks->input, input_mask_token_);
  x = add(x, patch_pos_);
  record("patch_embed", x);

  auto rewrite = [rewrites](std::size_t k) -> const TokenRewrite<T>* {
    return rewrites && (*rewrites)[k] ? &(*rewrites)[k] : nullptr;
  };

  auto run_stage = [&](std::size_t s, Tensor<T> h) {
    for (std::size_t b = 0; b < stages_[s].size(); ++b) {
      const amm::ModulationMatrix* m = nullptr;
      if (s >= kEncoderStages && amm_schedule_) {
        m = amm_blocks_[s - kEncoderStages][b].get();
      }
      h = (*stages_[s][b])(h, cond.at(c.stage_dims[s]), m);
      record("stage" + std::to_string(s) + ".block" + std::to_string(b), h);
    }
    return h;
  };

  x = run_stage(0, x);
  const auto skip0 = x;
  x = (*downs_[0])(x, cond.at(c.stage_dims[0]),
                   masks && !masks->downsample1.empty() ? &masks->downsample1 : nullptr, trace,
                   rewrite(0));
  record("down1", x);
  x = run_stage(1, x);
  const auto skip1 = x;
  x = (*downs_[1])(x, cond.at(c.stage_dims[1]),
                   masks && !masks->downsample2.empty() ? &masks->downsample2 : nullptr, trace,
                   rewrite(1));
  record("down2", x);
  x = run_stage(2, x);
  x = (*ups_[0])(x);
  record("up1", x);
  x = (*skips_[0])(skip1, x, cond.at(c.stage_dims[1]));
  record("skip1_3", x);
  x = run_stage(3, x);
  x = (*ups_[1])(x);
  record("up2", x);
  x = (*skips_[1])(skip0, x, cond.at(c.stage_dims[0]));
  record("skip0_4", x);
  x = run_stage(4, x);

  const std::size_t d4 = c.stage_dims[4];
  auto mod = final_modulation_(silu(cond.at(d4)));
  x = final_proj_(adaln_modulate(x, slice(mod, 1, 0, d4), slice(mod, 1, d4, d4)));
  record("final", x);
  return unpatchify(x, c.in_channels, c.patch_size, c.grid());
}

template class EdtModel<float>;
template class EdtModel<double>;
template Tensor<float> patchify(const Tensor<float>&, std::size_t);
template Tensor<double> patchify(const Tensor<double>&, std::size_t);
template Tensor<float> unpatchify(const Tensor<float>&, std::size_t, std::size_t, std::size_t);
template Tensor<double> unpatchify(const Tensor<double>&, std::size_t, std::size_t, std::size_t);

}  // namespace edt::arch

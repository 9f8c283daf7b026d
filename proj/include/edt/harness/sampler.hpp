#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "edt/architecture/model.hpp"
#include "edt/diffusion/diffusion.hpp"

namespace edt::harness {

/// Items are denoised in fixed chunks of this many, so results do not depend
/// on the worker count.
inline constexpr std::size_t kSampleChunk = 16;

/// DDIM samples [N, C, H, W] for the given classes. Item i starts from noise
/// drawn with seed mix_seed(sampler.seed, i). Chunks run on up to `threads`
/// workers.
Tensor<float> generate_samples(const arch::EdtModel<float>& model,
                               const std::vector<std::size_t>& classes,
                               const diffusion::NoiseSchedule& schedule,
                               const diffusion::SamplerConfig& sampler, std::size_t threads = 1);

/// Attaches the default decoder schedule using the model config's AMM scale
/// and radius.
void attach_default_amm(arch::EdtModel<float>& model);

/// Raw dump (archive with tensor "samples" and metadata "classes" plus
/// `info`), a montage PGM and one PGM per item.
void write_samples(const Tensor<float>& samples, const std::vector<std::size_t>& classes,
                   const nlohmann::json& info, const std::filesystem::path& dir,
                   bool per_item_images = true);

struct SampleSet {
  Tensor<float> samples;
  std::vector<std::size_t> classes;
  nlohmann::json info;
};
SampleSet read_samples(const std::filesystem::path& dir);

}  // namespace edt::harness

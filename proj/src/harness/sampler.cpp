#include "edt/harness/sampler.hpp"

#include <algorithm>
#include <cstdio>

#include "edt/architecture/checkpoint.hpp"
#include "edt/error.hpp"
#include "edt/harness/image_io.hpp"
#include "edt/harness/parallel.hpp"

namespace edt::harness {

Tensor<float> generate_samples(const arch::EdtModel<float>& model,
                               const std::vector<std::size_t>& classes,
                               const diffusion::NoiseSchedule& schedule,
                               const diffusion::SamplerConfig& sampler, std::size_t threads) {
  const auto& c = model.config();
  for (auto k : classes) {
    if (k > c.class_count) throw ArgumentError("generate_samples: class out of range");
  }
  const std::size_t row = c.in_channels * c.image_size * c.image_size;
  const std::size_t chunks = (classes.size() + kSampleChunk - 1) / kSampleChunk;
  std::vector<float> out(classes.size() * row);
  const auto predict = diffusion::model_predictor(model);
  parallel_for(chunks, threads, [&](std::size_t chunk) {
    const std::size_t begin = chunk * kSampleChunk;
    const std::size_t count = std::min(kSampleChunk, classes.size() - begin);
    std::vector<float> noise(count * row);
    for (std::size_t i = 0; i < count; ++i) {
      Rng rng(mix_seed(sampler.seed, begin + i));
      for (std::size_t k = 0; k < row; ++k) noise[i * row + k] = static_cast<float>(rng.normal());
    }
    auto x_T = Tensor<float>::from({count, c.in_channels, c.image_size, c.image_size}, std::move(noise));
    const std::vector<std::size_t> y(classes.begin() + static_cast<std::ptrdiff_t>(begin),
                                     classes.begin() + static_cast<std::ptrdiff_t>(begin + count));
    const auto x0 = diffusion::ddim_from(predict, x_T, y, model.null_class(), schedule, sampler);
    std::copy(x0.data().begin(), x0.data().end(), out.begin() + static_cast<std::ptrdiff_t>(begin * row));
  });
  return Tensor<float>::from({classes.size(), c.in_channels, c.image_size, c.image_size}, std::move(out));
}

void attach_default_amm(arch::EdtModel<float>& model) {
  const auto& c = model.config();
  amm::PlacementSchedule schedule;
  if (!c.amm.schedule.empty()) {
    schedule.stages = c.amm.schedule;
  } else {
    const std::vector<std::size_t> counts{c.stage_blocks[3], c.stage_blocks[4]};
    schedule = amm::default_schedule(counts);
  }
  model.attach_amm({c.amm.scale, c.amm.radius}, schedule);
}

void write_samples(const Tensor<float>& samples, const std::vector<std::size_t>& classes,
                   const nlohmann::json& info, const std::filesystem::path& dir, bool per_item_images) {
  std::filesystem::create_directories(dir);
  arch::Archive archive;
  archive.put("samples", samples);
  archive.metadata()["classes"] = classes;
  archive.metadata()["info"] = info;
  archive.metadata()["image_mapping"] = "byte = round((clamp(v, -1, 1) + 1) * 127.5)";
  archive.save(dir);
  write_pgm(montage(samples), dir / "montage.pgm");
  if (!per_item_images) return;
  for (std::size_t i = 0; i < samples.dim(0); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "item_%05zu_class_%zu.pgm", i, classes[i]);
    write_pgm(channel_strip(samples, i), dir / name);
  }
}

SampleSet read_samples(const std::filesystem::path& dir) {
  const auto archive = arch::Archive::load(dir);
  SampleSet s;
  s.samples = archive.get<float>("samples");
  if (!archive.metadata().contains("classes")) throw ManifestError(dir.string() + ": no class labels");
  s.classes = archive.metadata().at("classes").get<std::vector<std::size_t>>();
  if (s.classes.size() != s.samples.dim(0)) throw ManifestError(dir.string() + ": label count mismatch");
  if (archive.metadata().contains("info")) s.info = archive.metadata().at("info");
  return s;
}

}  // namespace edt::harness

#pragma once

// Small model configurations and parameter perturbation shared by the test
// binaries.

#include "edt/architecture/model.hpp"

namespace edt::testing {

/// Two transformer blocks total (first and last stage), 4x4 patch grid.
inline arch::ModelConfig two_block_config() {
  arch::ModelConfig c;
  c.patch_size = 2;
  c.in_channels = 2;
  c.image_size = 8;
  c.class_count = 3;
  c.time_embed_dim = 8;
  c.stage_blocks = {1, 0, 0, 0, 1};
  c.stage_dims = {8, 12, 16, 12, 8};
  c.stage_heads = {2, 2, 2, 2, 2};
  c.mask.stage2 = {0.0, 0.0};  // single token after the second merge
  return c;
}

/// Overwrites every parameter with N(0, stddev^2) so zero-initialized gates
/// and heads stop masking gradients.
template <typename T>
void randomize_parameters(arch::ParamStore<T>& store, std::uint64_t seed, double stddev) {
  Rng rng(seed);
  for (const auto& e : store.entries()) {
    auto t = e.tensor;
    for (auto& v : t.mutable_data()) v = static_cast<T>(stddev * rng.normal());
  }
}

}  // namespace edt::testing

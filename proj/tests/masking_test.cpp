#include <gtest/gtest.h>

#include <cmath>

#include "edt/diffusion/diffusion.hpp"
#include "edt/error.hpp"
#include "edt/masking/masking.hpp"
#include "support/toy.hpp"

using namespace edt;
using namespace edt::masking;
using arch::EdtModel;
using arch::ModelConfig;
using TD = Tensor<double>;
using TF = Tensor<float>;

namespace {

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

/// Copy of `merged` [B, n, d] with rows selected by mask (value `which`)
/// overwritten by fresh normal draws.
template <typename T>
arch::TokenRewrite<T> scramble_rows(const std::vector<std::uint8_t>& mask, std::uint8_t which,
                                    std::uint64_t seed) {
  return [&mask, which, seed](const Tensor<T>& merged) {
    Rng rng(seed);
    const std::size_t rows = merged.dim(0) * merged.dim(1), d = merged.dim(2);
    std::vector<T> v(merged.data().begin(), merged.data().end());
    for (std::size_t r = 0; r < rows; ++r) {
      if (mask[r] != which) continue;
      for (std::size_t j = 0; j < d; ++j) v[r * d + j] = static_cast<T>(5.0 * rng.normal());
    }
    return Tensor<T>::from(merged.shape(), std::move(v));
  };
}

}  // namespace

TEST(SampleMask, ZeroRangeGivesEmptyMask) {
  Rng rng(0);
  const auto m = sample_mask(4, {0.0, 0.0}, rng);
  EXPECT_EQ(m.cells.size(), 16u);
  EXPECT_EQ(m.count(), 0u);
}

TEST(SampleMask, FixedRatioMasksFloorCount) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_mask(4, {0.4375, 0.4375}, rng).count(), 7u);
}

TEST(SampleMask, SameSeedSameMask) {
  Rng a(77), b(77);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(sample_mask(8, {0.4, 0.5}, a).cells, sample_mask(8, {0.4, 0.5}, b).cells);
}

TEST(SampleMask, PositionsUniformWithinThreeSigma) {
  Rng rng(2024);
  const std::size_t draws = 100000;
  std::vector<std::size_t> hits(16, 0);
  for (std::size_t i = 0; i < draws; ++i) {
    const auto m = sample_mask(4, {0.4375, 0.4375}, rng);
    for (std::size_t k = 0; k < 16; ++k) hits[k] += m.cells[k];
  }
  const double p = 7.0 / 16.0;
  const double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(draws));
  for (std::size_t k = 0; k < 16; ++k) {
    EXPECT_LE(std::abs(static_cast<double>(hits[k]) / draws - p), 3.0 * sigma) << "position " << k;
  }
}

TEST(SampleMask, RealizedFractionAlwaysInRange) {
  Rng rng(5);
  struct Case {
    std::size_t side;
    RatioRange range;
  };
  // 8x8 and 4x4 are the merged grids of the 256-token configuration; 3x3 and
  // 5x5 make floor(ratio * n) fall below the range and must be clamped.
  for (const auto& c : {Case{8, {0.4, 0.5}}, Case{4, {0.1, 0.2}}, Case{4, {0.4, 0.5}},
                        Case{2, {0.25, 0.25}}, Case{5, {0.4, 0.5}}, Case{3, {0.3, 0.45}}}) {
    for (int i = 0; i < 5000; ++i) {
      const auto m = sample_mask(c.side, c.range, rng);
      ASSERT_GE(m.fraction(), c.range.low) << c.side;
      ASSERT_LE(m.fraction(), c.range.high) << c.side;
    }
  }
}

TEST(SampleMask, InvalidRangeRejected) {
  Rng rng(0);
  EXPECT_THROW(sample_mask(4, {0.5, 0.4}, rng), ConfigError);
  EXPECT_THROW(sample_mask(4, {0.2, 1.0}, rng), ConfigError);
  EXPECT_THROW(sample_mask(2, {0.1, 0.2}, rng), ConfigError);  // no whole count of 4 tokens
}

TEST(SampleMask, UnrealizableRangeRejectedByModelConfig) {
  auto c = ModelConfig::nano();
  c.mask.stage2 = {0.1, 0.2};
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(ModelConfig::small().validate());
}

TEST(TokenMasks, PerModuleBatchLayoutAndRanges) {
  const auto c = ModelConfig::nano();
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto m = sample_token_masks(c, c.mask, 4, rng);
    ASSERT_EQ(m.downsample1.size(), 4 * 16u);
    ASSERT_EQ(m.downsample2.size(), 4 * 4u);
    EXPECT_TRUE(m.input.empty());
    for (std::size_t b = 0; b < 4; ++b) {
      std::size_t k1 = 0, k2 = 0;
      for (std::size_t j = 0; j < 16; ++j) k1 += m.downsample1[b * 16 + j];
      for (std::size_t j = 0; j < 4; ++j) k2 += m.downsample2[b * 4 + j];
      EXPECT_GE(k1 / 16.0, 0.4);
      EXPECT_LE(k1 / 16.0, 0.5);
      EXPECT_EQ(k2, 1u);
    }
  }
}

TEST(TokenMasks, SmallPresetDefaultRanges) {
  const auto c = ModelConfig::small();
  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    const auto m = sample_token_masks(c, c.mask, 1, rng);
    double f1 = 0, f2 = 0;
    for (auto v : m.downsample1) f1 += v;
    for (auto v : m.downsample2) f2 += v;
    f1 /= m.downsample1.size();
    f2 /= m.downsample2.size();
    ASSERT_TRUE(f1 >= 0.4 && f1 <= 0.5) << f1;
    ASSERT_TRUE(f2 >= 0.1 && f2 <= 0.2) << f2;
  }
}

TEST(ApplyMask, EmptyMaskIsIdentityFullMaskIsToken) {
  Rng rng(6);
  auto x = TD::randn({2, 4, 3}, rng);
  auto token = TD::randn({3}, rng);
  auto same = mask_replace(x, std::vector<std::uint8_t>(4, 0), token);
  EXPECT_TRUE(bit_equal(same, x));
  auto all = mask_replace(x, std::vector<std::uint8_t>(8, 1), token);
  for (std::size_t r = 0; r < 8; ++r) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(all[r * 3 + j], token[j]);
  }
  EXPECT_THROW(mask_replace(x, std::vector<std::uint8_t>(5, 0), token), DimensionError);
}

class Isolation : public ::testing::Test {
 protected:
  Isolation() : model(ModelConfig::nano(), 11) {
    edt::testing::randomize_parameters(model.params(), 12, 0.15);
    Rng rng(13);
    x = TD::randn({3, 4, 16, 16}, rng);
    masks = sample_token_masks(model.config(), model.config().mask, 3, rng);
  }

  arch::Trace<double> run(const arch::MergeRewrites<double>* rewrites) const {
    arch::Trace<double> trace;
    model.forward(x, {5.0, 300.0, 900.0}, {0, 4, 8}, &masks, &trace, rewrites);
    return trace;
  }

  EdtModel<double> model;
  TD x;
  arch::TokenMasks masks;
};

TEST_F(Isolation, MaskedContentNeverReachesDownstreamActivations) {
  const auto reference = run(nullptr);
  const arch::MergeRewrites<double> rewrites{scramble_rows<double>(masks.downsample1, 1, 1),
                                             scramble_rows<double>(masks.downsample2, 1, 2)};
  const auto scrambled = run(&rewrites);
  ASSERT_EQ(reference.size(), scrambled.size());
  bool downstream = false;
  std::size_t compared = 0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const auto& name = reference[i].first;
    if (name == "down1") downstream = true;
    if (!downstream || name == "merged") continue;
    EXPECT_TRUE(bit_equal(reference[i].second, scrambled[i].second)) << name;
    ++compared;
  }
  EXPECT_GE(compared, 16u);
}

TEST_F(Isolation, UnmaskedContentDoesReachDownstream) {
  const auto reference = run(nullptr);
  const arch::MergeRewrites<double> rewrites{scramble_rows<double>(masks.downsample1, 0, 1), {}};
  const auto scrambled = run(&rewrites);
  EXPECT_FALSE(bit_equal(reference.back().second, scrambled.back().second));
}

class Losses : public ::testing::Test {
 protected:
  Losses() : model(edt::testing::two_block_config(), 21) {
    edt::testing::randomize_parameters(model.params(), 22, 0.2);
    Rng rng(23);
    x0 = TD::randn({3, 2, 8, 8}, rng);
    draw = diffusion::draw_noised_batch(x0, {0, 1, 2}, model.null_class(), schedule, 0.0, rng);
  }

  EdtModel<double> model;
  diffusion::NoiseSchedule schedule;
  TD x0;
  diffusion::NoisedBatch<double> draw;
};

TEST_F(Losses, ZeroRatioMasksLeaveLossUnchanged) {
  MaskSpec none{{0.0, 0.0}, {0.0, 0.0}, 0};
  Rng rng(1);
  const auto masks = sample_token_masks(model.config(), none, 3, rng);
  const auto l = edt_training_losses(model, draw.x_t, draw.t_real(), draw.y, draw.eps, masks);
  EXPECT_EQ(l.full.item(), l.masked.item());
  EXPECT_GE(l.full.item(), 0.0);
}

TEST_F(Losses, MaskingChangesMaskedLossOnly) {
  Rng rng(2);
  const auto masks = sample_token_masks(model.config(), model.config().mask, 3, rng);
  const auto l = edt_training_losses(model, draw.x_t, draw.t_real(), draw.y, draw.eps, masks);
  const auto plain = mse(model.forward(draw.x_t, draw.t_real(), draw.y), draw.eps);
  EXPECT_EQ(l.full.item(), plain.item());
  EXPECT_NE(l.masked.item(), l.full.item());
  EXPECT_GE(l.masked.item(), 0.0);
}

TEST_F(Losses, CombinedGradientIsSumOfTermGradients) {
  Rng rng(3);
  const auto masks = sample_token_masks(model.config(), model.config().mask, 3, rng);
  const auto params = model.params().tensors();
  auto eval = [&] { return edt_training_losses(model, draw.x_t, draw.t_real(), draw.y, draw.eps, masks); };
  const auto g_total = grad<double>(eval().total(), params);
  const auto g_full = grad<double>(eval().full, params);
  const auto g_masked = grad<double>(eval().masked, params);
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].numel(); ++i) {
      worst = std::max(worst, std::abs(g_total[p][i] - (g_full[p][i] + g_masked[p][i])));
    }
  }
  EXPECT_LE(worst, 1e-6);
}

TEST_F(Losses, SameSeedSameLosses) {
  auto once = [&] {
    Rng rng(9);
    const auto masks = sample_token_masks(model.config(), model.config().mask, 3, rng);
    const auto l = edt_training_losses(model, draw.x_t, draw.t_real(), draw.y, draw.eps, masks);
    return std::pair{l.full.item(), l.masked.item()};
  };
  EXPECT_EQ(once(), once());
}

TEST_F(Losses, InputMaskingZeroRatioLeavesLossUnchanged) {
  Rng rng(4);
  const auto l = mdt_style_losses(model, draw.x_t, draw.t_real(), draw.y, draw.eps, 0.0, rng);
  EXPECT_EQ(l.full.item(), l.masked.item());
}

TEST(InputMasking, DiffersAtExactlyFloorCountPositions) {
  const auto c = ModelConfig::nano();
  EdtModel<double> model(c, 31);
  Rng rng(32);
  auto x = TD::randn({2, 4, 16, 16}, rng);
  for (double ratio : {0.3, 0.5, 0.75}) {
    const auto masks = sample_input_masks(c, ratio, 2, rng);
    arch::Trace<double> plain, masked;
    model.forward(x, {10.0, 20.0}, {1, 2}, nullptr, &plain);
    model.forward(x, {10.0, 20.0}, {1, 2}, &masks, &masked);
    const auto& a = plain.front().second;
    const auto& b = masked.front().second;
    ASSERT_EQ(plain.front().first, "patch_embed");
    const std::size_t n = 64, d = 24;
    for (std::size_t s = 0; s < 2; ++s) {
      std::size_t differing = 0;
      for (std::size_t r = 0; r < n; ++r) {
        bool diff = false;
        for (std::size_t j = 0; j < d; ++j) diff |= a[(s * n + r) * d + j] != b[(s * n + r) * d + j];
        differing += diff;
      }
      EXPECT_EQ(differing, static_cast<std::size_t>(std::floor(ratio * n))) << ratio;
    }
  }
}

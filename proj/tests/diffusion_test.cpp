#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "edt/diffusion/diffusion.hpp"
#include "edt/diffusion/optimizer.hpp"
#include "edt/error.hpp"
#include "support/toy.hpp"

using namespace edt;
using namespace edt::diffusion;
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

/// Deterministic stand-in network: eps = tanh(a_c * x + b * t / 1000).
Predictor<double> stub_predictor() {
  return [](const TD& x, const std::vector<double>& t, const std::vector<std::size_t>& y) {
    const std::size_t per = x.numel() / x.dim(0);
    std::vector<double> out(x.numel());
    for (std::size_t b = 0; b < x.dim(0); ++b) {
      const double a = 0.3 + 0.1 * static_cast<double>(y[b]);
      for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
        out[i] = std::tanh(a * x[i] + 0.5 * t[b] / 1000.0);
      }
    }
    return TD::from(x.shape(), std::move(out));
  };
}

Predictor<double> zero_predictor() {
  return [](const TD& x, const std::vector<double>&, const std::vector<std::size_t>&) {
    return TD::zeros(x.shape());
  };
}

}  // namespace

TEST(Schedule, EndpointsAndMonotonicity) {
  NoiseSchedule s;
  EXPECT_EQ(s.steps(), 1000u);
  EXPECT_DOUBLE_EQ(s.beta(1), 1e-4);
  EXPECT_DOUBLE_EQ(s.beta(1000), 2e-2);
  EXPECT_EQ(s.alpha_bar(0), 1.0);
  EXPECT_NEAR(s.alpha_bar(1), 1.0 - 1e-4, 1e-15);
  for (std::size_t t = 1; t <= 1000; ++t) {
    ASSERT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    ASSERT_GT(s.alpha_bar(t), 0.0);
  }
  // Closed-form product check at t = 1000 against a long double loop.
  long double prod = 1.0L;
  for (int i = 0; i < 1000; ++i) prod *= 1.0L - (1e-4L + (2e-2L - 1e-4L) * i / 999.0L);
  EXPECT_NEAR(s.alpha_bar(1000), static_cast<double>(prod), 1e-15);
}

TEST(ForwardDiffuse, ExactAffineFormula) {
  NoiseSchedule s;
  Rng rng(1);
  auto x0 = TD::randn({2, 3}, rng), eps = TD::randn({2, 3}, rng);
  auto xt = forward_diffuse(x0, {10, 700}, eps, s);
  for (std::size_t b = 0; b < 2; ++b) {
    const double ab = s.alpha_bar(b == 0 ? 10 : 700);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_DOUBLE_EQ(xt[b * 3 + i], std::sqrt(ab) * x0[b * 3 + i] + std::sqrt(1 - ab) * eps[b * 3 + i]);
    }
  }
}

TEST(ForwardDiffuse, LimitsOfTheSchedule) {
  // A one-step schedule with a tiny beta keeps x_t near x0; a harsh schedule
  // drives x_t to eps.
  Rng rng(2);
  auto x0 = TD::randn({1, 8}, rng), eps = TD::randn({1, 8}, rng);
  auto near_x0 = forward_diffuse(x0, {1}, eps, NoiseSchedule(1, 1e-12, 1e-12));
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(near_x0[i], x0[i], 1e-5);
  NoiseSchedule harsh(2000, 0.5, 0.9);
  auto near_eps = forward_diffuse(x0, {2000}, eps, harsh);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(near_eps[i], eps[i], 1e-12);
}

TEST(ForwardDiffuse, OutOfRangeTimestepThrows) {
  NoiseSchedule s;
  EXPECT_THROW(forward_diffuse(TD::zeros({1, 2}), {0}, TD::zeros({1, 2}), s), DomainError);
  EXPECT_THROW(forward_diffuse(TD::zeros({1, 2}), {1001}, TD::zeros({1, 2}), s), DomainError);
}

TEST(ForwardDiffuse, InvertibleGivenNoise) {
  NoiseSchedule s;
  Rng rng(3);
  auto x0 = TF::randn({4, 16}, rng), eps = TF::randn({4, 16}, rng);
  const std::vector<std::size_t> t{1, 250, 600, 1000};
  auto xt = forward_diffuse(x0, t, eps, s);
  for (std::size_t b = 0; b < 4; ++b) {
    const double ab = s.alpha_bar(t[b]);
    for (std::size_t i = 0; i < 16; ++i) {
      const double rec = (xt[b * 16 + i] - std::sqrt(1 - ab) * eps[b * 16 + i]) / std::sqrt(ab);
      EXPECT_NEAR(rec, x0[b * 16 + i], 1e-5 / std::sqrt(ab));
    }
  }
}

TEST(ForwardDiffuse, MonteCarloMomentsWithinThreeSigma) {
  NoiseSchedule s;
  const std::size_t draws = 10000, t = 400;
  const double x0v = 0.7, ab = s.alpha_bar(t);
  auto x0 = TD::full({draws, 1}, x0v);
  Rng rng(4);
  auto eps = TD::randn({draws, 1}, rng);
  auto xt = forward_diffuse(x0, std::vector<std::size_t>(draws, t), eps, s);
  double mean = 0, sq = 0;
  for (std::size_t i = 0; i < draws; ++i) mean += xt[i];
  mean /= draws;
  for (std::size_t i = 0; i < draws; ++i) sq += (xt[i] - mean) * (xt[i] - mean);
  const double sd = std::sqrt(sq / (draws - 1));
  const double target_sd = std::sqrt(1 - ab);
  EXPECT_LE(std::abs(mean - std::sqrt(ab) * x0v), 3 * target_sd / std::sqrt(double(draws)));
  // Standard error of a normal sample standard deviation: sigma / sqrt(2(n-1)).
  EXPECT_LE(std::abs(sd - target_sd), 3 * target_sd / std::sqrt(2.0 * (draws - 1)));
}

TEST(TrainingLoss, PerfectAndZeroPredictors) {
  NoiseSchedule s;
  Rng rng(5);
  auto x0 = TD::randn({256, 4}, rng);
  const auto draw = draw_noised_batch(x0, std::vector<std::size_t>(256, 0), 1, s, 0.0, rng);
  EXPECT_EQ(mse(draw.eps, draw.eps).item(), 0.0);
  const double zero_loss = mse(TD::zeros(draw.eps.shape()), draw.eps).item();
  // E[eps^2] = 1; 1024 draws give standard error sqrt(2/1024).
  EXPECT_NEAR(zero_loss, 1.0, 3 * std::sqrt(2.0 / 1024));
  for (auto t : draw.t) EXPECT_TRUE(t >= 1 && t <= 1000);
}

TEST(TrainingLoss, UnconditionalDropoutRate) {
  NoiseSchedule s;
  Rng rng(6);
  const std::size_t n = 20000;
  const auto draw = draw_noised_batch(TD::zeros({n, 1}), std::vector<std::size_t>(n, 3), 8, s, 0.1, rng);
  const double rate = static_cast<double>(std::count(draw.y.begin(), draw.y.end(), 8u)) / n;
  EXPECT_NEAR(rate, 0.1, 3 * std::sqrt(0.09 / n));
}

TEST(TrainingLoss, InvariantToBatchPermutation) {
  arch::EdtModel<double> model(edt::testing::two_block_config(), 1);
  edt::testing::randomize_parameters(model.params(), 2, 0.2);
  Rng rng(7);
  auto x_t = TD::randn({3, 2, 8, 8}, rng), eps = TD::randn({3, 2, 8, 8}, rng);
  const std::vector<double> t{5, 50, 500};
  const std::vector<std::size_t> y{0, 1, 2};
  const double a = mse(model.forward(x_t, t, y), eps).item();
  auto perm = [](const TD& v) {
    return concat<double>({slice(v, 0, 2, 1), slice(v, 0, 0, 1), slice(v, 0, 1, 1)}, 0);
  };
  const double b = mse(model.forward(perm(x_t), {500, 5, 50}, {2, 0, 1}), perm(eps)).item();
  EXPECT_NEAR(a, b, 1e-14);
}

TEST(Guidance, WeightOneIsConditionalBitExact) {
  arch::EdtModel<float> model(arch::ModelConfig::nano(), 3);
  edt::testing::randomize_parameters(model.params(), 4, 0.1);
  Rng rng(8);
  auto x = TF::randn({2, 4, 16, 16}, rng);
  const auto predict = model_predictor(model);
  auto guided = cfg_predict(predict, x, {10.0, 900.0}, {1, 6}, model.null_class(), 1.0);
  EXPECT_TRUE(bit_equal(guided, model.forward(x, {10.0, 900.0}, {1, 6})));
}

TEST(Guidance, MatchesScalarFormulaOnStub) {
  Rng rng(9);
  auto x = TD::randn({2, 5}, rng);
  const std::vector<double> t{100, 800};
  const std::vector<std::size_t> y{2, 5};
  auto out = cfg_predict(stub_predictor(), x, t, y, 8, 2.0);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t i = 0; i < 5; ++i) {
      const double v = x[b * 5 + i];
      const double c = std::tanh((0.3 + 0.1 * y[b]) * v + 0.5 * t[b] / 1000.0);
      const double u = std::tanh((0.3 + 0.1 * 8) * v + 0.5 * t[b] / 1000.0);
      EXPECT_NEAR(out[b * 5 + i], u + 2.0 * (c - u), 1e-15);
    }
  }
}

TEST(Guidance, EqualBranchesIgnoreWeight) {
  Rng rng(10);
  auto e = TD::randn({3, 4}, rng);
  for (double w : {1.0, 1.5, 4.0}) EXPECT_TRUE(bit_equal(guide(e, e, w), e));
}

TEST(Guidance, LinearInWeight) {
  Rng rng(11);
  auto c = TD::randn({1, 6}, rng), u = TD::randn({1, 6}, rng);
  auto g1 = guide(c, u, 1.5), g2 = guide(c, u, 2.5), g3 = guide(c, u, 3.5);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(g2[i] - g1[i], g3[i] - g2[i], 1e-14);
}

TEST(Guidance, WeightBelowOneRejected) {
  EXPECT_THROW(cfg_predict(zero_predictor(), TD::zeros({1, 1}), {1}, {0}, 1, 0.5), ArgumentError);
}

TEST(Ddim, TimestepSubsequence) {
  EXPECT_EQ(ddim_timesteps(1000, 4), (std::vector<std::size_t>{1000, 750, 500, 250}));
  EXPECT_EQ(ddim_timesteps(10, 10).back(), 1u);
  EXPECT_EQ(ddim_timesteps(1000, 250).size(), 250u);
  EXPECT_THROW(ddim_timesteps(1000, 0), ArgumentError);
  EXPECT_THROW(ddim_timesteps(1000, 1001), ArgumentError);
}

TEST(Ddim, ZeroPredictorMatchesScalarLoop) {
  NoiseSchedule s;
  SamplerConfig cfg{25, 1.0, 3};
  auto out = ddim_sample(zero_predictor(), {1, 3}, {0}, 1, s, cfg);
  Rng rng(3);
  auto xT = TD::randn({1, 3}, rng);
  const auto steps = ddim_timesteps(1000, 25);
  for (std::size_t i = 0; i < 3; ++i) {
    double x = xT[i];
    for (std::size_t k = 0; k < steps.size(); ++k) {
      const std::size_t prev = k + 1 < steps.size() ? steps[k + 1] : 0;
      x = std::sqrt(s.alpha_bar(prev)) * (x / std::sqrt(s.alpha_bar(steps[k])));
    }
    EXPECT_NEAR(out[i], x, 1e-12 * std::abs(x));
    EXPECT_NEAR(out[i], xT[i] / std::sqrt(s.alpha_bar(1000)), 1e-10 * std::abs(x));
  }
}

TEST(Ddim, SingleStepIsDirectEstimate) {
  NoiseSchedule s;
  Rng rng(12);
  auto xT = TD::randn({2, 4}, rng);
  const std::vector<std::size_t> y{1, 3};
  auto out = ddim_from(stub_predictor(), xT, y, 8, s, {1, 1.0, 0});
  const double ab = s.alpha_bar(1000);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t i = 0; i < 4; ++i) {
      const double x = xT[b * 4 + i];
      const double e = std::tanh((0.3 + 0.1 * y[b]) * x + 0.5);
      EXPECT_NEAR(out[b * 4 + i], (x - std::sqrt(1 - ab) * e) / std::sqrt(ab), 1e-9);
    }
  }
}

TEST(Ddim, SameSeedBitIdentical) {
  arch::EdtModel<float> model(arch::ModelConfig::nano(), 5);
  edt::testing::randomize_parameters(model.params(), 6, 0.1);
  NoiseSchedule s;
  const SamplerConfig cfg{10, 2.0, 42};
  const auto p = model_predictor(model);
  auto a = ddim_sample(p, {2, 4, 16, 16}, {1, 2}, 8, s, cfg);
  auto b = ddim_sample(p, {2, 4, 16, 16}, {1, 2}, 8, s, cfg);
  EXPECT_TRUE(bit_equal(a, b));
  auto c = ddim_sample(p, {2, 4, 16, 16}, {1, 2}, 8, s, {10, 2.0, 43});
  EXPECT_FALSE(bit_equal(a, c));
}

TEST(AdamW, LinearDecayEndpoints) {
  auto w = TD::zeros({1}, true);
  AdamW<double> opt({w}, {1e-3, 5e-5, 101});
  EXPECT_DOUBLE_EQ(opt.lr_at(0), 1e-3);
  EXPECT_DOUBLE_EQ(opt.lr_at(100), 5e-5);
  EXPECT_NEAR(opt.lr_at(50), 0.5 * (1e-3 + 5e-5), 1e-18);
  EXPECT_DOUBLE_EQ(opt.lr_at(500), 5e-5);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  auto w = TD::from({3}, {1.0, -2.0, 0.5}, true);
  AdamW<double> opt({w}, {0.1, 0.1, 10});
  backward(sum(mul(w, TD::from({3}, {2.0, -3.0, 0.0}))));
  opt.step();
  EXPECT_NEAR(w[0], 0.9, 1e-7);
  EXPECT_NEAR(w[1], -1.9, 1e-7);
  EXPECT_EQ(w[2], 0.5);
  EXPECT_EQ(w.grad()[0], 0.0);
}

TEST(AdamW, MinimizesQuadratic) {
  auto w = TD::from({2}, {3.0, -4.0}, true);
  AdamW<double> opt({w}, {0.05, 0.001, 2000});
  for (int i = 0; i < 2000; ++i) {
    backward(sum(mul(w, w)));
    opt.step();
  }
  EXPECT_LT(std::abs(w[0]), 1e-2);
  EXPECT_LT(std::abs(w[1]), 1e-2);
}

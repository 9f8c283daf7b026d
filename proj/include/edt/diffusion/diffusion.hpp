#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "edt/architecture/model.hpp"
#include "edt/numerics/tensor.hpp"

namespace edt::diffusion {

/// Linear beta schedule; timesteps are 1-based, alpha_bar(0) = 1.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(std::size_t steps = 1000, double beta_start = 1e-4,
                         double beta_end = 2e-2);

  std::size_t steps() const { return betas_.size(); }
  double beta(std::size_t t) const { return betas_.at(t - 1); }
  double alpha(std::size_t t) const { return 1.0 - beta(t); }
  /// Cumulative product of alphas up to t; t = 0 gives 1.
  double alpha_bar(std::size_t t) const;

 private:
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
};

/// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, per batch element.
/// Throws DomainError when some t is outside [1, steps].
template <typename T>
Tensor<T> forward_diffuse(const Tensor<T>& x0, const std::vector<std::size_t>& t,
                          const Tensor<T>& eps, const NoiseSchedule& schedule);

/// One training draw: timesteps, noise, corrupted input, and the class labels
/// after unconditional dropout.
template <typename T>
struct NoisedBatch {
  std::vector<std::size_t> t;
  Tensor<T> eps;
  Tensor<T> x_t;
  std::vector<std::size_t> y;

  std::vector<double> t_real() const { return {t.begin(), t.end()}; }
};

/// Draw order: t for every element, then eps, then one dropout uniform per element.
template <typename T>
NoisedBatch<T> draw_noised_batch(const Tensor<T>& x0, const std::vector<std::size_t>& y,
                                 std::size_t null_class, const NoiseSchedule& schedule,
                                 double p_uncond, Rng& rng);

/// Mean squared noise-prediction error on a fresh draw.
template <typename T>
Tensor<T> training_loss(const arch::EdtModel<T>& model, const Tensor<T>& x0,
                        const std::vector<std::size_t>& y, const NoiseSchedule& schedule,
                        double p_uncond, Rng& rng);

/// Noise predictor used by the samplers: (x_t, t, classes) -> eps estimate.
template <typename T>
using Predictor = std::function<Tensor<T>(const Tensor<T>&, const std::vector<double>&,
                                          const std::vector<std::size_t>&)>;

template <typename T>
Predictor<T> model_predictor(const arch::EdtModel<T>& model);

/// eps(x, null) + w (eps(x, c) - eps(x, null)). w = 1 returns the conditional
/// prediction itself; otherwise both branches run as one batch. w < 1 throws
/// ArgumentError.
template <typename T>
Tensor<T> cfg_predict(const Predictor<T>& predict, const Tensor<T>& x_t,
                      const std::vector<double>& t, const std::vector<std::size_t>& y,
                      std::size_t null_class, double guidance);

/// Combination step of cfg_predict for already evaluated branches.
template <typename T>
Tensor<T> guide(const Tensor<T>& conditional, const Tensor<T>& unconditional, double guidance);

struct SamplerConfig {
  std::size_t steps = 250;
  double guidance = 1.0;
  std::uint64_t seed = 0;
};

/// Decreasing timesteps floor(k T / steps), k = steps..1. Throws
/// ArgumentError unless 1 <= steps <= T.
std::vector<std::size_t> ddim_timesteps(std::size_t total, std::size_t steps);

/// Deterministic DDIM (eta = 0) from x_T ~ N(0, I) drawn with `seed` in the
/// given shape [B, C, H, W].
template <typename T>
Tensor<T> ddim_sample(const Predictor<T>& predict, const Shape& shape,
                      const std::vector<std::size_t>& y, std::size_t null_class,
                      const NoiseSchedule& schedule, const SamplerConfig& sampler);

/// The same chain started from a given x_T.
template <typename T>
Tensor<T> ddim_from(const Predictor<T>& predict, Tensor<T> x_T, const std::vector<std::size_t>& y,
                    std::size_t null_class, const NoiseSchedule& schedule,
                    const SamplerConfig& sampler);

}  // namespace edt::diffusion

#include "edt/diffusion/diffusion.hpp"

#include <cmath>

#include "edt/error.hpp"

namespace edt::diffusion {

NoiseSchedule::NoiseSchedule(std::size_t steps, double beta_start, double beta_end) {
  if (steps == 0) throw ArgumentError("noise schedule needs at least one step");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ArgumentError("noise schedule betas must satisfy 0 < start <= end < 1");
  }
  betas_.resize(steps);
  alpha_bars_.resize(steps);
  double product = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double f = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    betas_[i] = beta_start + f * (beta_end - beta_start);
    product *= 1.0 - betas_[i];
    alpha_bars_[i] = product;
  }
}

double NoiseSchedule::alpha_bar(std::size_t t) const {
  if (t == 0) return 1.0;
  if (t > alpha_bars_.size()) {
    throw DomainError("timestep " + std::to_string(t) + " beyond schedule of " +
                      std::to_string(alpha_bars_.size()));
  }
  return alpha_bars_[t - 1];
}

template <typename T>
Tensor<T> forward_diffuse(const Tensor<T>& x0, const std::vector<std::size_t>& t,
                          const Tensor<T>& eps, const NoiseSchedule& schedule) {
  if (x0.shape() != eps.shape() || x0.rank() == 0 || x0.dim(0) != t.size()) {
    throw DimensionError("forward_diffuse: x0 " + shape_str(x0.shape()) + ", eps " +
                         shape_str(eps.shape()) + ", " + std::to_string(t.size()) + " timesteps");
  }
  const std::size_t per = x0.numel() / t.size();
  std::vector<T> out(x0.numel());
  for (std::size_t b = 0; b < t.size(); ++b) {
    if (t[b] < 1 || t[b] > schedule.steps()) {
      throw DomainError("forward_diffuse: timestep " + std::to_string(t[b]) + " outside [1, " +
                        std::to_string(schedule.steps()) + "]");
    }
    const double ab = schedule.alpha_bar(t[b]);
    const T a = static_cast<T>(std::sqrt(ab)), s = static_cast<T>(std::sqrt(1.0 - ab));
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) out[i] = a * x0[i] + s * eps[i];
  }
  return Tensor<T>::from(x0.shape(), std::move(out));
}

template <typename T>
NoisedBatch<T> draw_noised_batch(const Tensor<T>& x0, const std::vector<std::size_t>& y,
                                 std::size_t null_class, const NoiseSchedule& schedule,
                                 double p_uncond, Rng& rng) {
  const std::size_t batch = x0.dim(0);
  if (y.size() != batch) throw DimensionError("draw_noised_batch: label count mismatch");
  NoisedBatch<T> out;
  out.t.resize(batch);
  for (auto& t : out.t) t = 1 + static_cast<std::size_t>(rng.below(schedule.steps()));
  out.eps = Tensor<T>::randn(x0.shape(), rng);
  out.x_t = forward_diffuse(x0, out.t, out.eps, schedule);
  out.y = y;
  for (auto& c : out.y) {
    if (rng.uniform() < p_uncond) c = null_class;
  }
  return out;
}

template <typename T>
Tensor<T> training_loss(const arch::EdtModel<T>& model, const Tensor<T>& x0,
                        const std::vector<std::size_t>& y, const NoiseSchedule& schedule,
                        double p_uncond, Rng& rng) {
  const auto draw = draw_noised_batch(x0, y, model.null_class(), schedule, p_uncond, rng);
  return mse(model.forward(draw.x_t, draw.t_real(), draw.y), draw.eps);
}

template <typename T>
Predictor<T> model_predictor(const arch::EdtModel<T>& model) {
  return [&model](const Tensor<T>& x, const std::vector<double>& t,
                  const std::vector<std::size_t>& y) { return model.forward(x, t, y); };
}

template <typename T>
Tensor<T> guide(const Tensor<T>& conditional, const Tensor<T>& unconditional, double guidance) {
  if (conditional.shape() != unconditional.shape()) {
    throw DimensionError("guide: branch shapes differ");
  }
  const T w = static_cast<T>(guidance);
  std::vector<T> out(conditional.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = unconditional[i] + w * (conditional[i] - unconditional[i]);
  }
  return Tensor<T>::from(conditional.shape(), std::move(out));
}

template <typename T>
Tensor<T> cfg_predict(const Predictor<T>& predict, const Tensor<T>& x_t,
                      const std::vector<double>& t, const std::vector<std::size_t>& y,
                      std::size_t null_class, double guidance) {
  if (!(guidance >= 1.0)) throw ArgumentError("guidance weight must be >= 1");
  if (guidance == 1.0) return predict(x_t, t, y);
  const std::size_t batch = x_t.dim(0);
  auto doubled = concat<T>({x_t, x_t}, 0);
  std::vector<double> tt(t);
  tt.insert(tt.end(), t.begin(), t.end());
  std::vector<std::size_t> yy(y);
  yy.insert(yy.end(), batch, null_class);
  const auto both = predict(doubled, tt, yy);
  return guide(slice(both, 0, 0, batch), slice(both, 0, batch, batch), guidance);
}

std::vector<std::size_t> ddim_timesteps(std::size_t total, std::size_t steps) {
  if (steps < 1 || steps > total) {
    throw ArgumentError("DDIM step count " + std::to_string(steps) + " outside [1, " +
                        std::to_string(total) + "]");
  }
  std::vector<std::size_t> out;
  for (std::size_t k = steps; k >= 1; --k) out.push_back(k * total / steps);
  return out;
}

template <typename T>
Tensor<T> ddim_from(const Predictor<T>& predict, Tensor<T> x, const std::vector<std::size_t>& y,
                    std::size_t null_class, const NoiseSchedule& schedule,
                    const SamplerConfig& sampler) {
  NoGradGuard no_grad;
  const auto steps = ddim_timesteps(schedule.steps(), sampler.steps);
  const std::size_t batch = x.dim(0), per = x.numel() / batch;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const std::size_t t = steps[k];
    const std::size_t prev = k + 1 < steps.size() ? steps[k + 1] : 0;
    const std::vector<double> tv(batch, static_cast<double>(t));
    const auto eps = cfg_predict(predict, x, tv, y, null_class, sampler.guidance);
    const double ab = schedule.alpha_bar(t), ab_prev = schedule.alpha_bar(prev);
    const double sa = std::sqrt(ab), s1 = std::sqrt(1.0 - ab);
    const double sp = std::sqrt(ab_prev), sp1 = std::sqrt(1.0 - ab_prev);
    std::vector<T> next(x.numel());
    for (std::size_t i = 0; i < batch * per; ++i) {
      const double e = static_cast<double>(eps[i]);
      const double x0 = (static_cast<double>(x[i]) - s1 * e) / sa;
      next[i] = static_cast<T>(sp * x0 + sp1 * e);
    }
    x = Tensor<T>::from(x.shape(), std::move(next));
  }
  return x;
}

template <typename T>
Tensor<T> ddim_sample(const Predictor<T>& predict, const Shape& shape,
                      const std::vector<std::size_t>& y, std::size_t null_class,
                      const NoiseSchedule& schedule, const SamplerConfig& sampler) {
  Rng rng(sampler.seed);
  return ddim_from(predict, Tensor<T>::randn(shape, rng), y, null_class, schedule, sampler);
}

#define EDT_INSTANTIATE_DIFFUSION(T)                                                            \
  template Tensor<T> forward_diffuse(const Tensor<T>&, const std::vector<std::size_t>&,         \
                                     const Tensor<T>&, const NoiseSchedule&);                   \
  template NoisedBatch<T> draw_noised_batch(const Tensor<T>&, const std::vector<std::size_t>&,  \
                                            std::size_t, const NoiseSchedule&, double, Rng&);   \
  template Tensor<T> training_loss(const arch::EdtModel<T>&, const Tensor<T>&,                  \
                                   const std::vector<std::size_t>&, const NoiseSchedule&,       \
                                   double, Rng&);                                               \
  template Predictor<T> model_predictor(const arch::EdtModel<T>&);                              \
  template Tensor<T> guide(const Tensor<T>&, const Tensor<T>&, double);                         \
  template Tensor<T> cfg_predict(const Predictor<T>&, const Tensor<T>&,                         \
                                 const std::vector<double>&, const std::vector<std::size_t>&,   \
                                 std::size_t, double);                                          \
  template Tensor<T> ddim_from(const Predictor<T>&, Tensor<T>, const std::vector<std::size_t>&, \
                               std::size_t, const NoiseSchedule&, const SamplerConfig&);        \
  template Tensor<T> ddim_sample(const Predictor<T>&, const Shape&,                             \
                                 const std::vector<std::size_t>&, std::size_t,                  \
                                 const NoiseSchedule&, const SamplerConfig&);

EDT_INSTANTIATE_DIFFUSION(float)
EDT_INSTANTIATE_DIFFUSION(double)

#undef EDT_INSTANTIATE_DIFFUSION

}  // namespace edt::diffusion

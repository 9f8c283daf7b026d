#include "edt/diffusion/optimizer.hpp"

#include <cmath>

#include "edt/error.hpp"

namespace edt::diffusion {

template <typename T>
AdamW<T>::AdamW(std::vector<Tensor<T>> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  if (config_.total_steps == 0) throw ArgumentError("AdamW: total_steps must be positive");
  for (const auto& p : params_) {
    m_.push_back(Tensor<T>::zeros(p.shape()));
    v_.push_back(Tensor<T>::zeros(p.shape()));
  }
}

template <typename T>
double AdamW<T>::lr_at(std::size_t step) const {
  if (config_.total_steps == 1) return config_.lr_start;
  const double f = std::min(1.0, static_cast<double>(step) /
                                     static_cast<double>(config_.total_steps - 1));
  return config_.lr_start + f * (config_.lr_end - config_.lr_start);
}

template <typename T>
void AdamW<T>::step() {
  const double lr = lr_at(step_);
  ++step_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
  const T step_size = static_cast<T>(lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(config_.eps);
  const T decay = static_cast<T>(1.0 - lr * config_.weight_decay);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto p = params_[k].mutable_data();
    const auto g = params_[k].grad();
    auto m = m_[k].mutable_data();
    auto v = v_[k].mutable_data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      p[i] = decay * p[i] - step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
    }
    params_[k].zero_grad();
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace edt::diffusion

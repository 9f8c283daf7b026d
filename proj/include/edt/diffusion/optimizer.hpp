#pragma once

#include <cstddef>
#include <vector>

#include "edt/numerics/tensor.hpp"

namespace edt::diffusion {

struct AdamWConfig {
  double lr_start = 1e-3;
  double lr_end = 5e-5;
  std::size_t total_steps = 1;  // length of the linear decay
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Decoupled-weight-decay Adam with a linear learning-rate decay from
/// lr_start (step 0) to lr_end (step total_steps - 1).
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Tensor<T>> params, AdamWConfig config);

  double lr_at(std::size_t step) const;
  std::size_t steps_taken() const { return step_; }
  const AdamWConfig& config() const { return config_; }

  /// Applies the accumulated gradients and clears them.
  void step();

  /// Moment buffers, aligned with the parameter list (for checkpointing).
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  void set_steps_taken(std::size_t step) { step_ = step; }

 private:
  std::vector<Tensor<T>> params_;
  AdamWConfig config_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  std::size_t step_ = 0;
};

}  // namespace edt::diffusion

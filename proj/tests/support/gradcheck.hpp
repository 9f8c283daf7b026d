#pragma once

// Central finite-difference oracle for reverse-mode gradients. Lives in test
// code only; it perturbs parameter storage directly and re-evaluates the loss
// without touching the autodiff path.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "edt/numerics/ops.hpp"

namespace edt::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "param[index]" of the worst relative entry
};

/// Relative error |a - n| / max(|a|, |n|). Entries where both magnitudes are
/// below `abs_floor` are compared absolutely instead, since their relative
/// error is dominated by truncation noise of the difference quotient.
template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>()>& loss_fn,
                           std::vector<Tensor<T>> params, double step,
                           double abs_floor = 1e-8,
                           const std::vector<std::string>& names = {}) {
  auto loss = loss_fn();
  auto analytic = grad<T>(loss, params);
  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto values = params[p].mutable_data();
    const auto a = analytic[p].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T saved = values[i];
      values[i] = saved + static_cast<T>(step);
      const double up = static_cast<double>(loss_fn().item());
      values[i] = saved - static_cast<T>(step);
      const double down = static_cast<double>(loss_fn().item());
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic_v = static_cast<double>(a[i]);
      const double abs_err = std::abs(numeric - analytic_v);
      const double magnitude = std::max(std::abs(numeric), std::abs(analytic_v));
      const double rel = magnitude < abs_floor ? abs_err : abs_err / magnitude;
      ++result.checked;
      result.max_abs_error = std::max(result.max_abs_error, abs_err);
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = (p < names.size() ? names[p] : "param" + std::to_string(p)) + "[" +
                       std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace edt::testing

namespace edt::testing {

/// Analytic gradient at precision T against a 64-bit central-difference
/// oracle of the same computation. `build` constructs the loss from its
/// inputs at either precision; inputs are given as 64-bit values.
template <typename T, typename Build>
GradCheckResult grad_check_against_double(Build build, const std::vector<Tensor<double>>& inputs,
                                          double step, double abs_floor = 1e-6) {
  std::vector<Tensor<T>> low;
  for (const auto& in : inputs) {
    std::vector<T> v(in.data().begin(), in.data().end());
    low.push_back(Tensor<T>::from(in.shape(), std::move(v), true));
  }
  auto analytic = grad<T>(build(low), low);

  std::vector<Tensor<double>> high;
  for (const auto& in : inputs) {
    std::vector<double> v(in.numel());
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = static_cast<double>(static_cast<T>(in[i]));  // same rounded point
    }
    high.push_back(Tensor<double>::from(in.shape(), std::move(v)));
  }
  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t p = 0; p < high.size(); ++p) {
    auto values = high[p].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = build(high).item();
      values[i] = saved - step;
      const double down = build(high).item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = static_cast<double>(analytic[p][i]);
      const double abs_err = std::abs(numeric - a);
      const double magnitude = std::max(std::abs(numeric), std::abs(a));
      const double rel = magnitude < abs_floor ? abs_err : abs_err / magnitude;
      ++result.checked;
      result.max_abs_error = std::max(result.max_abs_error, abs_err);
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = "param" + std::to_string(p) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace edt::testing

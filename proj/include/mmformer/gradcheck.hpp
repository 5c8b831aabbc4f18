#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "mmformer/tensor.hpp"

namespace mmf {

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0;
  double numeric_at_worst = 0;
};

/// Compares the f32 reverse-mode gradient of a scalar function against central
/// differences evaluated in f64.
///
/// `f` must be callable with both `Tensor` and `Tensor64` and return a
/// one-element tensor of the same precision. Error per coordinate is
/// |analytic - numeric| / (|numeric| + 1e-8). `coordinates` restricts the
/// numeric sweep (all coordinates when empty).
template <typename F>
GradCheckResult finite_difference_report(F&& f, const Tensor& x, double h = 1e-3,
                                         std::span<const std::size_t> coordinates = {}) {
  Tensor probe = x.detach_copy();
  probe.set_requires_grad(true);
  std::vector<float> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor y = f(probe);
    tape.backward(y);
    auto g = probe.grad();
    analytic.assign(g.begin(), g.end());
  }

  std::vector<std::size_t> coords(coordinates.begin(), coordinates.end());
  if (coords.empty()) {
    coords.resize(analytic.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
  }

  Tensor64 base = cast<double>(x);
  GradCheckResult result;
  for (std::size_t i : coords) {
    Tensor64 xp = base.detach_copy();
    Tensor64 xm = base.detach_copy();
    xp.mutable_data()[i] += h;
    xm.mutable_data()[i] -= h;
    const double numeric = (f(xp).item() - f(xm).item()) / (2 * h);
    const double err = std::abs(analytic[i] - numeric) / (std::abs(numeric) + 1e-8);
    if (err >= result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
      result.analytic_at_worst = analytic[i];
      result.numeric_at_worst = numeric;
    }
  }
  return result;
}

/// Max relative error of the analytic gradient of `f` at `x`.
template <typename F>
double finite_difference_check(F&& f, const Tensor& x, double h = 1e-3,
                               std::span<const std::size_t> coordinates = {}) {
  return finite_difference_report(std::forward<F>(f), x, h, coordinates).max_rel_error;
}

}  // namespace mmf

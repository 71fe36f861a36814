// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>

namespace moec::nn {

using Objective = std::function<double(std::span<const double>)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// |a − n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor);

/// Compares `analytic` against central differences of `objective` taken
/// at every coordinate of `point`. `epsilon` must lie in [1e-7, 1e-3].
/// `floor` keeps near-zero gradients from dominating the ratio.
GradCheckReport grad_check(const Objective& objective, std::span<const double> point,
                           std::span<const double> analytic, double epsilon = 1e-6,
                           double floor = 1e-6);

}  // namespace moec::nn

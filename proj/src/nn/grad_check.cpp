// SPDX-License-Identifier: Apache-2.0
#include "moec/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "moec/error.hpp"

namespace moec::nn {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const Objective& objective, std::span<const double> point,
                           std::span<const double> analytic, double epsilon, double floor) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
    throw std::invalid_argument("grad_check: epsilon outside [1e-7, 1e-3]");
  }
  if (point.size() != analytic.size()) {
    throw DimensionError("grad_check: gradient length does not match the point");
  }
  std::vector<double> probe(point.begin(), point.end());
  GradCheckReport report;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + epsilon;
    const double up = objective(probe);
    probe[i] = saved - epsilon;
    const double down = objective(probe);
    probe[i] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double err = relative_error(analytic[i], numeric, floor);
    if (i == 0 || err > report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_index = i;
      report.worst_analytic = analytic[i];
      report.worst_numeric = numeric;
    }
  }
  return report;
}

}  // namespace moec::nn

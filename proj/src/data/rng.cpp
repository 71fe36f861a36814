// SPDX-License-Identifier: Apache-2.0
#include "moec/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "moec/error.hpp"

namespace moec {

std::uint64_t Rng::index(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::index: empty range");
  constexpr auto top = std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t limit = top - (top % n + 1) % n;
  std::uint64_t v;
  do {
    v = next();
  } while (v > limit);
  return v % n;
}

double Rng::normal() {
  double u1 = unit();
  while (u1 <= 0.0) u1 = unit();
  const double u2 = unit();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream is(state);
  is >> engine_;
  if (!is) throw FormatError("unreadable generator state");
}

}  // namespace moec

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "moec/model.hpp"

namespace moec::checks {

struct CheckResult {
  std::string name;
  bool passed = false;
  /// Worst relative error for gradient checks, violation count otherwise.
  double value = 0.0;
  std::string detail;
};

/// Central-difference checks of every layer kind plus the router, the
/// combine step and the full model (F <= 16, B = 8). `perturb` is added to
/// every analytic gradient, to confirm the checks can fail.
std::vector<CheckResult> gradient_checks(std::uint64_t seed, double tolerance = 1e-5,
                                         double perturb = 0.0);

/// Random selections over n, B, k and C_f; verifies the per-expert cap,
/// kept + dropped = k·B and deterministic plan construction.
CheckResult dispatch_fuzz(std::size_t cases, std::uint64_t seed);

/// Raw artifact unpack→pack identity, quantized round trips and Huffman
/// losslessness on assorted payloads.
std::vector<CheckResult> codec_round_trips(std::uint64_t seed);

struct SelftestOptions {
  std::uint64_t seed = 0;
  /// Deliberately wrong backward pass.
  bool inject_fault = false;
};

std::vector<CheckResult> selftest(const SelftestOptions& options = {});

}  // namespace moec::checks

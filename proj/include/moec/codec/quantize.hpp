// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace moec::codec {

struct QuantizedTensor {
  std::vector<std::int8_t> q;
  float scale = 1.0f;
};

/// Symmetric per-tensor int8: scale = max|w|/127, q = round(127·w/max|w|).
/// An all-zero tensor gets scale 1.
QuantizedTensor quantize_tensor(std::span<const float> weights);

/// w' = q·scale
std::vector<float> dequantize_tensor(std::span<const std::int8_t> q, float scale);

}  // namespace moec::codec

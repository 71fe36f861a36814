// SPDX-License-Identifier: Apache-2.0
#include "moec/codec/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace moec::codec {

QuantizedTensor quantize_tensor(std::span<const float> weights) {
  if (weights.empty()) throw std::invalid_argument("quantize_tensor: empty tensor");
  float wmax = 0.0f;
  for (float w : weights) wmax = std::max(wmax, std::fabs(w));
  QuantizedTensor out;
  out.q.assign(weights.size(), 0);
  if (wmax == 0.0f) return out;
  out.scale = wmax / 127.0f;
  const double m = wmax;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double r = std::round(127.0 * static_cast<double>(weights[i]) / m);
    out.q[i] = static_cast<std::int8_t>(std::clamp(r, -127.0, 127.0));
  }
  return out;
}

std::vector<float> dequantize_tensor(std::span<const std::int8_t> q, float scale) {
  if (!(scale > 0.0f)) throw std::invalid_argument("dequantize_tensor: scale must be positive");
  std::vector<float> out(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) out[i] = static_cast<float>(q[i]) * scale;
  return out;
}

}  // namespace moec::codec

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <utility>
#include <vector>

#include "moec/nn/matrix.hpp"

namespace moec {
class Rng;
}

namespace moec::nn {

/// Trainable affine map y = xW + b with W stored in×out.
struct Linear {
  Matrix weight;
  std::vector<double> bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out) : weight(in, out), bias(out, 0.0) {}

  std::size_t in() const noexcept { return weight.rows(); }
  std::size_t out() const noexcept { return weight.cols(); }
  std::size_t param_count() const noexcept { return weight.size() + bias.size(); }

  friend bool operator==(const Linear&, const Linear&) = default;
};

struct LinearGrad {
  Matrix weight;
  std::vector<double> bias;
};

/// First sine layer: W ~ U(-1/in, 1/in), b = 0.
void init_siren_first(Linear& layer, Rng& rng);
/// Hidden sine layers: W ~ U(-sqrt(6/in)/omega, sqrt(6/in)/omega), b = 0.
void init_siren_hidden(Linear& layer, double omega, Rng& rng);
/// W ~ U(-scale*sqrt(6/in), scale*sqrt(6/in)), b = 0.
void init_uniform(Linear& layer, double scale, Rng& rng);

struct LinearTape {
  Matrix input;
  Matrix weight;
};

/// y = xW + b
std::pair<Matrix, LinearTape> linear_forward(const Matrix& x, const Matrix& weight,
                                             std::span<const double> bias);
inline std::pair<Matrix, LinearTape> linear_forward(const Matrix& x, const Linear& layer) {
  return linear_forward(x, layer.weight, layer.bias);
}

struct LinearBackward {
  Matrix dx;
  Matrix dweight;
  std::vector<double> dbias;
};

/// dx = dy·Wᵀ, dW = xᵀ·dy, db = column sums of dy.
LinearBackward linear_backward(const LinearTape& tape, const Matrix& dy);

struct SineTape {
  Matrix input;
  double omega = 30.0;
};

/// y = sin(omega·x)
std::pair<Matrix, SineTape> sine_forward(const Matrix& x, double omega);
/// dx = dy ⊙ omega·cos(omega·x)
Matrix sine_backward(const SineTape& tape, const Matrix& dy);

struct ReluTape {
  Matrix input;
};

std::pair<Matrix, ReluTape> relu_forward(const Matrix& x);
/// The subgradient at exactly 0 is taken as 0.
Matrix relu_backward(const ReluTape& tape, const Matrix& dy);

/// Row-wise softmax, stabilised by subtracting each row's maximum.
Matrix softmax_forward(const Matrix& logits);
/// Jacobian-vector product: dlogits = p ⊙ (dy − ⟨p, dy⟩).
Matrix softmax_backward(const Matrix& probs, const Matrix& dy);

struct MseResult {
  double loss = 0.0;
  std::vector<double> dpred;
};

/// loss = mean((target − pred)²), dpred = 2(pred − target)/B.
MseResult mse_loss(std::span<const double> pred, std::span<const double> target);

}  // namespace moec::nn

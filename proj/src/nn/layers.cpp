// SPDX-License-Identifier: Apache-2.0
#include "moec/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "moec/error.hpp"
#include "moec/rng.hpp"

namespace moec::nn {

namespace {

void fill_uniform(Matrix& m, double bound, Rng& rng) {
  for (double& v : m.values()) v = rng.uniform(-bound, bound);
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": gradient shape " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + " does not match " +
                         std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
  }
}

}  // namespace

void init_siren_first(Linear& layer, Rng& rng) {
  fill_uniform(layer.weight, 1.0 / static_cast<double>(layer.in()), rng);
  std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
}

void init_siren_hidden(Linear& layer, double omega, Rng& rng) {
  fill_uniform(layer.weight, std::sqrt(6.0 / static_cast<double>(layer.in())) / omega, rng);
  std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
}

void init_uniform(Linear& layer, double scale, Rng& rng) {
  fill_uniform(layer.weight, scale * std::sqrt(6.0 / static_cast<double>(layer.in())), rng);
  std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
}

std::pair<Matrix, LinearTape> linear_forward(const Matrix& x, const Matrix& weight,
                                             std::span<const double> bias) {
  if (x.cols() != weight.rows() || bias.size() != weight.cols()) {
    throw DimensionError("linear_forward: input width " + std::to_string(x.cols()) +
                         ", weight " + std::to_string(weight.rows()) + "x" +
                         std::to_string(weight.cols()) + ", bias " +
                         std::to_string(bias.size()));
  }
  Matrix y(x.rows(), weight.cols());
  for (std::size_t r = 0; r < y.rows(); ++r) std::copy(bias.begin(), bias.end(), y.row(r).begin());
  const std::size_t in = weight.rows();
  const std::size_t out = weight.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* xr = &x(r, 0);
    double* yr = &y(r, 0);
    for (std::size_t k = 0; k < in; ++k) {
      const double xv = xr[k];
      const double* wr = &weight(k, 0);
      for (std::size_t j = 0; j < out; ++j) yr[j] += xv * wr[j];
    }
  }
  return {std::move(y), LinearTape{x, weight}};
}

LinearBackward linear_backward(const LinearTape& tape, const Matrix& dy) {
  if (dy.rows() != tape.input.rows() || dy.cols() != tape.weight.cols()) {
    throw DimensionError("linear_backward: gradient shape mismatch");
  }
  LinearBackward g;
  g.dx = matmul_nt(dy, tape.weight);
  g.dweight = matmul_tn(tape.input, dy);
  g.dbias.assign(dy.cols(), 0.0);
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    const double* dr = &dy(r, 0);
    for (std::size_t j = 0; j < dy.cols(); ++j) g.dbias[j] += dr[j];
  }
  return g;
}

std::pair<Matrix, SineTape> sine_forward(const Matrix& x, double omega) {
  if (!(omega > 0.0)) throw std::invalid_argument("sine_forward: omega must be positive");
  Matrix y(x.rows(), x.cols());
  auto in = x.values();
  auto out = y.values();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::sin(omega * in[i]);
  return {std::move(y), SineTape{x, omega}};
}

Matrix sine_backward(const SineTape& tape, const Matrix& dy) {
  require_same_shape(tape.input, dy, "sine_backward");
  Matrix dx(dy.rows(), dy.cols());
  auto in = tape.input.values();
  auto g = dy.values();
  auto out = dx.values();
  const double w = tape.omega;
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = g[i] * w * std::cos(w * in[i]);
  return dx;
}

std::pair<Matrix, ReluTape> relu_forward(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  auto in = x.values();
  auto out = y.values();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  return {std::move(y), ReluTape{x}};
}

Matrix relu_backward(const ReluTape& tape, const Matrix& dy) {
  require_same_shape(tape.input, dy, "relu_backward");
  Matrix dx(dy.rows(), dy.cols());
  auto in = tape.input.values();
  auto g = dy.values();
  auto out = dx.values();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? g[i] : 0.0;
  return dx;
}

Matrix softmax_forward(const Matrix& logits) {
  if (logits.cols() == 0) throw DimensionError("softmax_forward: zero-width input");
  Matrix p(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto in = logits.row(r);
    auto out = p.row(r);
    const double peak = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      out[j] = std::exp(in[j] - peak);
      total += out[j];
    }
    for (double& v : out) v /= total;
  }
  return p;
}

Matrix softmax_backward(const Matrix& probs, const Matrix& dy) {
  require_same_shape(probs, dy, "softmax_backward");
  Matrix dx(dy.rows(), dy.cols());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto p = probs.row(r);
    const auto g = dy.row(r);
    double dot = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) dot += p[j] * g[j];
    auto out = dx.row(r);
    for (std::size_t j = 0; j < p.size(); ++j) out[j] = p[j] * (g[j] - dot);
  }
  return dx;
}

MseResult mse_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) {
    throw DimensionError("mse_loss: " + std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(target.size()) + " targets");
  }
  if (pred.empty()) throw DimensionError("mse_loss: empty batch");
  const double scale = 1.0 / static_cast<double>(pred.size());
  MseResult r;
  r.dpred.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double diff = pred[i] - target[i];
    r.loss += diff * diff;
    r.dpred[i] = 2.0 * scale * diff;
  }
  r.loss *= scale;
  return r;
}

}  // namespace moec::nn

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "moec/nn/layers.hpp"
#include "moec/nn/matrix.hpp"
#include "moec/router.hpp"
#include "moec/volume.hpp"

namespace moec {

class Rng;

/// Architecture and routing hyperparameters. Everything here is written
/// into the artifact header.
struct ModelConfig {
  std::size_t n_experts = 2;
  std::size_t top_k = 1;
  /// Shared feature width F of encoder, router, experts and decoder.
  std::size_t features = 0;
  /// Hidden sine layers per expert; each expert ends in one extra F→F linear layer.
  std::size_t expert_depth = 5;
  std::size_t encoder_depth = 2;
  /// Sine layers before the final F→1 linear layer.
  std::size_t decoder_depth = 1;
  double omega = 30.0;
  double lambda_balance = 0.01;
  double capacity_factor = 1.25;
  /// Original-intensity range mapped onto [0, 100].
  double norm_lo = 0.0;
  double norm_hi = 1.0;
  Dims dims;
  int voxel_bits = 8;
  /// "default" (5 hidden + final linear per expert) or "fc7" (7 FC layers per expert).
  std::string preset = "default";

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Applies a named architecture preset to `config`.
void apply_preset(ModelConfig& config, const std::string& preset);

struct ModelParams {
  std::vector<nn::Linear> encoder;
  routing::RouterParams router;
  std::vector<std::vector<nn::Linear>> experts;
  std::vector<nn::Linear> decoder;

  /// Canonical layer order: encoder, router (pre1, pre2, gate), experts in
  /// id order, decoder. Tensor ids and optimizer state follow it.
  std::vector<const nn::Linear*> layers() const;
  std::vector<nn::Linear*> layers();
  /// Whether canonical layer `index` belongs to the router.
  bool is_router_layer(std::size_t index) const noexcept;
  std::size_t param_count() const;
  bool all_finite() const;

  /// Every weight then bias, layer by layer, in canonical order.
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Gradients, one entry per canonical layer.
using ModelGrad = std::vector<nn::LinearGrad>;

/// Parameter count of the full network at width `features`.
std::size_t count_params(const ModelConfig& config, std::size_t features);

/// floor(voxels·bytes_per_voxel / ratio / 4): the weight budget at four bytes
/// per serialized parameter. Header overhead is not included.
std::size_t budget_params(Dims dims, int voxel_bits, double ratio);

/// Largest F with count_params(F) <= max_params (integer bisection).
std::size_t solve_width(std::size_t max_params, const ModelConfig& skeleton);

/// SIREN initialization for sine layers (omega from the config), U(±1/sqrt(in))
/// for the router, U(±sqrt(6/in)) for expert output layers and
/// U(±output_scale·sqrt(6/in)) with bias `output_bias` for the final decoder
/// layer. Passing the target's mean and standard deviation makes the initial
/// prediction match both.
ModelParams init_params(const ModelConfig& config, Rng& rng, double output_bias = 0.0,
                        double output_scale = kNormalizedPeak / 2.0);

/// All-zero parameters with the layer shapes of `config`.
ModelParams zero_params(const ModelConfig& config);

struct ExpertTape {
  std::vector<nn::LinearTape> linear;
  std::vector<nn::SineTape> sine;
  std::vector<std::size_t> points;
};

struct ForwardTape {
  std::vector<nn::LinearTape> encoder_linear;
  std::vector<nn::SineTape> encoder_sine;
  routing::GateTape gate;
  routing::Selection selection;
  routing::DispatchPlan plan;
  std::vector<ExpertTape> experts;
  std::vector<nn::Matrix> expert_outputs;
  std::vector<nn::LinearTape> decoder_linear;
  std::vector<nn::SineTape> decoder_sine;
  std::size_t points = 0;
};

struct ForwardResult {
  std::vector<double> pred;
  /// Probabilities of the router for every point.
  nn::Matrix probs;
  double balance_loss = 0.0;
  ForwardTape tape;
};

/// pred = decoder(combine(experts(dispatch(router(encoder(coords)))))).
/// `training` applies the expert capacity; otherwise routing is dense top-k
/// with no drops.
ForwardResult forward(const nn::Matrix& coords, const ModelParams& params,
                      const ModelConfig& config, bool training);

/// Inference-mode predictions.
std::vector<double> predict(const nn::Matrix& coords, const ModelParams& params,
                            const ModelConfig& config);

/// Gradients of mean-squared-error-style upstream `dpred` plus
/// lambda_balance·L_b. Router gradients are zero once the router is frozen.
ModelGrad backward(const ForwardResult& result, const ModelParams& params,
                   const ModelConfig& config, std::span<const double> dpred);

/// Flattens a gradient in the same order as ModelParams::flatten.
std::vector<double> flatten(const ModelGrad& grad);

/// Evaluates every voxel once in flat-index order, `chunk_size` voxels at a
/// time, on up to `threads` workers (0 = MOEC_THREADS or hardware). The
/// result carries the config's dims, bit depth and normalization range.
Volume reconstruct_grid(const ModelParams& params, const ModelConfig& config,
                        std::size_t chunk_size = 65536, unsigned threads = 0);

/// Worker count from MOEC_THREADS, else hardware concurrency.
unsigned default_threads();

}  // namespace moec

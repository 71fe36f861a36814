// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moec/model.hpp"
#include "moec/rng.hpp"
#include "moec/volume.hpp"

namespace moec {

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update at 1-based step `t`. Throws NumericError
/// on a non-finite gradient before touching anything.
void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m,
                 std::span<double> v, std::size_t t, double lr, const AdamSettings& settings);

/// One optimizer step = one sampled batch ("epoch" in the original protocol).
struct TrainConfig {
  std::size_t steps = 20000;
  std::size_t batch_size = 8192;
  double lr0 = 5e-4;
  /// Per-step decay; unset means lr(steps) = lr0 / 10.
  std::optional<double> gamma;
  AdamSettings adam;
  /// Router updates stop from this step on; unset means 75% of `steps`.
  std::optional<std::size_t> freeze_step;
  std::uint64_t seed = 0;
  /// Abort when L_d stays above factor × the first step's L_d this many steps in a row.
  std::size_t divergence_window = 1000;
  double divergence_factor = 10.0;

  double resolved_gamma() const;
  std::size_t resolved_freeze_step() const;
  void validate() const;

  /// 64³-scale defaults: 8,192 points per batch, 20,000 steps.
  static TrainConfig desk();
  /// 256³-scale schedule: 200,000 points per batch, 80,000 steps.
  static TrainConfig full_scale();
};

/// lr0·gamma^step
double lr_at(std::size_t step, const TrainConfig& config);

struct TrainRecord {
  std::size_t step = 0;
  double distortion = 0.0;
  double balance = 0.0;
  double lr = 0.0;
  double drop_fraction = 0.0;
  /// Kept points per expert.
  std::vector<std::size_t> counts;
  /// Top-k choices per expert before the capacity limit.
  std::vector<std::size_t> routed;
  bool router_frozen = false;
};

using TrainLog = std::vector<TrainRecord>;

std::string to_json_line(const TrainRecord& record);
void write_log(const TrainLog& log, std::ostream& out);

/// Adam moments laid out like ModelParams::flatten.
struct AdamState {
  std::size_t t = 0;
  std::vector<double> m;
  std::vector<double> v;
};

struct TrainState {
  std::size_t step = 0;
  AdamState adam;
  Rng rng;
  double best_loss = 0.0;
  std::size_t best_step = 0;
  double initial_distortion = 0.0;
  std::size_t diverging_steps = 0;
};

/// Sets features, dims, bit depth and normalization range from `volume`
/// and the parameter budget for `ratio`.
ModelConfig resolve_model_config(const Volume& volume, ModelConfig skeleton, double ratio);

/// Overfits a model to one volume.
class Trainer {
 public:
  Trainer(const Volume& volume, ModelConfig model, TrainConfig train);

  /// Continues from a checkpoint written by `save_checkpoint`. The seed in
  /// `train` must match the one the checkpoint was started with.
  static Trainer resume(const Volume& volume, const std::filesystem::path& checkpoint,
                        TrainConfig train);

  /// Runs one optimizer step and returns its log record.
  const TrainRecord& step();
  /// Steps until `train_config().steps`; `on_step` sees every record.
  void run(const std::function<void(const TrainRecord&)>& on_step = {});
  bool done() const noexcept { return state_.step >= train_.steps; }

  void save_checkpoint(const std::filesystem::path& path) const;
  std::vector<std::uint8_t> checkpoint_bytes() const;

  const ModelParams& params() const noexcept { return params_; }
  const ModelConfig& model_config() const noexcept { return model_; }
  const TrainConfig& train_config() const noexcept { return train_; }
  const TrainState& state() const noexcept { return state_; }
  const TrainLog& log() const noexcept { return log_; }

 private:
  Trainer(const Volume& volume, ModelConfig model, TrainConfig train, ModelParams params,
          TrainState state);

  const Volume* volume_;
  ModelConfig model_;
  TrainConfig train_;
  ModelParams params_;
  TrainState state_;
  TrainLog log_;
};

struct TrainResult {
  ModelConfig config;
  ModelParams params;
  TrainLog log;
};

/// Convenience wrapper: construct a Trainer and run it to completion.
TrainResult train(const Volume& volume, const ModelConfig& model, const TrainConfig& train);

}  // namespace moec

// SPDX-License-Identifier: Apache-2.0
#include "moec/trainer.hpp"

#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "moec/error.hpp"
#include "moec/nn/layers.hpp"

namespace moec {

void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m,
                 std::span<double> v, std::size_t t, double lr, const AdamSettings& s) {
  if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
    throw DimensionError("adam_update: state does not match parameters");
  }
  if (t == 0) throw std::invalid_argument("adam_update: steps are 1-based");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericError("non-finite gradient at parameter " + std::to_string(i) + " (value " +
                         std::to_string(grads[i]) + ") on optimizer step " + std::to_string(t));
    }
  }
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * grads[i];
    v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * grads[i] * grads[i];
    params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + s.epsilon);
  }
}

double TrainConfig::resolved_gamma() const {
  if (gamma) return *gamma;
  if (steps == 0) return 1.0;
  return std::pow(0.1, 1.0 / static_cast<double>(steps));
}

std::size_t TrainConfig::resolved_freeze_step() const {
  if (freeze_step) return *freeze_step;
  return static_cast<std::size_t>(std::llround(0.75 * static_cast<double>(steps)));
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  if (!(lr0 > 0.0)) throw std::invalid_argument("learning rate must be positive");
  const double g = resolved_gamma();
  if (!(g > 0.0 && g <= 1.0)) throw std::invalid_argument("decay factor must lie in (0, 1]");
  if (resolved_freeze_step() > steps) {
    throw std::invalid_argument("freeze step lies beyond the last step");
  }
}

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::full_scale() {
  TrainConfig c;
  c.steps = 80000;
  c.batch_size = 200000;
  return c;
}

double lr_at(std::size_t step, const TrainConfig& config) {
  if (step > config.steps) throw std::out_of_range("lr_at: step beyond schedule");
  return config.lr0 * std::pow(config.resolved_gamma(), static_cast<double>(step));
}

std::string to_json_line(const TrainRecord& r) {
  nlohmann::json j;
  j["step"] = r.step;
  j["L_d"] = r.distortion;
  j["L_b"] = r.balance;
  j["lr"] = r.lr;
  j["drop_fraction"] = r.drop_fraction;
  j["counts"] = r.counts;
  j["routed"] = r.routed;
  j["router_frozen"] = r.router_frozen;
  return j.dump();
}

void write_log(const TrainLog& log, std::ostream& out) {
  for (const auto& r : log) out << to_json_line(r) << '\n';
}

ModelConfig resolve_model_config(const Volume& volume, ModelConfig skeleton, double ratio) {
  skeleton.dims = volume.dims;
  skeleton.voxel_bits = volume.voxel_bits;
  skeleton.norm_lo = volume.lo;
  skeleton.norm_hi = volume.hi;
  skeleton.features = 1;
  const std::size_t budget = budget_params(volume.dims, volume.voxel_bits, ratio);
  skeleton.features = solve_width(budget, skeleton);
  skeleton.validate();
  return skeleton;
}

namespace {

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v, double mean) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size()));
}

/// Output-layer init bound in target standard deviations.
constexpr double kOutputSigmas = 2.0;

}  // namespace

Trainer::Trainer(const Volume& volume, ModelConfig model, TrainConfig train)
    : volume_(&volume), model_(std::move(model)), train_(std::move(train)) {
  model_.validate();
  train_.validate();
  if (!(model_.dims == volume.dims)) throw DimensionError("model dims do not match the volume");
  // The init stream is separate from the sampling stream so that changing
  // the architecture does not reshuffle the batches.
  Rng init_rng(train_.seed ^ 0x9e3779b97f4a7c15ULL);
  const double mean = mean_of(volume.data);
  params_ = init_params(model_, init_rng, mean, kOutputSigmas * std_of(volume.data, mean));
  state_.rng = Rng(train_.seed);
  const std::size_t n = params_.param_count();
  state_.adam.m.assign(n, 0.0);
  state_.adam.v.assign(n, 0.0);
  if (train_.resolved_freeze_step() == 0) params_.router.freeze();
}

Trainer::Trainer(const Volume& volume, ModelConfig model, TrainConfig train, ModelParams params,
                 TrainState state)
    : volume_(&volume),
      model_(std::move(model)),
      train_(std::move(train)),
      params_(std::move(params)),
      state_(std::move(state)) {
  model_.validate();
  train_.validate();
}

const TrainRecord& Trainer::step() {
  if (done()) throw std::logic_error("training already finished");
  if (state_.step >= train_.resolved_freeze_step() && !params_.router.is_frozen()) {
    params_.router.freeze();
  }
  const CoordBatch batch = sample_batch(*volume_, train_.batch_size, state_.rng);
  const ForwardResult fr = forward(batch.coords, params_, model_, true);
  const nn::MseResult mse = nn::mse_loss(fr.pred, batch.targets);
  if (!std::isfinite(mse.loss)) {
    throw NumericError("distortion loss became non-finite at step " + std::to_string(state_.step));
  }
  const ModelGrad grads = backward(fr, params_, model_, mse.dpred);
  const double lr = lr_at(state_.step, train_);

  std::vector<double> flat = params_.flatten();
  const std::vector<double> g = flatten(grads);
  state_.adam.t += 1;
  std::size_t at = 0;
  const auto layers = params_.layers();
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const std::size_t len = layers[li]->param_count();
    if (!(params_.router.is_frozen() && params_.is_router_layer(li))) {
      const auto sub = [&](auto& v) { return std::span(v).subspan(at, len); };
      adam_update(sub(flat), std::span<const double>(g).subspan(at, len), sub(state_.adam.m),
                  sub(state_.adam.v), state_.adam.t, lr, train_.adam);
    }
    at += len;
  }
  params_.assign(flat);

  TrainRecord rec;
  rec.step = state_.step;
  rec.distortion = mse.loss;
  rec.balance = fr.balance_loss;
  rec.lr = lr;
  rec.drop_fraction = fr.tape.plan.drop_fraction();
  rec.counts = fr.tape.plan.counts;
  rec.routed.assign(model_.n_experts, 0);
  for (auto e : fr.tape.plan.choice_expert) ++rec.routed[e];
  rec.router_frozen = params_.router.is_frozen();

  if (state_.step == 0) {
    state_.initial_distortion = mse.loss;
    state_.best_loss = mse.loss;
  }
  if (mse.loss < state_.best_loss) {
    state_.best_loss = mse.loss;
    state_.best_step = state_.step;
  }
  if (mse.loss > train_.divergence_factor * state_.initial_distortion) {
    if (++state_.diverging_steps >= train_.divergence_window) {
      throw NumericError("training diverged: L_d above " +
                         std::to_string(train_.divergence_factor) + "x its initial value for " +
                         std::to_string(train_.divergence_window) + " steps");
    }
  } else {
    state_.diverging_steps = 0;
  }
  state_.step += 1;
  log_.push_back(std::move(rec));
  return log_.back();
}

void Trainer::run(const std::function<void(const TrainRecord&)>& on_step) {
  while (!done()) {
    const TrainRecord& r = step();
    if (on_step) on_step(r);
  }
}

TrainResult train(const Volume& volume, const ModelConfig& model, const TrainConfig& config) {
  Trainer t(volume, model, config);
  t.run();
  return {t.model_config(), t.params(), t.log()};
}

}  // namespace moec

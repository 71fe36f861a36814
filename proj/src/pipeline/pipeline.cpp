// SPDX-License-Identifier: Apache-2.0
#include "moec/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>

#include "moec/error.hpp"

namespace moec {

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const char* what) {
  if (!j.is_object()) throw UsageError(std::string(what) + " config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw UsageError(std::string("unknown ") + what + " field '" + key + "'");
  }
}

}  // namespace

void apply_model_json(ModelConfig& c, const nlohmann::json& j) {
  reject_unknown(j,
                 {"n_experts", "top_k", "features", "expert_depth", "encoder_depth",
                  "decoder_depth", "omega", "lambda_balance", "capacity_factor", "preset"},
                 "model");
  try {
    if (j.contains("preset")) apply_preset(c, j["preset"].get<std::string>());
    if (j.contains("n_experts")) c.n_experts = j["n_experts"].get<std::size_t>();
    if (j.contains("top_k")) c.top_k = j["top_k"].get<std::size_t>();
    if (j.contains("features")) c.features = j["features"].get<std::size_t>();
    if (j.contains("expert_depth")) c.expert_depth = j["expert_depth"].get<std::size_t>();
    if (j.contains("encoder_depth")) c.encoder_depth = j["encoder_depth"].get<std::size_t>();
    if (j.contains("decoder_depth")) c.decoder_depth = j["decoder_depth"].get<std::size_t>();
    if (j.contains("omega")) c.omega = j["omega"].get<double>();
    if (j.contains("lambda_balance")) c.lambda_balance = j["lambda_balance"].get<double>();
    if (j.contains("capacity_factor")) {
      c.capacity_factor = j["capacity_factor"].is_null() ? routing::kUnlimitedCapacity
                                                         : j["capacity_factor"].get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("model config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("model config: ") + e.what());
  }
}

void apply_train_json(TrainConfig& c, const nlohmann::json& j) {
  reject_unknown(j,
                 {"steps", "batch_size", "lr0", "gamma", "freeze_step", "seed",
                  "divergence_window", "divergence_factor", "adam"},
                 "train");
  try {
    if (j.contains("steps")) c.steps = j["steps"].get<std::size_t>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
    if (j.contains("lr0")) c.lr0 = j["lr0"].get<double>();
    if (j.contains("gamma")) {
      c.gamma = j["gamma"].is_null() ? std::nullopt : std::optional(j["gamma"].get<double>());
    }
    if (j.contains("freeze_step")) {
      c.freeze_step = j["freeze_step"].is_null()
                          ? std::nullopt
                          : std::optional(j["freeze_step"].get<std::size_t>());
    }
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("divergence_window")) c.divergence_window = j["divergence_window"].get<std::size_t>();
    if (j.contains("divergence_factor")) c.divergence_factor = j["divergence_factor"].get<double>();
    if (j.contains("adam")) {
      const auto& a = j["adam"];
      reject_unknown(a, {"beta1", "beta2", "epsilon"}, "adam");
      if (a.contains("beta1")) c.adam.beta1 = a["beta1"].get<double>();
      if (a.contains("beta2")) c.adam.beta2 = a["beta2"].get<double>();
      if (a.contains("epsilon")) c.adam.epsilon = a["epsilon"].get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("train config: ") + e.what());
  }
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"lr0", c.lr0},
          {"gamma", c.resolved_gamma()},
          {"freeze_step", c.resolved_freeze_step()},
          {"seed", c.seed},
          {"divergence_window", c.divergence_window},
          {"divergence_factor", c.divergence_factor},
          {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}}};
}

CompressResult compress(const Volume& volume, const CompressOptions& options,
                        const std::function<void(const TrainRecord&)>& on_step) {
  CompressResult out;
  try {
    options.train.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("train config: ") + e.what());
  }
  out.model = resolve_model_config(volume, options.model, options.ratio);

  const auto start = std::chrono::steady_clock::now();
  const bool resuming = options.resume && options.checkpoint && std::filesystem::exists(*options.checkpoint);
  Trainer trainer = resuming ? Trainer::resume(volume, *options.checkpoint, options.train)
                             : Trainer(volume, out.model, options.train);
  if (!(trainer.model_config() == out.model)) {
    throw UsageError("checkpoint was trained with a different model configuration");
  }
  out.start_step = trainer.state().step;
  while (!trainer.done()) {
    const TrainRecord& r = trainer.step();
    if (on_step) on_step(r);
    if (options.checkpoint && options.checkpoint_every > 0 &&
        trainer.state().step % options.checkpoint_every == 0 && !trainer.done()) {
      trainer.save_checkpoint(*options.checkpoint);
    }
  }
  if (options.checkpoint) trainer.save_checkpoint(*options.checkpoint);
  out.train_seconds = seconds_since(start);

  const auto pack_start = std::chrono::steady_clock::now();
  out.params = trainer.params();
  out.log = trainer.log();
  out.artifact = codec::pack_artifact(out.params, out.model, options.mode,
                                      {options.train.seed, options.train.steps});
  out.pack_seconds = seconds_since(pack_start);
  return out;
}

DecompressResult decompress(std::span<const std::uint8_t> bytes, std::size_t chunk_size,
                            unsigned threads) {
  const auto start = std::chrono::steady_clock::now();
  DecompressResult out;
  out.artifact = codec::unpack_artifact(bytes);
  out.volume = reconstruct_grid(out.artifact.params, out.artifact.config, chunk_size, threads);
  out.seconds = seconds_since(start);
  return out;
}

analysis::MetricsReport evaluate(const Volume& original, const Volume& reconstructed,
                                 std::span<const std::size_t> concentration_m) {
  if (!(original.dims == reconstructed.dims)) {
    throw DimensionError("evaluate: volumes have different dims");
  }
  analysis::MetricsReport r;
  r.psnr_db = analysis::psnr(original, reconstructed);
  const std::size_t win = std::min({std::size_t{7}, original.dims.h, original.dims.w, original.dims.d});
  r.ssim = analysis::ssim3d(original, reconstructed, {win});
  if (!concentration_m.empty()) {
    const auto spectrum = analysis::fft3(original.original_values(), original.dims);
    for (std::size_t m : concentration_m) {
      r.concentration[m] = analysis::spectrum_concentration(spectrum, m);
    }
  }
  return r;
}

std::string hex32(std::uint32_t value) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", value);
  return buf;
}

std::uint32_t volume_crc32(const Volume& volume) {
  std::vector<std::uint8_t> bytes;
  const auto values = volume.source_values();
  bytes.reserve(values.size() * 2);
  for (auto v : values) {
    bytes.push_back(static_cast<std::uint8_t>(v & 0xff));
    if (volume.voxel_bits == 16) bytes.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  return codec::crc32(bytes);
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j;
  j["command"] = command;
  j["version"] = kVersion;
  j["model"] = codec::config_to_json(model);
  j["train"] = train_config_to_json(train);
  j["ratio"] = ratio;
  j["mode"] = codec::to_string(mode);
  j["input"] = input;
  j["input_crc32"] = hex32(input_crc32);
  j["baseline"] = baseline;
  j["artifact_crc32"] = hex32(artifact_crc32);
  j["artifact_bytes"] = artifact_bytes;
  j["timings"] = timings;
  j["extra"] = extra;
  j["manifest_hash"] = hash();
  return j;
}

std::string RunManifest::hash() const {
  nlohmann::json j;
  j["command"] = command;
  j["version"] = kVersion;
  j["model"] = codec::config_to_json(model);
  j["train"] = train_config_to_json(train);
  j["ratio"] = ratio;
  j["mode"] = codec::to_string(mode);
  j["input_crc32"] = input_crc32;
  const std::string text = j.dump();
  return hex32(codec::crc32({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}));
}

}  // namespace moec

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moec/analysis.hpp"
#include "moec/codec/artifact.hpp"
#include "moec/model.hpp"
#include "moec/trainer.hpp"
#include "moec/volume.hpp"

namespace moec {

inline constexpr const char* kVersion = "0.1.0";

/// Overwrites only the fields present in `j`; unknown keys throw UsageError.
void apply_model_json(ModelConfig& config, const nlohmann::json& j);
void apply_train_json(TrainConfig& config, const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& config);

struct CompressOptions {
  /// Architecture and routing; features, dims and range are filled in.
  ModelConfig model;
  TrainConfig train;
  double ratio = 64.0;
  codec::CodecMode mode = codec::CodecMode::quant_huffman;
  /// Written every `checkpoint_every` steps and at the end, when set.
  std::optional<std::filesystem::path> checkpoint;
  std::size_t checkpoint_every = 1000;
  /// Continue from `checkpoint` if the file exists.
  bool resume = false;
};

struct CompressResult {
  ModelConfig model;
  /// Full-precision trained parameters.
  ModelParams params;
  TrainLog log;
  codec::PackedArtifact artifact;
  /// Step the run started from (non-zero after a resume).
  std::size_t start_step = 0;
  double train_seconds = 0.0;
  double pack_seconds = 0.0;
};

CompressResult compress(const Volume& volume, const CompressOptions& options,
                        const std::function<void(const TrainRecord&)>& on_step = {});

struct DecompressResult {
  codec::UnpackedArtifact artifact;
  Volume volume;
  double seconds = 0.0;
};

DecompressResult decompress(std::span<const std::uint8_t> bytes, std::size_t chunk_size = 65536,
                            unsigned threads = 0);

/// PSNR, SSIM and D(x) at each M (on `original`).
analysis::MetricsReport evaluate(const Volume& original, const Volume& reconstructed,
                                 std::span<const std::size_t> concentration_m);

/// Resolved configs, input checksum, seed, versions and timings of one run.
struct RunManifest {
  std::string command;
  ModelConfig model;
  TrainConfig train;
  double ratio = 0.0;
  codec::CodecMode mode = codec::CodecMode::raw;
  std::string input;
  std::uint32_t input_crc32 = 0;
  std::uint32_t artifact_crc32 = 0;
  std::size_t artifact_bytes = 0;
  bool baseline = false;
  nlohmann::json timings = nlohmann::json::object();
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
  /// CRC32 of the manifest without timings, as 8 hex digits. Equal hashes
  /// mean equal inputs and settings.
  std::string hash() const;
};

/// Checksum of the volume as stored in the source integer type.
std::uint32_t volume_crc32(const Volume& volume);

std::string hex32(std::uint32_t value);

}  // namespace moec

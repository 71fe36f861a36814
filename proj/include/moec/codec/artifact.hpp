// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "moec/model.hpp"

namespace moec::codec {

inline constexpr std::uint16_t kArtifactVersion = 1;

/// Whole-artifact encoding mode. Biases are always stored as f32.
enum class CodecMode : std::uint8_t { raw = 0, quant = 1, quant_huffman = 2 };

std::string to_string(CodecMode mode);
/// Accepts "raw", "quant" and "quant+huffman".
CodecMode parse_codec_mode(const std::string& name);

/// Per-record encoding actually used. A Huffman record that would be larger
/// than its plain int8 form is written as `quant`.
enum class TensorMode : std::uint8_t { f32 = 0, int8 = 1, int8_huffman = 2 };

struct TensorRecord {
  std::uint16_t id = 0;
  TensorMode mode = TensorMode::f32;
  std::uint32_t payload_bytes = 0;
  std::size_t elements = 0;
};

struct SizeReport {
  std::size_t total_bytes = 0;
  std::size_t header_bytes = 0;
  std::size_t payload_bytes = 0;
  std::vector<TensorRecord> tensors;
  /// Huffman-mode tensors written as plain int8 instead.
  std::size_t huffman_fallbacks = 0;
};

struct ArtifactMeta {
  std::uint64_t seed = 0;
  std::size_t steps = 0;
};

struct PackedArtifact {
  std::vector<std::uint8_t> bytes;
  SizeReport report;
};

/// Serializes weights with tensor ids 2·layer (weight) and 2·layer + 1
/// (bias) in canonical layer order.
PackedArtifact pack_artifact(const ModelParams& params, const ModelConfig& config, CodecMode mode,
                             const ArtifactMeta& meta = {});

struct UnpackedArtifact {
  ModelConfig config;
  ModelParams params;
  CodecMode mode = CodecMode::raw;
  ArtifactMeta meta;
  SizeReport report;
  /// Bytes taken up by the artifact, CRC included.
  std::size_t consumed = 0;
};

/// Throws CorruptArtifactError on bad magic, version, checksum or layout.
/// With `allow_trailing`, bytes after the CRC are left for the caller.
UnpackedArtifact unpack_artifact(std::span<const std::uint8_t> bytes, bool allow_trailing = false);

/// The parameters `unpack_artifact` would hand back for `mode`.
ModelParams as_stored(const ModelParams& params, CodecMode mode);

/// original bytes / artifact bytes
double compression_ratio(std::size_t original_bytes, std::size_t artifact_bytes);

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace moec::codec

// SPDX-License-Identifier: Apache-2.0
#include "moec/codec/artifact.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "bytes.hpp"
#include "moec/codec/huffman.hpp"
#include "moec/codec/quantize.hpp"
#include "moec/error.hpp"

namespace moec::codec {

namespace {

constexpr char kMagic[4] = {'M', 'O', 'E', 'C'};
constexpr std::size_t kMaxParams = std::size_t{1} << 28;

std::vector<float> to_f32(std::span<const double> v) {
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
  return out;
}

void put_floats(detail::ByteWriter& w, std::span<const float> v) {
  for (float x : v) w.put(x);
}

std::vector<std::uint8_t> as_bytes(std::span<const std::int8_t> q) {
  return {reinterpret_cast<const std::uint8_t*>(q.data()),
          reinterpret_cast<const std::uint8_t*>(q.data()) + q.size()};
}

struct EncodedTensor {
  TensorMode mode;
  std::vector<std::uint8_t> payload;
  bool fell_back = false;
};

EncodedTensor encode_tensor(std::span<const double> values, TensorMode wanted) {
  EncodedTensor out{wanted, {}, false};
  detail::ByteWriter w(out.payload);
  const auto f = to_f32(values);
  if (wanted == TensorMode::f32) {
    put_floats(w, f);
    return out;
  }
  const auto q = quantize_tensor(f);
  const auto qbytes = as_bytes(q.q);
  w.put(q.scale);
  if (wanted == TensorMode::int8_huffman) {
    const auto enc = huffman_encode(qbytes);
    if (enc.stored_size() < qbytes.size()) {
      w.bytes(enc.lengths);
      w.bytes(enc.bits);
      return out;
    }
    out.mode = TensorMode::int8;
    out.fell_back = true;
  }
  w.bytes(qbytes);
  return out;
}

std::vector<double> decode_tensor(TensorMode mode, std::span<const std::uint8_t> payload,
                                  std::size_t elements) {
  detail::ByteReader r(payload, "tensor payload");
  std::vector<double> out(elements);
  if (mode == TensorMode::f32) {
    if (payload.size() != 4 * elements) throw CorruptArtifactError("f32 tensor has wrong length");
    for (auto& v : out) v = r.get<float>();
    return out;
  }
  const float scale = r.get<float>();
  if (!(scale > 0.0f) || !std::isfinite(scale)) throw CorruptArtifactError("bad tensor scale");
  std::vector<std::uint8_t> qbytes;
  if (mode == TensorMode::int8) {
    if (r.remaining() != elements) throw CorruptArtifactError("int8 tensor has wrong length");
    const auto s = r.take(elements);
    qbytes.assign(s.begin(), s.end());
  } else {
    CodeLengths lengths{};
    const auto table = r.take(lengths.size());
    std::copy(table.begin(), table.end(), lengths.begin());
    qbytes = huffman_decode(lengths, r.take(r.remaining()), elements);
  }
  std::vector<std::int8_t> q(elements);
  for (std::size_t i = 0; i < elements; ++i) {
    q[i] = static_cast<std::int8_t>(qbytes[i]);
    if (q[i] == -128) throw CorruptArtifactError("int8 value outside [-127, 127]");
  }
  const auto f = dequantize_tensor(q, scale);
  for (std::size_t i = 0; i < elements; ++i) out[i] = f[i];
  return out;
}

TensorMode weight_mode(CodecMode mode) {
  switch (mode) {
    case CodecMode::raw: return TensorMode::f32;
    case CodecMode::quant: return TensorMode::int8;
    case CodecMode::quant_huffman: return TensorMode::int8_huffman;
  }
  throw std::invalid_argument("unknown codec mode");
}

}  // namespace

std::string to_string(CodecMode mode) {
  switch (mode) {
    case CodecMode::raw: return "raw";
    case CodecMode::quant: return "quant";
    case CodecMode::quant_huffman: return "quant+huffman";
  }
  return "?";
}

CodecMode parse_codec_mode(const std::string& name) {
  if (name == "raw") return CodecMode::raw;
  if (name == "quant") return CodecMode::quant;
  if (name == "quant+huffman") return CodecMode::quant_huffman;
  throw std::invalid_argument("unknown codec mode '" + name + "' (raw, quant, quant+huffman)");
}

nlohmann::json config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["n_experts"] = c.n_experts;
  j["top_k"] = c.top_k;
  j["features"] = c.features;
  j["expert_depth"] = c.expert_depth;
  j["encoder_depth"] = c.encoder_depth;
  j["decoder_depth"] = c.decoder_depth;
  j["omega"] = c.omega;
  j["lambda_balance"] = c.lambda_balance;
  if (std::isfinite(c.capacity_factor)) {
    j["capacity_factor"] = c.capacity_factor;
  } else {
    j["capacity_factor"] = nullptr;
  }
  j["norm"] = {c.norm_lo, c.norm_hi};
  j["dims"] = {c.dims.h, c.dims.w, c.dims.d};
  j["voxel_bits"] = c.voxel_bits;
  j["preset"] = c.preset;
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_experts = j.at("n_experts").get<std::size_t>();
  c.top_k = j.at("top_k").get<std::size_t>();
  c.features = j.at("features").get<std::size_t>();
  c.expert_depth = j.at("expert_depth").get<std::size_t>();
  c.encoder_depth = j.at("encoder_depth").get<std::size_t>();
  c.decoder_depth = j.at("decoder_depth").get<std::size_t>();
  c.omega = j.at("omega").get<double>();
  c.lambda_balance = j.at("lambda_balance").get<double>();
  const auto& cf = j.at("capacity_factor");
  c.capacity_factor = cf.is_null() ? std::numeric_limits<double>::infinity() : cf.get<double>();
  c.norm_lo = j.at("norm").at(0).get<double>();
  c.norm_hi = j.at("norm").at(1).get<double>();
  const auto& d = j.at("dims");
  c.dims = Dims{d.at(0).get<std::size_t>(), d.at(1).get<std::size_t>(), d.at(2).get<std::size_t>()};
  c.voxel_bits = j.at("voxel_bits").get<int>();
  c.preset = j.at("preset").get<std::string>();
  return c;
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t at = 0;
  while (at < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - at, 1U << 30));
    crc = ::crc32(crc, bytes.data() + at, n);
    at += n;
  }
  return static_cast<std::uint32_t>(crc);
}

PackedArtifact pack_artifact(const ModelParams& params, const ModelConfig& config, CodecMode mode,
                             const ArtifactMeta& meta) {
  config.validate();
  if (!params.all_finite()) throw NumericError("pack_artifact: parameters are not finite");
  const auto layers = params.layers();

  nlohmann::json header;
  header["config"] = config_to_json(config);
  header["mode"] = static_cast<int>(mode);
  header["seed"] = meta.seed;
  header["steps"] = meta.steps;
  header["tensors"] = 2 * layers.size();
  const std::string header_text = header.dump();

  PackedArtifact out;
  detail::ByteWriter w(out.bytes);
  w.text(std::string_view(kMagic, 4));
  w.put(kArtifactVersion);
  w.put(static_cast<std::uint32_t>(header_text.size()));
  w.text(header_text);
  out.report.header_bytes = w.size();

  for (std::size_t li = 0; li < layers.size(); ++li) {
    const auto* layer = layers[li];
    for (int part = 0; part < 2; ++part) {
      const auto id = static_cast<std::uint16_t>(2 * li + static_cast<std::size_t>(part));
      const std::span<const double> values =
          part == 0 ? layer->weight.values() : std::span<const double>(layer->bias);
      const auto enc = encode_tensor(values, part == 0 ? weight_mode(mode) : TensorMode::f32);
      w.put(id);
      w.put(static_cast<std::uint8_t>(enc.mode));
      w.put(static_cast<std::uint32_t>(enc.payload.size()));
      w.bytes(enc.payload);
      out.report.tensors.push_back(
          {id, enc.mode, static_cast<std::uint32_t>(enc.payload.size()), values.size()});
      out.report.payload_bytes += enc.payload.size();
      if (enc.fell_back) ++out.report.huffman_fallbacks;
    }
  }
  w.put(crc32(out.bytes));
  out.report.total_bytes = out.bytes.size();
  return out;
}

UnpackedArtifact unpack_artifact(std::span<const std::uint8_t> bytes, bool allow_trailing) {
  if (!allow_trailing && bytes.size() >= 4) {
    std::uint32_t stored = 0;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    if (stored != crc32(bytes.first(bytes.size() - 4)) && bytes.size() >= 10 &&
        std::memcmp(bytes.data(), kMagic, 4) == 0) {
      throw CorruptArtifactError("artifact checksum mismatch");
    }
  }
  detail::ByteReader r(bytes, "artifact");
  if (r.text(4) != std::string(kMagic, 4)) throw CorruptArtifactError("not a MOEC artifact");
  const auto version = r.get<std::uint16_t>();
  if (version != kArtifactVersion) {
    throw CorruptArtifactError("unsupported artifact version " + std::to_string(version));
  }
  const auto header_len = r.get<std::uint32_t>();
  const std::string header_text = r.text(header_len);

  UnpackedArtifact out;
  std::size_t tensor_count = 0;
  try {
    const auto header = nlohmann::json::parse(header_text);
    out.config = config_from_json(header.at("config"));
    out.config.validate();
    const int mode = header.at("mode").get<int>();
    if (mode < 0 || mode > 2) throw CorruptArtifactError("unknown mode in header");
    out.mode = static_cast<CodecMode>(mode);
    out.meta.seed = header.at("seed").get<std::uint64_t>();
    out.meta.steps = header.at("steps").get<std::size_t>();
    tensor_count = header.at("tensors").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptArtifactError(std::string("artifact header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CorruptArtifactError(std::string("artifact header: ") + e.what());
  }
  out.report.header_bytes = r.pos();

  if (count_params(out.config, out.config.features) > kMaxParams) {
    throw CorruptArtifactError("artifact declares an implausibly large network");
  }
  out.params = zero_params(out.config);
  auto layers = out.params.layers();
  if (tensor_count != 2 * layers.size()) {
    throw CorruptArtifactError("tensor count does not match the configuration");
  }
  for (std::size_t li = 0; li < layers.size(); ++li) {
    auto* layer = layers[li];
    for (int part = 0; part < 2; ++part) {
      const auto expected_id = static_cast<std::uint16_t>(2 * li + static_cast<std::size_t>(part));
      const auto id = r.get<std::uint16_t>();
      const auto mode = r.get<std::uint8_t>();
      const auto len = r.get<std::uint32_t>();
      if (id != expected_id) throw CorruptArtifactError("tensor records out of order");
      if (mode > 2 || (part == 1 && mode != 0)) throw CorruptArtifactError("bad tensor mode");
      const auto payload = r.take(len);
      const std::span<double> dst =
          part == 0 ? layer->weight.values() : std::span<double>(layer->bias);
      const auto values = decode_tensor(static_cast<TensorMode>(mode), payload, dst.size());
      std::copy(values.begin(), values.end(), dst.begin());
      out.report.tensors.push_back({id, static_cast<TensorMode>(mode), len, dst.size()});
      out.report.payload_bytes += len;
    }
  }
  const std::size_t body = r.pos();
  const auto stored_crc = r.get<std::uint32_t>();
  if (stored_crc != crc32(bytes.first(body))) throw CorruptArtifactError("artifact checksum mismatch");
  if (!allow_trailing && r.remaining() != 0) {
    throw CorruptArtifactError("trailing bytes after artifact");
  }
  out.consumed = r.pos();
  out.report.total_bytes = out.consumed;
  if (!out.params.all_finite()) throw CorruptArtifactError("artifact holds non-finite weights");
  return out;
}

ModelParams as_stored(const ModelParams& params, CodecMode mode) {
  ModelParams out = params;
  for (auto* layer : out.layers()) {
    for (double& b : layer->bias) b = static_cast<float>(b);
    auto w = layer->weight.values();
    const auto back = decode_tensor(TensorMode::f32,
                                    encode_tensor(w, TensorMode::f32).payload, w.size());
    std::copy(back.begin(), back.end(), w.begin());
    if (mode != CodecMode::raw) {
      const auto enc = encode_tensor(w, TensorMode::int8);
      const auto q = decode_tensor(TensorMode::int8, enc.payload, w.size());
      std::copy(q.begin(), q.end(), w.begin());
    }
  }
  return out;
}

double compression_ratio(std::size_t original_bytes, std::size_t artifact_bytes) {
  if (artifact_bytes == 0) throw std::invalid_argument("compression_ratio: empty artifact");
  return static_cast<double>(original_bytes) / static_cast<double>(artifact_bytes);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

}  // namespace moec::codec

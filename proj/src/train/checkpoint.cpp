// SPDX-License-Identifier: Apache-2.0
#include <cstring>
#include <string>

#include <nlohmann/json.hpp>

#include "../codec/bytes.hpp"
#include "moec/codec/artifact.hpp"
#include "moec/error.hpp"
#include "moec/trainer.hpp"

namespace moec {

namespace {

constexpr char kAppendixMagic[4] = {'M', 'C', 'K', 'P'};
constexpr std::uint16_t kAppendixVersion = 1;

void put_doubles(codec::detail::ByteWriter& w, const std::vector<double>& v) {
  for (double x : v) w.put(x);
}

std::vector<double> get_doubles(codec::detail::ByteReader& r, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = r.get<double>();
  return v;
}

}  // namespace

std::vector<std::uint8_t> Trainer::checkpoint_bytes() const {
  auto bytes = codec::pack_artifact(params_, model_, codec::CodecMode::raw,
                                    {train_.seed, state_.step})
                   .bytes;
  const std::size_t start = bytes.size();
  nlohmann::json j;
  j["step"] = state_.step;
  j["seed"] = train_.seed;
  j["adam_t"] = state_.adam.t;
  j["best_loss"] = state_.best_loss;
  j["best_step"] = state_.best_step;
  j["initial_distortion"] = state_.initial_distortion;
  j["diverging_steps"] = state_.diverging_steps;
  j["router_frozen"] = params_.router.is_frozen();
  j["rng"] = state_.rng.state();
  const std::string text = j.dump();

  codec::detail::ByteWriter w(bytes);
  w.text(std::string_view(kAppendixMagic, 4));
  w.put(kAppendixVersion);
  w.put(static_cast<std::uint32_t>(text.size()));
  w.text(text);
  const auto flat = params_.flatten();
  w.put(static_cast<std::uint64_t>(flat.size()));
  put_doubles(w, flat);
  put_doubles(w, state_.adam.m);
  put_doubles(w, state_.adam.v);
  w.put(codec::crc32(std::span(bytes).subspan(start)));
  return bytes;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  const auto bytes = checkpoint_bytes();
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  codec::write_file(tmp, bytes);
  std::filesystem::rename(tmp, path);
}

Trainer Trainer::resume(const Volume& volume, const std::filesystem::path& checkpoint,
                        TrainConfig train) {
  const auto bytes = codec::read_file(checkpoint);
  const auto art = codec::unpack_artifact(bytes, true);
  const auto appendix = std::span<const std::uint8_t>(bytes).subspan(art.consumed);
  if (appendix.size() < 4) throw CorruptArtifactError("checkpoint has no optimizer appendix");
  std::uint32_t stored_crc = 0;
  std::memcpy(&stored_crc, appendix.data() + appendix.size() - 4, 4);
  if (stored_crc != codec::crc32(appendix.first(appendix.size() - 4))) {
    throw CorruptArtifactError("checkpoint checksum mismatch");
  }
  codec::detail::ByteReader r(appendix.first(appendix.size() - 4), "checkpoint");
  if (r.text(4) != std::string(kAppendixMagic, 4)) {
    throw CorruptArtifactError("checkpoint appendix has bad magic");
  }
  const auto version = r.get<std::uint16_t>();
  if (version != kAppendixVersion) {
    throw CorruptArtifactError("unsupported checkpoint version " + std::to_string(version));
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(r.text(r.get<std::uint32_t>()));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptArtifactError(std::string("checkpoint header: ") + e.what());
  }
  const auto seed = j.at("seed").get<std::uint64_t>();
  if (seed != train.seed) {
    throw UsageError("checkpoint was started with seed " + std::to_string(seed) +
                     ", not " + std::to_string(train.seed));
  }
  if (!(art.config.dims == volume.dims)) {
    throw DimensionError("checkpoint dims do not match the volume");
  }

  ModelParams params = art.params;
  const auto count = r.get<std::uint64_t>();
  if (count != params.param_count()) throw CorruptArtifactError("checkpoint parameter count");
  params.assign(get_doubles(r, count));
  TrainState state;
  state.adam.m = get_doubles(r, count);
  state.adam.v = get_doubles(r, count);
  if (r.remaining() != 0) throw CorruptArtifactError("trailing bytes in checkpoint");
  state.step = j.at("step").get<std::size_t>();
  state.adam.t = j.at("adam_t").get<std::size_t>();
  state.best_loss = j.at("best_loss").get<double>();
  state.best_step = j.at("best_step").get<std::size_t>();
  state.initial_distortion = j.at("initial_distortion").get<double>();
  state.diverging_steps = j.at("diverging_steps").get<std::size_t>();
  state.rng.restore(j.at("rng").get<std::string>());
  if (j.at("router_frozen").get<bool>()) params.router.freeze();
  return Trainer(volume, art.config, std::move(train), std::move(params), std::move(state));
}

}  // namespace moec

// SPDX-License-Identifier: Apache-2.0
// moec: compress 3D volumes into mixture-of-experts coordinate networks.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "moec/analysis.hpp"
#include "moec/checks.hpp"
#include "moec/codec/artifact.hpp"
#include "moec/error.hpp"
#include "moec/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace moec;

namespace {

Dims parse_dims(const std::string& text) {
  std::vector<std::size_t> parts;
  std::string cur;
  for (char ch : text + "x") {
    if (ch == 'x' || ch == 'X' || ch == ',') {
      if (cur.empty()) throw UsageError("bad dims '" + text + "'");
      try {
        parts.push_back(std::stoull(cur));
      } catch (const std::logic_error&) {
        throw UsageError("bad dims '" + text + "'");
      }
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (parts.size() == 1) parts = {parts[0], parts[0], parts[0]};
  if (parts.size() != 3) throw UsageError("dims must be N or HxWxD, got '" + text + "'");
  return {parts[0], parts[1], parts[2]};
}

std::string dims_text(Dims d) {
  return std::to_string(d.h) + "x" + std::to_string(d.w) + "x" + std::to_string(d.d);
}

Endianness parse_endian(const std::string& s) {
  if (s == "little") return Endianness::little;
  if (s == "big") return Endianness::big;
  throw UsageError("endianness must be 'little' or 'big'");
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string format_psnr(double db) {
  if (std::isinf(db)) return "inf";
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(3);
  s << db;
  return s.str();
}

/// Where the input volume comes from.
struct InputArgs {
  std::string path;
  std::string synthetic;
  std::string dims;
  int bits = 0;
  std::string endian = "little";
  std::uint64_t synthetic_seed = 0;

  void add(CLI::App* cmd) {
    cmd->add_option("--input", path, "raw volume (dims from the .json sidecar unless --dims)");
    cmd->add_option("--synthetic", synthetic,
                    "synthetic volume: two_material_sphere, smooth_gradient, band_limited[:M]");
    cmd->add_option("--dims", dims, "HxWxD (or N for a cube)");
    cmd->add_option("--bits", bits, "voxel bits, 8 or 16");
    cmd->add_option("--endian", endian, "byte order of --input")->check(CLI::IsMember({"little", "big"}));
    cmd->add_option("--synthetic-seed", synthetic_seed, "seed of the synthetic volume");
  }

  std::string describe() const { return path.empty() ? "synthetic:" + synthetic + ":" + dims : path; }

  Volume load() const {
    if (path.empty() == synthetic.empty()) {
      throw UsageError("give exactly one of --input or --synthetic");
    }
    if (!synthetic.empty()) {
      if (dims.empty()) throw UsageError("--synthetic needs --dims");
      SyntheticSpec spec;
      const auto colon = synthetic.find(':');
      spec.kind = parse_synthetic_kind(synthetic.substr(0, colon));
      if (colon != std::string::npos) spec.modes = std::stoull(synthetic.substr(colon + 1));
      spec.voxel_bits = bits;
      return make_synthetic(spec, parse_dims(dims), synthetic_seed);
    }
    if (dims.empty()) return load_raw(path);
    if (bits == 0) throw UsageError("--dims needs --bits");
    return load_raw(path, parse_dims(dims), bits, parse_endian(endian));
  }
};

/// Flags that override the config file, which overrides the defaults.
struct RunArgs {
  std::string config;
  std::optional<double> ratio;
  std::optional<std::size_t> experts, topk, steps, batch, freeze_at, features_override;
  std::optional<double> lambda, cf, lr;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode, preset;

  void add(CLI::App* cmd) {
    cmd->add_option("--config", config, "JSON file with \"model\", \"train\", \"ratio\", \"mode\"");
    cmd->add_option("--ratio", ratio, "target compression ratio (default 64)");
    cmd->add_option("--experts", experts, "number of experts n");
    cmd->add_option("--topk", topk, "experts per point k");
    cmd->add_option("--lambda", lambda, "balancing-loss weight");
    cmd->add_option("--cf", cf, "capacity factor C_f");
    cmd->add_option("--steps", steps, "optimizer steps");
    cmd->add_option("--batch", batch, "points per batch");
    cmd->add_option("--lr", lr, "initial learning rate");
    cmd->add_option("--seed", seed, "training seed");
    cmd->add_option("--freeze-at", freeze_at, "step at which the router freezes");
    cmd->add_option("--preset", preset, "expert depth preset: default or fc7");
    cmd->add_option("--mode", mode, "raw, quant or quant+huffman (default quant+huffman)");
  }

  CompressOptions resolve() const {
    CompressOptions o;
    if (!config.empty()) {
      const json j = read_json(config);
      for (const auto& [key, value] : j.items()) {
        if (key == "model") {
          apply_model_json(o.model, value);
        } else if (key == "train") {
          apply_train_json(o.train, value);
        } else if (key == "ratio") {
          o.ratio = value.get<double>();
        } else if (key == "mode") {
          o.mode = codec::parse_codec_mode(value.get<std::string>());
        } else {
          throw UsageError("unknown config key '" + key + "'");
        }
      }
    }
    if (preset) apply_preset(o.model, *preset);
    if (ratio) o.ratio = *ratio;
    if (experts) o.model.n_experts = *experts;
    if (topk) o.model.top_k = *topk;
    if (lambda) o.model.lambda_balance = *lambda;
    if (cf) o.model.capacity_factor = *cf;
    if (steps) o.train.steps = *steps;
    if (batch) o.train.batch_size = *batch;
    if (lr) o.train.lr0 = *lr;
    if (seed) o.train.seed = *seed;
    if (freeze_at) o.train.freeze_step = *freeze_at;
    if (mode) o.mode = codec::parse_codec_mode(*mode);
    return o;
  }
};

struct CompressArgs {
  InputArgs input;
  RunArgs run;
  std::string out;
  std::string checkpoint;
  std::size_t checkpoint_every = 1000;
  bool resume = false;
  bool quiet = false;
};

json train_summary(const CompressResult& r) {
  json j;
  if (!r.log.empty()) {
    j["final_L_d"] = r.log.back().distortion;
    j["final_L_b"] = r.log.back().balance;
    j["final_drop_fraction"] = r.log.back().drop_fraction;
  }
  return j;
}

int cmd_compress(const CompressArgs& a) {
  const Volume volume = a.input.load();
  CompressOptions o = a.run.resolve();
  if (!a.checkpoint.empty()) o.checkpoint = a.checkpoint;
  o.checkpoint_every = a.checkpoint_every;
  o.resume = a.resume;
  resolve_model_config(volume, o.model, o.ratio);

  const fs::path out(a.out);
  const fs::path log_path = out.string() + ".log.jsonl";
  std::ofstream log(log_path, o.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw FormatError("cannot write " + log_path.string());
  const std::size_t every = std::max<std::size_t>(1, o.train.steps / 20);
  const auto result = compress(volume, o, [&](const TrainRecord& r) {
    log << to_json_line(r) << '\n';
    if (!a.quiet && (r.step % every == 0 || r.step + 1 == o.train.steps)) {
      std::fprintf(stderr, "step %zu/%zu  L_d %.5g  L_b %.4f  drop %.3f\n", r.step + 1,
                   o.train.steps, r.distortion, r.balance, r.drop_fraction);
    }
  });
  codec::write_file(out, result.artifact.bytes);

  RunManifest m;
  m.command = "compress";
  m.model = result.model;
  m.train = o.train;
  m.ratio = o.ratio;
  m.mode = o.mode;
  m.input = a.input.describe();
  m.input_crc32 = volume_crc32(volume);
  m.artifact_crc32 = codec::crc32(result.artifact.bytes);
  m.artifact_bytes = result.artifact.bytes.size();
  m.baseline = result.model.n_experts == 1;
  m.timings = {{"train_seconds", result.train_seconds}, {"pack_seconds", result.pack_seconds}};
  m.extra = train_summary(result);
  m.extra["resumed_from_step"] = result.start_step;
  m.extra["achieved_ratio"] = codec::compression_ratio(volume.source_bytes(), m.artifact_bytes);
  m.extra["huffman_fallbacks"] = result.artifact.report.huffman_fallbacks;
  write_json(out.string() + ".manifest.json", m.to_json());

  std::printf("artifact %s: %zu bytes, ratio %.2f (target %.2f), F=%zu, n=%zu\n",
              out.string().c_str(), m.artifact_bytes, m.extra["achieved_ratio"].get<double>(),
              o.ratio, result.model.features, result.model.n_experts);
  if (!result.log.empty()) {
    std::printf("final L_d %.6g  L_b %.6f\n", result.log.back().distortion,
                result.log.back().balance);
  }
  std::printf("manifest %s\n", m.hash().c_str());
  return 0;
}

int cmd_decompress(const std::string& artifact, const std::string& out, std::size_t chunk,
                   const std::string& endian) {
  const auto bytes = codec::read_file(artifact);
  const auto r = decompress(bytes, chunk);
  save_raw(r.volume, out, parse_endian(endian));
  RunManifest m;
  m.command = "decompress";
  m.model = r.artifact.config;
  m.mode = r.artifact.mode;
  m.input = artifact;
  m.input_crc32 = codec::crc32(bytes);
  m.timings = {{"decompress_seconds", r.seconds}};
  write_json(out + ".manifest.json", m.to_json());
  std::printf("wrote %s (%s, %d-bit) in %.3f s\n", out.c_str(), dims_text(r.volume.dims).c_str(),
              r.volume.voxel_bits, r.seconds);
  std::printf("manifest %s\n", m.hash().c_str());
  return 0;
}

std::vector<std::size_t> resolve_ms(const std::vector<std::size_t>& ms, const Volume& v) {
  if (!ms.empty()) return ms;
  return {analysis::default_concentration_m(v.voxel_count())};
}

int cmd_eval(const std::string& original, const std::string& reconstructed,
             const std::vector<std::size_t>& ms_arg, const std::string& json_out) {
  const Volume a = load_raw(original);
  const Volume b = load_raw(reconstructed);
  if (!(a.dims == b.dims)) {
    throw DimensionError("dims differ: " + dims_text(a.dims) + " vs " + dims_text(b.dims));
  }
  // both on the reference's intensity scale
  const Volume b_on_a = make_volume(b.dims, b.voxel_bits, b.original_values(), a.lo, a.hi);
  const auto ms = resolve_ms(ms_arg, a);
  const auto report = evaluate(a, b_on_a, ms);
  const json j = report.to_json();
  if (!json_out.empty()) write_json(json_out, j);
  std::printf("PSNR %s dB  SSIM %.6f\n", format_psnr(report.psnr_db).c_str(), report.ssim);
  for (const auto& [m, d] : report.concentration) std::printf("D(M=%zu) %.6f\n", m, d);
  RunManifest man;
  man.command = "eval";
  man.input = original + " " + reconstructed;
  man.input_crc32 = volume_crc32(a) ^ volume_crc32(b);
  std::printf("manifest %s\n", man.hash().c_str());
  return 0;
}

int cmd_analyze(const std::string& artifact, const std::string& original,
                const std::string& maps, const std::vector<std::size_t>& ms_arg) {
  const auto bytes = codec::read_file(artifact);
  const auto un = codec::unpack_artifact(bytes);
  const auto report = analysis::expert_report(un.params, un.config);
  json j;
  j["experts"] = report.experts;
  j["shares"] = report.shares;
  j["counts"] = report.counts;
  j["artifact_bytes"] = bytes.size();
  j["features"] = un.config.features;
  std::printf("experts %zu  F=%zu  %zu bytes\n", report.experts, un.config.features, bytes.size());
  for (std::size_t e = 0; e < report.experts; ++e) {
    std::printf("  expert %zu: %.4f of voxels\n", e, report.shares[e]);
  }
  if (!maps.empty()) {
    const auto files = analysis::write_assignment_maps(report, maps);
    std::printf("wrote %zu assignment maps to %s\n", files.size(), maps.c_str());
  }
  if (!original.empty()) {
    const Volume v = load_raw(original);
    const auto spectrum = analysis::fft3(v.original_values(), v.dims);
    for (std::size_t m : resolve_ms(ms_arg, v)) {
      const double d = analysis::spectrum_concentration(spectrum, m);
      j["D"][std::to_string(m)] = d;
      std::printf("D(M=%zu) %.6f\n", m, d);
    }
  }
  RunManifest man;
  man.command = "analyze";
  man.model = un.config;
  man.input = artifact;
  man.input_crc32 = codec::crc32(bytes);
  j["manifest_hash"] = man.hash();
  write_json(artifact + ".analysis.json", j);
  std::printf("manifest %s\n", man.hash().c_str());
  return 0;
}

struct SweepArgs {
  InputArgs input;
  RunArgs run;
  std::vector<double> ratios;
  std::vector<std::size_t> experts;
  std::string out_dir;
};

int cmd_sweep(const SweepArgs& a) {
  if (a.ratios.empty() == a.experts.empty()) {
    throw UsageError("give exactly one of --ratios or --expert-counts");
  }
  const Volume volume = a.input.load();
  const CompressOptions base = a.run.resolve();
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  const fs::path state_path = dir / "cells.jsonl";

  // completed cells from an earlier, possibly interrupted, invocation
  std::map<std::string, json> done;
  if (fs::exists(state_path)) {
    std::ifstream in(state_path);
    for (std::string line; std::getline(in, line);) {
      if (line.empty()) continue;
      try {
        const json j = json::parse(line);
        done[j.at("cell").get<std::string>()] = j;  // later lines win
      } catch (const json::exception&) {
        // a torn last line from an interrupted write is ignored
      }
    }
  }

  std::vector<std::pair<std::string, CompressOptions>> cells;
  for (double r : a.ratios) {
    CompressOptions o = base;
    o.ratio = r;
    std::ostringstream name;
    name << "ratio_" << r;
    cells.emplace_back(name.str(), o);
  }
  for (std::size_t n : a.experts) {
    CompressOptions o = base;
    o.model.n_experts = n;
    o.model.top_k = std::min(o.model.top_k, n);
    cells.emplace_back("experts_" + std::to_string(n), o);
  }

  std::ofstream state(state_path, std::ios::app);
  const auto ms = std::vector<std::size_t>{analysis::default_concentration_m(volume.voxel_count())};
  std::size_t failures = 0;
  std::vector<json> rows;
  for (auto& [name, o] : cells) {
    if (done.contains(name) && done[name].value("status", "") == "ok") {
      std::printf("%s: already done\n", name.c_str());
      rows.push_back(done[name]);
      continue;
    }
    json row{{"cell", name}, {"ratio", o.ratio}, {"experts", o.model.n_experts}};
    try {
      o.checkpoint = dir / (name + ".ckpt");
      o.resume = true;
      const auto c = compress(volume, o);
      const fs::path art = dir / (name + ".moec");
      codec::write_file(art, c.artifact.bytes);
      const auto d = decompress(c.artifact.bytes);
      const auto metrics = evaluate(volume, d.volume, ms);
      row["status"] = "ok";
      row["bytes"] = c.artifact.bytes.size();
      row["features"] = c.model.features;
      row["psnr_db"] = std::isinf(metrics.psnr_db) ? json(nullptr) : json(metrics.psnr_db);
      row["ssim"] = metrics.ssim;
      row["seconds"] = c.train_seconds + c.pack_seconds;
      row["decompress_seconds"] = d.seconds;
      row["final_L_d"] = c.log.empty() ? 0.0 : c.log.back().distortion;
      std::printf("%s: F=%zu %zu bytes PSNR %s SSIM %.4f\n", name.c_str(), c.model.features,
                  c.artifact.bytes.size(), format_psnr(metrics.psnr_db).c_str(), metrics.ssim);
      fs::remove(*o.checkpoint);
    } catch (const Error& e) {
      // a failing cell is recorded and the sweep moves on
      row["status"] = "failed";
      row["error"] = e.what();
      row["exit_code"] = exit_code(e.kind());
      ++failures;
      std::printf("%s: FAILED (%s)\n", name.c_str(), e.what());
    }
    state << row.dump() << '\n' << std::flush;
    rows.push_back(row);
  }

  std::ofstream csv(dir / "sweep.csv");
  csv << "cell,ratio,experts,status,bytes,psnr_db,ssim,seconds\n";
  std::vector<analysis::RateDistortionRow> rd;
  for (const auto& r : rows) {
    const bool ok = r.value("status", "") == "ok";
    csv << r["cell"].get<std::string>() << ',' << r["ratio"].get<double>() << ','
        << r["experts"].get<std::size_t>() << ',' << r.value("status", "") << ','
        << (ok ? std::to_string(r["bytes"].get<std::size_t>()) : "") << ','
        << (ok ? (r["psnr_db"].is_null() ? "inf" : std::to_string(r["psnr_db"].get<double>())) : "")
        << ',' << (ok ? std::to_string(r["ssim"].get<double>()) : "") << ','
        << (ok ? std::to_string(r["seconds"].get<double>()) : "") << '\n';
    if (ok) {
      rd.push_back({r["ratio"].get<double>(), r["bytes"].get<std::size_t>(),
                    r["psnr_db"].is_null() ? analysis::kInfinitePsnr : r["psnr_db"].get<double>(),
                    r["ssim"].get<double>(), r["seconds"].get<double>()});
    }
  }
  if (!a.ratios.empty()) {
    std::ofstream rcsv(dir / "rate_distortion.csv");
    analysis::write_rate_distortion_csv(rd, rcsv);
    std::ofstream md(dir / "rate_distortion.md");
    analysis::write_rate_distortion_markdown(rd, md);
  }
  RunManifest man;
  man.command = "sweep";
  man.model = base.model;
  man.train = base.train;
  man.mode = base.mode;
  man.input = a.input.describe();
  man.input_crc32 = volume_crc32(volume);
  man.extra["cells"] = rows.size();
  man.extra["failures"] = failures;
  write_json(dir / "manifest.json", man.to_json());
  std::printf("%zu cells, %zu failed; manifest %s\n", rows.size(), failures, man.hash().c_str());
  return 0;
}

int cmd_selftest(bool inject) {
  const auto start = std::chrono::steady_clock::now();
  const auto results = checks::selftest({0, inject});
  std::size_t failed = 0;
  for (const auto& r : results) {
    std::printf("%s  %-32s %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    failed += r.passed ? 0 : 1;
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("%zu/%zu checks passed in %.1f s\n", results.size() - failed, results.size(), s);
  return failed == 0 ? 0 : 1;
}

int cmd_synth(const std::string& kind, const std::string& dims, std::uint64_t seed, int bits,
              const std::string& out) {
  SyntheticSpec spec;
  const auto colon = kind.find(':');
  spec.kind = parse_synthetic_kind(kind.substr(0, colon));
  if (colon != std::string::npos) spec.modes = std::stoull(kind.substr(colon + 1));
  spec.voxel_bits = bits;
  const Volume v = make_synthetic(spec, parse_dims(dims), seed);
  save_raw(v, out);
  std::printf("wrote %s (%s, %d-bit)\n", out.c_str(), dims_text(v.dims).c_str(), v.voxel_bits);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"moec: mixture-of-experts neural compression for 3D volumes"};
  app.require_subcommand(1);

  CompressArgs compress_args;
  auto* c = app.add_subcommand("compress", "fit a network to a volume and write an artifact");
  compress_args.input.add(c);
  compress_args.run.add(c);
  c->add_option("--out", compress_args.out, "artifact path")->required();
  c->add_option("--checkpoint", compress_args.checkpoint, "checkpoint file");
  c->add_option("--checkpoint-every", compress_args.checkpoint_every, "steps between checkpoints");
  c->add_flag("--resume", compress_args.resume, "continue from --checkpoint if it exists");
  c->add_flag("--quiet", compress_args.quiet, "no progress lines");

  std::string artifact, out, endian = "little";
  std::size_t chunk = 65536;
  auto* d = app.add_subcommand("decompress", "reconstruct a raw volume from an artifact");
  d->add_option("--artifact", artifact)->required();
  d->add_option("--out", out, "raw output path; a .json sidecar is written next to it")->required();
  d->add_option("--chunk", chunk, "voxels per evaluation chunk");
  d->add_option("--endian", endian)->check(CLI::IsMember({"little", "big"}));

  std::string original, reconstructed, json_out;
  std::vector<std::size_t> ms;
  auto* e = app.add_subcommand("eval", "PSNR, SSIM and spectrum concentration");
  e->add_option("--original", original)->required();
  e->add_option("--reconstructed", reconstructed)->required();
  e->add_option("--M", ms, "top-M counts for D(x); default 1% of voxels")->delimiter(',');
  e->add_option("--json", json_out, "write the report here");

  std::string maps;
  auto* an = app.add_subcommand("analyze", "expert utilization and assignment maps");
  an->add_option("--artifact", artifact)->required();
  an->add_option("--original", original, "raw volume for D(x)");
  an->add_option("--maps", maps, "directory for per-slice PGM assignment maps");
  an->add_option("--M", ms)->delimiter(',');

  SweepArgs sweep_args;
  auto* s = app.add_subcommand("sweep", "rate-distortion or expert-count sweep (resumable)");
  sweep_args.input.add(s);
  sweep_args.run.add(s);
  s->add_option("--ratios", sweep_args.ratios, "comma-separated ratios")->delimiter(',');
  s->add_option("--expert-counts", sweep_args.experts, "comma-separated expert counts")->delimiter(',');
  s->add_option("--out-dir", sweep_args.out_dir)->required();

  bool inject = false;
  auto* st = app.add_subcommand("selftest", "gradient, dispatch and codec checks");
  st->add_flag("--inject-fault", inject, "perturb every analytic gradient");

  std::string kind, dims;
  std::uint64_t seed = 0;
  int bits = 0;
  auto* sy = app.add_subcommand("synth", "write a synthetic test volume");
  sy->add_option("--kind", kind, "two_material_sphere, smooth_gradient, band_limited[:M]")->required();
  sy->add_option("--dims", dims)->required();
  sy->add_option("--seed", seed);
  sy->add_option("--bits", bits);
  sy->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : exit_code(ErrorKind::usage);
  }

  try {
    if (*c) return cmd_compress(compress_args);
    if (*d) return cmd_decompress(artifact, out, chunk, endian);
    if (*e) return cmd_eval(original, reconstructed, ms, json_out);
    if (*an) return cmd_analyze(artifact, original, maps, ms);
    if (*s) return cmd_sweep(sweep_args);
    if (*st) return cmd_selftest(inject);
    if (*sy) return cmd_synth(kind, dims, seed, bits, out);
  } catch (const Error& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return exit_code(err.kind());
  } catch (const json::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return exit_code(ErrorKind::usage);
  } catch (const std::invalid_argument& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return exit_code(ErrorKind::usage);
  } catch (const fs::filesystem_error& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return exit_code(ErrorKind::data);
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  }
  return 0;
}

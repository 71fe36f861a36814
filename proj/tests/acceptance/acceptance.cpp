// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion.
//
//   moec_acceptance [--criterion N]... [--cache DIR]
//
// Trained models are cached in DIR (raw artifacts plus a timing file), so
// criteria that share a model train it once.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "moec/analysis.hpp"
#include "moec/checks.hpp"
#include "moec/codec/artifact.hpp"
#include "moec/codec/huffman.hpp"
#include "moec/codec/quantize.hpp"
#include "moec/model.hpp"
#include "moec/pipeline.hpp"
#include "moec/router.hpp"
#include "moec/trainer.hpp"
#include "unit/helpers.hpp"
#include "unit/model_oracle.hpp"

namespace fs = std::filesystem;
using namespace moec;
using nn::Matrix;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradTolerance = 1e-5;
constexpr double kGradSeconds = 30.0;
constexpr std::size_t kBalanceBatches = 10000;
constexpr double kBalanceSlack = 1e-9;
constexpr double kExactTolerance = 1e-12;
constexpr std::size_t kEquivalenceModels = 100;
constexpr std::size_t kFuzzCases = 100000;
constexpr double kDeskPsnr = 35.0;
constexpr double kDeskSsim = 0.95;
constexpr double kDeskSeconds = 30.0 * 60.0;
constexpr double kQuantSizeRatio = 0.30;
constexpr double kQuantDrop = 2.0;
constexpr double kQuantDropAt256 = 0.5;
constexpr double kHuffmanLowEntropy = 0.85;
constexpr std::size_t kHuffmanPayload = 100 * 1024;
constexpr std::size_t kFallbackSlack = 2;
constexpr double kExpertSpread = 2.0;
constexpr std::size_t kResumeSteps = 500;
constexpr double kFftTolerance = 1e-8;
constexpr double kSpectrumD = 0.9;
constexpr double kSpearman = 0.5;

// Ratio sweep, expert sweep and spectrum fixtures share one reduced budget.
constexpr std::size_t kSweepSteps = 5000;
constexpr std::size_t kSweepBatch = 4096;
constexpr std::size_t kFixtureSide = 32;
constexpr double kFixtureRatio = 16.0;
constexpr std::size_t kFixtureSteps = 4000;
constexpr std::size_t kFixtureBatch = 2048;

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Trained {
  ModelConfig config;
  ModelParams params;
  std::vector<std::uint8_t> raw_artifact;
  double train_seconds = 0.0;
  std::string key;
};

class Cache {
 public:
  explicit Cache(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  /// Trains on first use, then reloads the stored raw artifact.
  Trained get(const std::string& key, const Volume& volume, const ModelConfig& skeleton,
              const TrainConfig& train, double ratio) {
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    const fs::path art = dir_ / (key + ".moec");
    const fs::path info = dir_ / (key + ".json");
    Trained t;
    t.key = key;
    if (fs::exists(art) && fs::exists(info)) {
      t.raw_artifact = codec::read_file(art);
      std::ifstream in(info);
      t.train_seconds = nlohmann::json::parse(in).at("train_seconds").get<double>();
    } else {
      std::fprintf(stderr, "  training %s ...\n", key.c_str());
      CompressOptions o;
      o.model = skeleton;
      o.train = train;
      o.ratio = ratio;
      o.mode = codec::CodecMode::raw;
      const auto r = compress(volume, o);
      t.raw_artifact = r.artifact.bytes;
      t.train_seconds = r.train_seconds;
      codec::write_file(art, t.raw_artifact);
      std::ofstream(info) << nlohmann::json{{"train_seconds", t.train_seconds},
                                            {"final_L_d", r.log.back().distortion}}
                                 .dump()
                          << '\n';
      std::fprintf(stderr, "  trained %s in %.0f s\n", key.c_str(), t.train_seconds);
    }
    const auto un = codec::unpack_artifact(t.raw_artifact);
    t.config = un.config;
    t.params = un.params;
    memo_[key] = t;
    return t;
  }

  std::vector<Trained> all() const {
    std::vector<Trained> out;
    for (const auto& [k, t] : memo_) out.push_back(t);
    return out;
  }

 private:
  fs::path dir_;
  std::map<std::string, Trained> memo_;
};

struct Suite {
  Cache cache;
  Volume sphere64 = make_synthetic({SyntheticKind::two_material_sphere}, Dims{64, 64, 64}, 0);

  Trained desk_main() {
    return cache.get("sphere64_r64_n2_main", sphere64, ModelConfig{}, TrainConfig::desk(), 64.0);
  }

  Trained desk_sweep(double ratio, std::size_t experts) {
    ModelConfig m;
    m.n_experts = experts;
    TrainConfig t;
    t.steps = kSweepSteps;
    t.batch_size = kSweepBatch;
    std::ostringstream key;
    key << "sphere64_r" << ratio << "_n" << experts << "_sweep";
    return cache.get(key.str(), sphere64, m, t, ratio);
  }
};

double psnr_of(const Volume& reference, const ModelParams& params, const ModelConfig& config) {
  return analysis::psnr(reference, reconstruct_grid(params, config));
}

// 1 ------------------------------------------------------------------------

Outcome gradients(Suite&) {
  const auto start = std::chrono::steady_clock::now();
  const auto results = checks::gradient_checks(0, kGradTolerance);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  double worst = 0.0;
  std::string failed;
  for (const auto& r : results) {
    worst = std::max(worst, r.value);
    if (!r.passed) failed += " " + r.name;
  }
  const bool ok = failed.empty() && seconds < kGradSeconds;
  return {ok, std::to_string(results.size()) + " checks, worst rel err " + fmt("%.2e", worst) +
                  ", " + fmt("%.1f s", seconds) + (failed.empty() ? "" : "; failed:" + failed)};
}

// 2 ------------------------------------------------------------------------

routing::DispatchPlan plan_for(std::span<const std::uint32_t> ids, std::size_t n) {
  routing::Selection s;
  s.points = ids.size();
  s.k = 1;
  s.experts.assign(ids.begin(), ids.end());
  s.gates.assign(ids.size(), 1.0);
  return routing::build_dispatch(s, n, routing::kUnlimitedCapacity);
}

Outcome balance_bound(Suite&) {
  Rng rng(2);
  const std::size_t choices[] = {2, 4, 8};
  double lowest = 1e300;
  std::size_t violations = 0;
  for (std::size_t trial = 0; trial < kBalanceBatches; ++trial) {
    const std::size_t n = choices[rng.index(3)];
    const std::size_t B = 4 + rng.index(1021);
    const double spread = rng.uniform(0.01, 6.0);
    Matrix logits(B, n);
    for (double& v : logits.values()) v = spread * rng.normal();
    const Matrix probs = nn::softmax_forward(logits);
    const auto plan =
        routing::build_dispatch(routing::top_k_select(probs, 1), n, routing::kUnlimitedCapacity);
    const double lb = routing::balancing_loss(plan, probs).value;
    lowest = std::min(lowest, lb);
    if (lb < 1.0 - kBalanceSlack) ++violations;
  }

  double uniform_err = 0.0;
  double collapse_err = 0.0;
  for (std::size_t n : choices) {
    for (std::size_t B : {n * 1, n * 7, n * 128}) {
      std::vector<std::uint32_t> ids(B);
      for (std::size_t x = 0; x < B; ++x) ids[x] = static_cast<std::uint32_t>(x % n);
      Matrix uniform(B, n);
      for (double& v : uniform.values()) v = 1.0 / static_cast<double>(n);
      uniform_err = std::max(uniform_err,
                             std::fabs(routing::balancing_loss(plan_for(ids, n), uniform).value - 1.0));

      std::fill(ids.begin(), ids.end(), 0u);
      Matrix onehot(B, n);
      for (std::size_t x = 0; x < B; ++x) onehot(x, 0) = 1.0;
      collapse_err = std::max(
          collapse_err, std::fabs(routing::balancing_loss(plan_for(ids, n), onehot).value -
                                  static_cast<double>(n)));
    }
  }
  const bool ok = violations == 0 && uniform_err <= kExactTolerance && collapse_err <= kExactTolerance;
  return {ok, std::to_string(kBalanceBatches) + " random batches, min L_b " + fmt("%.6f", lowest) +
                  ", " + std::to_string(violations) + " below 1-1e-9; uniform err " +
                  fmt("%.1e", uniform_err) + ", collapse err " + fmt("%.1e", collapse_err)};
}

// 3 and 4 ----------------------------------------------------------------

ModelConfig random_config(Rng& rng, std::size_t n) {
  ModelConfig c;
  c.n_experts = n;
  c.top_k = n;
  c.features = 2 + rng.index(6);
  c.expert_depth = 1 + rng.index(3);
  c.encoder_depth = 1 + rng.index(2);
  c.decoder_depth = 1 + rng.index(2);
  c.omega = rng.uniform(1.0, 4.0);
  c.capacity_factor = routing::kUnlimitedCapacity;
  c.dims = Dims{5, 4, 3};
  return c;
}

Outcome dense_equivalence(Suite&) {
  Rng rng(3);
  double worst = 0.0;
  for (std::size_t m = 0; m < kEquivalenceModels; ++m) {
    const ModelConfig c = random_config(rng, 2 + rng.index(4));
    const ModelParams p = test::oracle::random_params(c, 1000 + m);
    const Matrix x = test::random_matrix(rng, 32, 3);
    const auto pred = forward(x, p, c, true).pred;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const double dense = test::oracle::dense_oracle(p, c, {x(r, 0), x(r, 1), x(r, 2)});
      worst = std::max(worst, std::fabs(pred[r] - dense));
    }
  }
  return {worst <= kExactTolerance, std::to_string(kEquivalenceModels) +
                                        " random models (n=2..5, k=n), max |diff| " +
                                        fmt("%.2e", worst)};
}

Outcome single_expert(Suite&) {
  using namespace test::oracle;
  Rng rng(4);
  double worst = 0.0;
  for (std::size_t m = 0; m < kEquivalenceModels; ++m) {
    ModelConfig c = random_config(rng, 1);
    c.capacity_factor = 1.0;
    const ModelParams p = random_params(c, 2000 + m);
    const Matrix x = test::random_matrix(rng, 32, 3);
    for (bool training : {false, true}) {
      const auto pred = forward(x, p, c, training).pred;
      for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto feat = stack(p.encoder, {x(r, 0), x(r, 1), x(r, 2)}, c.omega, false);
        const double plain =
            stack(p.decoder, stack(p.experts[0], feat, c.omega, true), c.omega, true)[0];
        worst = std::max(worst, std::fabs(pred[r] - plain));
      }
    }
  }
  return {worst <= kExactTolerance, std::to_string(kEquivalenceModels) +
                                        " random n=1 models, max |diff| " + fmt("%.2e", worst)};
}

// 5 ------------------------------------------------------------------------

Outcome dispatch(Suite&) {
  const auto r = checks::dispatch_fuzz(kFuzzCases, 5);
  return {r.passed, r.detail};
}

// 6 ------------------------------------------------------------------------

Outcome desk_fidelity(Suite& s) {
  const Trained main = s.desk_main();
  const Volume recon = reconstruct_grid(main.params, main.config);
  const double psnr = analysis::psnr(s.sphere64, recon);
  const double ssim = analysis::ssim3d(s.sphere64, recon);

  std::vector<double> sweep;
  std::string trend;
  for (double ratio : {16.0, 64.0, 256.0}) {
    const Trained t = s.desk_sweep(ratio, 2);
    sweep.push_back(psnr_of(s.sphere64, t.params, t.config));
    trend += (trend.empty() ? "" : " / ") + fmt("%.2f", sweep.back());
  }
  const bool nonincreasing = sweep[0] >= sweep[1] && sweep[1] >= sweep[2];
  const bool ok = psnr >= kDeskPsnr && ssim >= kDeskSsim && main.train_seconds <= kDeskSeconds &&
                  nonincreasing;
  return {ok, "F=" + std::to_string(main.config.features) + " PSNR " + fmt("%.2f dB", psnr) +
                  ", SSIM " + fmt("%.4f", ssim) + ", train " + fmt("%.0f s", main.train_seconds) +
                  "; sweep 16/64/256 PSNR " + trend + (nonincreasing ? " (nonincreasing)" : " (NOT nonincreasing)")};
}

// 7 ------------------------------------------------------------------------

Outcome quantization(Suite& s) {
  // int8 artifact size does not depend on the weight values, so the size
  // clause is measured on the 256³ u16, ratio-256 geometry directly.
  ModelConfig full;
  full.dims = Dims{256, 256, 256};
  full.voxel_bits = 16;
  full.features = solve_width(budget_params(full.dims, 16, 256.0), full);
  Rng rng(7);
  const ModelParams pp = init_params(full, rng);
  const double full_ratio =
      static_cast<double>(codec::pack_artifact(pp, full, codec::CodecMode::quant).bytes.size()) /
      static_cast<double>(codec::pack_artifact(pp, full, codec::CodecMode::raw).bytes.size());

  bool drops_ok = true;
  std::string detail = "size quant/raw at F=" + std::to_string(full.features) + ": " +
                       fmt("%.3f", full_ratio) + "; desk:";
  for (double ratio : {16.0, 64.0, 256.0}) {
    const Trained t = s.desk_sweep(ratio, 2);
    const double raw_psnr = psnr_of(s.sphere64, t.params, t.config);
    const double q_psnr =
        psnr_of(s.sphere64, codec::as_stored(t.params, codec::CodecMode::quant), t.config);
    const double drop = raw_psnr - q_psnr;
    const double limit = ratio >= 256.0 ? kQuantDropAt256 : kQuantDrop;
    drops_ok = drops_ok && drop <= limit;
    const double size =
        static_cast<double>(codec::pack_artifact(t.params, t.config, codec::CodecMode::quant).bytes.size()) /
        static_cast<double>(t.raw_artifact.size());
    detail += " r" + fmt("%.0f", ratio) + " drop " + fmt("%.3f dB", drop) + " size " + fmt("%.3f", size);
  }
  return {full_ratio <= kQuantSizeRatio && drops_ok, detail};
}

// 8 ------------------------------------------------------------------------

Outcome huffman(Suite& s) {
  std::size_t artifacts = 0;
  bool lossless = true;
  auto round_trip = [&](const ModelParams& p, const ModelConfig& c) {
    const auto packed = codec::pack_artifact(p, c, codec::CodecMode::quant_huffman);
    const auto un = codec::unpack_artifact(packed.bytes);
    lossless = lossless && un.params == codec::as_stored(p, codec::CodecMode::quant);
    ++artifacts;
  };
  s.desk_main();
  for (double ratio : {16.0, 64.0, 256.0}) s.desk_sweep(ratio, 2);
  for (const auto& t : s.cache.all()) round_trip(t.params, t.config);

  // trained network weights are heavy-tailed; a Laplace sample stands in for them
  Rng rng(8);
  std::vector<float> w(kHuffmanPayload);
  for (float& v : w) {
    const double u = rng.unit() - 0.5;
    v = static_cast<float>((u < 0 ? 1.0 : -1.0) * std::log1p(-2.0 * std::fabs(u)));
  }
  const auto q = codec::quantize_tensor(w);
  std::vector<std::uint8_t> payload(q.q.size());
  std::transform(q.q.begin(), q.q.end(), payload.begin(),
                 [](std::int8_t v) { return static_cast<std::uint8_t>(v); });
  const auto enc = codec::huffman_encode(payload);
  const double low = static_cast<double>(enc.stored_size()) / static_cast<double>(payload.size());
  const bool decoded = codec::huffman_decode(enc.lengths, enc.bits, payload.size()) == payload;
  double entropy = 0.0;
  for (std::size_t c : codec::count_bytes(payload)) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(payload.size());
    entropy -= p * std::log2(p);
  }

  // uniformly spread weights quantize to an incompressible byte stream
  ModelConfig c;
  c.dims = Dims{256, 256, 256};
  c.voxel_bits = 16;
  c.features = 44;
  ModelParams flat = init_params(c, rng);
  for (auto* l : flat.layers()) {
    for (double& v : l->weight.values()) v = rng.uniform(-1.0, 1.0);
  }
  round_trip(flat, c);
  const auto plain = codec::pack_artifact(flat, c, codec::CodecMode::quant);
  const auto coded = codec::pack_artifact(flat, c, codec::CodecMode::quant_huffman);
  const bool fallback = coded.report.huffman_fallbacks > 0 &&
                        coded.bytes.size() <= plain.bytes.size() + kFallbackSlack;

  const bool ok = lossless && decoded && low < kHuffmanLowEntropy && fallback;
  return {ok, std::to_string(artifacts) + " artifacts lossless=" + (lossless ? "yes" : "no") +
                  "; low-entropy " + std::to_string(payload.size()) + " B (" +
                  fmt("%.2f bits/symbol", entropy) + ") -> " + fmt("%.2f%%", 100.0 * low) + "; incompressible: " +
                  std::to_string(coded.report.huffman_fallbacks) + " fallbacks, " +
                  std::to_string(coded.bytes.size()) + " vs " + std::to_string(plain.bytes.size()) +
                  " B"};
}

// 9 ------------------------------------------------------------------------

Outcome expert_count(Suite& s) {
  std::vector<double> psnr;
  std::string detail;
  for (std::size_t n : {2, 3, 4}) {
    const Trained t = s.desk_sweep(64.0, n);
    psnr.push_back(psnr_of(s.sphere64, t.params, t.config));
    detail += "n=" + std::to_string(n) + " F=" + std::to_string(t.config.features) + " " +
              fmt("%.2f dB", psnr.back()) + "; ";
  }
  const double spread =
      *std::max_element(psnr.begin(), psnr.end()) - *std::min_element(psnr.begin(), psnr.end());
  return {spread <= kExpertSpread, detail + "spread " + fmt("%.2f dB", spread)};
}

// 10 -----------------------------------------------------------------------

Outcome round_trips(Suite& s) {
  s.desk_main();
  bool identical = true;
  std::size_t n = 0;
  for (const auto& t : s.cache.all()) {
    const auto un = codec::unpack_artifact(t.raw_artifact);
    identical = identical &&
                codec::pack_artifact(un.params, un.config, un.mode, un.meta).bytes == t.raw_artifact;
    ++n;
  }

  const Volume v = make_synthetic({SyntheticKind::two_material_sphere}, Dims{32, 32, 32}, 0);
  TrainConfig train;
  train.steps = kResumeSteps;
  train.batch_size = 1024;
  train.seed = 10;
  const ModelConfig model = resolve_model_config(v, ModelConfig{}, 16.0);
  Trainer straight(v, model, train);
  straight.run();

  const fs::path ckpt = fs::temp_directory_path() / "moec_acceptance_resume.ckpt";
  {
    Trainer first(v, model, train);
    for (std::size_t i = 0; i < kResumeSteps / 2 - 13; ++i) first.step();
    first.save_checkpoint(ckpt);
  }
  Trainer resumed = Trainer::resume(v, ckpt, train);
  resumed.run();
  fs::remove(ckpt);
  const bool same_params = resumed.params() == straight.params();
  const bool same_tail = resumed.log().back().distortion == straight.log().back().distortion;
  const bool same_bytes = codec::pack_artifact(resumed.params(), model, codec::CodecMode::raw).bytes ==
                          codec::pack_artifact(straight.params(), model, codec::CodecMode::raw).bytes;
  const bool ok = identical && same_params && same_tail && same_bytes;
  return {ok, std::to_string(n) + " raw artifacts unpack->pack identical=" +
                  (identical ? "yes" : "no") + "; resume at step " +
                  std::to_string(kResumeSteps / 2 - 13) + " of " + std::to_string(kResumeSteps) +
                  " bit-identical=" + (same_params && same_tail && same_bytes ? "yes" : "no")};
}

// 11 -----------------------------------------------------------------------

std::vector<std::complex<double>> naive_dft(std::span<const double> x, Dims d) {
  std::vector<std::complex<double>> out(d.total());
  const double tau = 2.0 * std::numbers::pi;
  for (std::size_t u = 0; u < d.h; ++u)
    for (std::size_t v = 0; v < d.w; ++v)
      for (std::size_t w = 0; w < d.d; ++w) {
        std::complex<double> acc = 0.0;
        for (std::size_t a = 0; a < d.h; ++a)
          for (std::size_t b = 0; b < d.w; ++b)
            for (std::size_t c = 0; c < d.d; ++c) {
              const double phase = -tau * (static_cast<double>(u * a) / d.h +
                                           static_cast<double>(v * b) / d.w +
                                           static_cast<double>(w * c) / d.d);
              acc += x[(a * d.w + b) * d.d + c] * std::polar(1.0, phase);
            }
        out[(u * d.w + v) * d.d + w] = acc;
      }
  return out;
}

Outcome spectrum(Suite& s) {
  Rng rng(11);
  const Dims d8{8, 8, 8};
  double fft_err = 0.0;
  for (int trial = 0; trial < 3; ++trial) {
    const auto x = test::random_vector(rng, d8.total());
    const auto fast = analysis::fft3(x, d8).values;
    const auto slow = naive_dft(x, d8);
    for (std::size_t i = 0; i < fast.size(); ++i) fft_err = std::max(fft_err, std::abs(fast[i] - slow[i]));
  }

  struct Fixture {
    std::string name;
    SyntheticSpec spec;
  };
  const std::vector<Fixture> fixtures{
      {"sphere", {SyntheticKind::two_material_sphere}},
      {"gradient", {SyntheticKind::smooth_gradient}},
      {"band1", {SyntheticKind::band_limited, 1}},
      {"band64", {SyntheticKind::band_limited, 64}},
  };
  const Dims dims{kFixtureSide, kFixtureSide, kFixtureSide};
  const std::size_t m = analysis::default_concentration_m(dims.total());
  bool monotone = true;
  double band1_d = 0.0;
  std::vector<double> ds, psnrs;
  std::string detail;
  for (const auto& f : fixtures) {
    const Volume v = make_synthetic(f.spec, dims, 0);
    const auto spec = analysis::fft3(v.original_values(), v.dims);
    double prev = 0.0;
    for (std::size_t k = 1; k <= spec.sorted_magnitudes.size(); k += 1 + k / 64) {
      const double dk = analysis::spectrum_concentration(spec, k);
      monotone = monotone && dk >= prev;
      prev = dk;
    }
    if (f.name == "band1") band1_d = analysis::spectrum_concentration(spec, 1);
    TrainConfig t;
    t.steps = kFixtureSteps;
    t.batch_size = kFixtureBatch;
    const Trained tr = s.cache.get("fixture32_" + f.name, v, ModelConfig{}, t, kFixtureRatio);
    ds.push_back(analysis::spectrum_concentration(spec, m));
    psnrs.push_back(psnr_of(v, tr.params, tr.config));
    detail += f.name + " D " + fmt("%.3f", ds.back()) + " PSNR " + fmt("%.1f", psnrs.back()) + "; ";
  }
  const double rho = analysis::spearman(ds, psnrs);
  const bool ok = fft_err <= kFftTolerance && monotone && band1_d > kSpectrumD && rho > kSpearman;
  return {ok, "fft err " + fmt("%.1e", fft_err) + ", D monotone=" + (monotone ? "yes" : "no") +
                  ", band D(M=1) " + fmt("%.3f", band1_d) + "; " + detail + "Spearman " +
                  fmt("%.2f", rho)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"moec acceptance suite"};
  std::vector<int> only;
  std::string cache_dir = "acceptance_cache";
  app.add_option("--criterion", only, "run only these criteria (1-11)")->check(CLI::Range(1, 11));
  app.add_option("--cache", cache_dir, "directory for trained models");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome(Suite&)>>> criteria{
      {"gradient correctness", gradients},
      {"balancing-loss bound", balance_bound},
      {"top-n dense equivalence", dense_equivalence},
      {"single-expert degeneracy", single_expert},
      {"dispatch invariants", dispatch},
      {"desk-scale fidelity", desk_fidelity},
      {"quantization", quantization},
      {"huffman", huffman},
      {"expert-count robustness", expert_count},
      {"codec round trips", round_trips},
      {"spectrum analysis", spectrum},
  };
  const std::set<int> selected(only.begin(), only.end());
  Suite suite{Cache(cache_dir)};
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.contains(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second(suite);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %2d %-26s %s  %s\n", id, criteria[i].first, o.passed ? "PASS" : "FAIL",
                o.detail.c_str());
    std::fflush(stdout);
    failed += o.passed ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}

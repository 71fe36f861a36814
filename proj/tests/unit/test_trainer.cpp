// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include "moec/codec/artifact.hpp"
#include "moec/error.hpp"
#include "moec/trainer.hpp"

using namespace moec;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("moec_trainer_" + name);
}

Volume sphere(std::size_t n) {
  return make_synthetic({SyntheticKind::two_material_sphere}, Dims{n, n, n}, 0);
}

ModelConfig small_model(const Volume& v, std::size_t features = 6) {
  ModelConfig m;
  m.features = features;
  m.dims = v.dims;
  m.voxel_bits = v.voxel_bits;
  m.norm_lo = v.lo;
  m.norm_hi = v.hi;
  return m;
}

TrainConfig short_run(std::size_t steps, std::size_t batch = 256) {
  TrainConfig t;
  t.steps = steps;
  t.batch_size = batch;
  t.seed = 5;
  return t;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("adam: zero gradient from zero moments leaves parameters alone") {
  std::vector<double> p{1.0, -2.0}, g{0.0, 0.0}, m{0.0, 0.0}, v{0.0, 0.0};
  adam_update(p, g, m, v, 1, 0.1, {});
  CHECK(p == std::vector<double>{1.0, -2.0});
  CHECK(m == std::vector<double>{0.0, 0.0});
}

TEST_CASE("adam: zero gradient decays the moments") {
  std::vector<double> p{1.0}, g{0.0}, m{0.5}, v{0.25};
  adam_update(p, g, m, v, 3, 0.1, {});
  CHECK(m[0] == doctest::Approx(0.45));
  CHECK(v[0] == doctest::Approx(0.24975));
}

TEST_CASE("adam: first step with unit gradient moves by the learning rate") {
  std::vector<double> p{0.0}, g{1.0}, m{0.0}, v{0.0};
  adam_update(p, g, m, v, 1, 0.1, {});
  // m̂ = 1, v̂ = 1
  CHECK(p[0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-14));
}

TEST_CASE("adam: quadratic bowl converges") {
  std::vector<double> w{1.0}, g(1), m{0.0}, v{0.0};
  for (std::size_t t = 1; t <= 500; ++t) {
    g[0] = 2.0 * w[0];
    adam_update(w, g, m, v, t, 0.02, {});
  }
  CHECK(std::fabs(w[0]) < 1e-3);
}

TEST_CASE("adam: non-finite gradient aborts before any update") {
  std::vector<double> p{1.0, 2.0}, g{0.5, std::nan("")}, m{0.0, 0.0}, v{0.0, 0.0};
  CHECK_THROWS_AS(adam_update(p, g, m, v, 1, 0.1, {}), NumericError);
  CHECK(p == std::vector<double>{1.0, 2.0});
  CHECK(m == std::vector<double>{0.0, 0.0});
}

TEST_CASE("lr schedule") {
  TrainConfig c;
  CHECK(lr_at(0, c) == 5e-4);
  CHECK(lr_at(c.steps, c) == doctest::Approx(5e-5).epsilon(1e-12));
  double prev = lr_at(0, c);
  for (std::size_t s = 1; s <= c.steps; s += 97) {
    const double lr = lr_at(s, c);
    REQUIRE(lr <= prev);
    prev = lr;
  }
  CHECK_THROWS_AS(lr_at(c.steps + 1, c), std::out_of_range);
}

TEST_CASE("train config defaults and validation") {
  TrainConfig c;
  CHECK(c.resolved_freeze_step() == 15000);
  CHECK(TrainConfig::full_scale().steps == 80000);
  CHECK(TrainConfig::full_scale().batch_size == 200000);
  c.freeze_step = c.steps + 1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  TrainConfig z;
  z.batch_size = 0;
  CHECK_THROWS_AS(z.validate(), std::invalid_argument);
}

TEST_CASE("resolve_model_config picks the budget width") {
  const auto v = make_synthetic({SyntheticKind::two_material_sphere}, Dims{64, 64, 64}, 0);
  const auto m = resolve_model_config(v, ModelConfig{}, 64.0);
  CHECK(m.features == 7);
  CHECK(count_params(m, 7) <= 1024);
  CHECK(count_params(m, 8) > 1024);
  CHECK(m.norm_lo == v.lo);
  CHECK(m.norm_hi == v.hi);
}

TEST_CASE("a constant volume is fitted quickly") {
  const Dims dims{8, 8, 8};
  const std::vector<double> values(dims.total(), 77.0);
  const auto v = make_volume(dims, 8, values);
  TrainConfig t = short_run(200);
  Trainer trainer(v, small_model(v), t);
  trainer.run();
  CHECK(trainer.log().back().distortion < 1e-4);
}

TEST_CASE("identical seeds give bit-identical parameters and logs") {
  const auto v = sphere(12);
  const auto a = train(v, small_model(v), short_run(30));
  const auto b = train(v, small_model(v), short_run(30));
  CHECK(a.params == b.params);
  std::ostringstream la, lb;
  write_log(a.log, la);
  write_log(b.log, lb);
  CHECK(la.str() == lb.str());
}

TEST_CASE("log records carry every field") {
  const auto v = sphere(8);
  Trainer t(v, small_model(v), short_run(3));
  const auto& r = t.step();
  CHECK(r.step == 0);
  CHECK(r.counts.size() == 2);
  CHECK(r.lr == 5e-4);
  const auto line = to_json_line(r);
  for (const char* key : {"\"step\"", "\"L_d\"", "\"L_b\"", "\"lr\"", "\"drop_fraction\"",
                          "\"counts\"", "\"routed\""}) {
    CHECK(line.find(key) != std::string::npos);
  }
}

TEST_CASE("router stops changing after the freeze step") {
  const auto v = sphere(12);
  TrainConfig t = short_run(40);
  t.freeze_step = 20;
  Trainer trainer(v, small_model(v), t);
  for (int i = 0; i < 21; ++i) trainer.step();
  CHECK(trainer.params().router.is_frozen());
  const auto router = trainer.params().router;
  const auto decoder = trainer.params().decoder;
  trainer.run();
  CHECK(trainer.params().router == router);
  CHECK_FALSE(trainer.params().decoder == decoder);
  CHECK(trainer.log()[19].router_frozen == false);
  CHECK(trainer.log()[20].router_frozen == true);
}

TEST_CASE("checkpoint then resume matches a straight run") {
  const auto v = sphere(12);
  const auto model = small_model(v);
  const auto path = temp_path("resume.ckpt");
  TrainConfig cfg = short_run(200);
  cfg.freeze_step = 150;

  Trainer straight(v, model, cfg);
  straight.run();

  Trainer first(v, model, cfg);
  for (int i = 0; i < 100; ++i) first.step();
  first.save_checkpoint(path);
  auto resumed = Trainer::resume(v, path, cfg);
  CHECK(resumed.state().step == 100);
  resumed.run();
  CHECK(resumed.params() == straight.params());
  CHECK(resumed.log().back().distortion == straight.log().back().distortion);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint errors") {
  const auto v = sphere(8);
  const auto path = temp_path("bad.ckpt");
  Trainer t(v, small_model(v), short_run(10));
  t.step();
  auto bytes = t.checkpoint_bytes();

  SUBCASE("different seed is rejected") {
    codec::write_file(path, bytes);
    TrainConfig other = short_run(10);
    other.seed = 6;
    CHECK_THROWS_AS(Trainer::resume(v, path, other), UsageError);
  }
  SUBCASE("flipped appendix byte fails the checksum") {
    bytes[bytes.size() - 10] ^= 0x01;
    codec::write_file(path, bytes);
    CHECK_THROWS_AS(Trainer::resume(v, path, short_run(10)), CorruptArtifactError);
  }
  SUBCASE("flipped artifact byte fails the checksum") {
    bytes[20] ^= 0x01;
    codec::write_file(path, bytes);
    CHECK_THROWS_AS(Trainer::resume(v, path, short_run(10)), CorruptArtifactError);
  }
  SUBCASE("a bare artifact is not a checkpoint") {
    const auto art = codec::pack_artifact(t.params(), t.model_config(), codec::CodecMode::raw);
    codec::write_file(path, art.bytes);
    CHECK_THROWS_AS(Trainer::resume(v, path, short_run(10)), CorruptArtifactError);
  }
  std::filesystem::remove(path);
}

TEST_CASE("divergence is caught") {
  const auto v = sphere(8);
  TrainConfig t = short_run(400);
  t.lr0 = 50.0;
  t.divergence_window = 5;
  t.divergence_factor = 1.0;
  Trainer trainer(v, small_model(v), t);
  CHECK_THROWS_AS(trainer.run(), NumericError);
}

TEST_CASE("balancing loss reduces the busiest expert's share") {
  // Kept counts sit at the capacity cap for both runs at lambda 0.01, and the
  // routed share moves by less than seed noise; a strong weight shows the effect.
  const auto v = sphere(16);
  auto run = [&](double lambda) {
    ModelConfig m = small_model(v, 6);
    m.lambda_balance = lambda;
    TrainConfig t = short_run(1500, 512);
    t.freeze_step = 1500;
    const auto res = train(v, m, t);
    double routed = 0.0;
    double kept = 0.0;
    for (std::size_t i = res.log.size() - 1000; i < res.log.size(); ++i) {
      const auto& r = res.log[i].routed;
      const auto& c = res.log[i].counts;
      routed += static_cast<double>(*std::max_element(r.begin(), r.end())) / 512.0;
      kept += static_cast<double>(*std::max_element(c.begin(), c.end())) / 512.0;
    }
    return std::pair{routed / 1000.0, kept / 1000.0};
  };
  const auto [routed0, kept0] = run(0.0);
  const auto [routed1, kept1] = run(100.0);
  MESSAGE("busiest routed share " << routed0 << " -> " << routed1 << ", kept " << kept0 << " -> "
                                  << kept1);
  CHECK(routed1 < routed0 - 0.1);
  CHECK(kept1 < kept0);
  CHECK(kept0 <= 320.0 / 512.0);
}

}  // TEST_SUITE

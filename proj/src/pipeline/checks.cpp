// SPDX-License-Identifier: Apache-2.0
#include "moec/checks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "moec/codec/artifact.hpp"
#include "moec/codec/huffman.hpp"
#include "moec/codec/quantize.hpp"
#include "moec/nn/grad_check.hpp"
#include "moec/nn/layers.hpp"
#include "moec/rng.hpp"
#include "moec/router.hpp"

namespace moec::checks {

using nn::Matrix;

namespace {

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(-scale, scale);
  return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> shifted(std::span<const double> g, double perturb) {
  std::vector<double> out(g.begin(), g.end());
  for (double& v : out) v += perturb;
  return out;
}

CheckResult grad_result(std::string name, const nn::GradCheckReport& r, double tolerance) {
  CheckResult c;
  c.name = std::move(name);
  c.value = r.max_relative_error;
  c.passed = r.max_relative_error < tolerance;
  std::ostringstream s;
  s << "max rel err " << r.max_relative_error << " at " << r.worst_index << " (analytic "
    << r.worst_analytic << ", numeric " << r.worst_numeric << ")";
  c.detail = s.str();
  return c;
}

/// Central differences at epsilon 1e-6 carry about 1e-10 of round-off, so
/// whole-model gradients below this magnitude are judged absolutely.
constexpr double kModelFloor = 1e-4;

CheckResult model_check(const std::string& name, ModelConfig config, bool frozen, Rng& rng,
                        double tolerance, double perturb) {
  config.dims = Dims{8, 8, 8};
  ModelParams p = init_params(config, rng, 0.0, 1.0);
  // Non-zero gate and router weights so that every path carries gradient.
  for (auto* l : {&p.router.pre1, &p.router.pre2, &p.router.gate}) {
    for (double& b : l->bias) b = rng.uniform(-0.2, 0.2);
  }
  if (frozen) p.router.freeze();
  const std::size_t B = 8;
  const Matrix x = random_matrix(rng, B, 3);
  std::vector<double> w(B);
  for (double& v : w) v = rng.uniform(-1, 1);
  const auto fr = forward(x, p, config, true);
  const auto grads = shifted(flatten(backward(fr, p, config, w)), perturb);
  const auto theta = p.flatten();

  auto objective = [&](std::span<const double> t) {
    ModelParams q = p;
    q.assign(t);
    const auto r = forward(x, q, config, true);
    return dot(r.pred, w) + config.lambda_balance * r.balance_loss;
  };
  if (!frozen) {
    return grad_result(name, nn::grad_check(objective, theta, grads, 1e-6, kModelFloor), tolerance);
  }

  // Router coordinates must be exactly zero; the rest are checked numerically.
  std::vector<std::size_t> where;
  std::vector<double> sub_theta;
  std::vector<double> sub_grad;
  bool router_zero = true;
  std::size_t at = 0;
  const auto layers = p.layers();
  for (std::size_t li = 0; li < layers.size(); ++li) {
    for (std::size_t i = at; i < at + layers[li]->param_count(); ++i) {
      if (p.is_router_layer(li)) {
        router_zero = router_zero && grads[i] == 0.0;
      } else {
        where.push_back(i);
        sub_theta.push_back(theta[i]);
        sub_grad.push_back(grads[i]);
      }
    }
    at += layers[li]->param_count();
  }
  auto partial = [&](std::span<const double> sub) {
    auto full = theta;
    for (std::size_t j = 0; j < where.size(); ++j) full[where[j]] = sub[j];
    return objective(full);
  };
  auto r = grad_result(name, nn::grad_check(partial, sub_theta, sub_grad, 1e-6, kModelFloor),
                       tolerance);
  if (!router_zero) {
    r.passed = false;
    r.detail += "; frozen router received gradient";
  }
  return r;
}

}  // namespace

std::vector<CheckResult> gradient_checks(std::uint64_t seed, double tolerance, double perturb) {
  Rng rng(seed);
  std::vector<CheckResult> out;
  const std::size_t B = 8;
  const std::size_t F = 6;

  {
    const Matrix x = random_matrix(rng, B, F);
    const Matrix wt = random_matrix(rng, F, F);
    const auto b = std::vector<double>(F, 0.1);
    const Matrix dy = random_matrix(rng, B, F);
    auto [y, tape] = nn::linear_forward(x, wt, b);
    const auto g = nn::linear_backward(tape, dy);
    auto fw = [&](std::span<const double> t) {
      return dot(nn::linear_forward(x, Matrix(F, F, {t.begin(), t.end()}), b).first.values(),
                 dy.values());
    };
    auto fx = [&](std::span<const double> t) {
      return dot(nn::linear_forward(Matrix(B, F, {t.begin(), t.end()}), wt, b).first.values(),
                 dy.values());
    };
    auto fb = [&](std::span<const double> t) {
      return dot(nn::linear_forward(x, wt, t).first.values(), dy.values());
    };
    out.push_back(grad_result("linear dW", nn::grad_check(fw, wt.values(), shifted(g.dweight.values(), perturb)), tolerance));
    out.push_back(grad_result("linear dx", nn::grad_check(fx, x.values(), shifted(g.dx.values(), perturb)), tolerance));
    out.push_back(grad_result("linear db", nn::grad_check(fb, b, shifted(g.dbias, perturb)), tolerance));
  }
  {
    const Matrix x = random_matrix(rng, B, F, 0.1);
    const Matrix dy = random_matrix(rng, B, F);
    auto [y, tape] = nn::sine_forward(x, 30.0);
    const Matrix dx = nn::sine_backward(tape, dy);
    auto f = [&](std::span<const double> t) {
      return dot(nn::sine_forward(Matrix(B, F, {t.begin(), t.end()}), 30.0).first.values(),
                 dy.values());
    };
    out.push_back(grad_result("sine", nn::grad_check(f, x.values(), shifted(dx.values(), perturb)), tolerance));
  }
  {
    Matrix x = random_matrix(rng, B, F);
    // keep inputs away from the kink
    for (double& v : x.values()) v += v >= 0 ? 0.05 : -0.05;
    const Matrix dy = random_matrix(rng, B, F);
    auto [y, tape] = nn::relu_forward(x);
    const Matrix dx = nn::relu_backward(tape, dy);
    auto f = [&](std::span<const double> t) {
      return dot(nn::relu_forward(Matrix(B, F, {t.begin(), t.end()})).first.values(), dy.values());
    };
    out.push_back(grad_result("relu", nn::grad_check(f, x.values(), shifted(dx.values(), perturb)), tolerance));
  }
  {
    const Matrix x = random_matrix(rng, B, 4, 2.0);
    const Matrix dy = random_matrix(rng, B, 4);
    const Matrix p = nn::softmax_forward(x);
    const Matrix dx = nn::softmax_backward(p, dy);
    auto f = [&](std::span<const double> t) {
      return dot(nn::softmax_forward(Matrix(B, 4, {t.begin(), t.end()})).values(), dy.values());
    };
    out.push_back(grad_result("softmax", nn::grad_check(f, x.values(), shifted(dx.values(), perturb)), tolerance));
  }
  {
    std::vector<double> pred(B), target(B);
    for (std::size_t i = 0; i < B; ++i) {
      pred[i] = rng.uniform(-1, 1);
      target[i] = rng.uniform(-1, 1);
    }
    const auto m = nn::mse_loss(pred, target);
    auto f = [&](std::span<const double> t) { return nn::mse_loss(t, target).loss; };
    out.push_back(grad_result("mse", nn::grad_check(f, pred, shifted(m.dpred, perturb)), tolerance));
  }
  {
    routing::RouterParams rp(F, 3);
    for (auto* l : {&rp.pre1, &rp.pre2, &rp.gate}) {
      l->weight = random_matrix(rng, l->in(), l->out(), 0.8);
      for (double& b : l->bias) b = rng.uniform(-0.3, 0.3);
    }
    const Matrix x = random_matrix(rng, B, F);
    const Matrix w = random_matrix(rng, B, 3);
    auto [probs, tape] = routing::gate_forward(x, rp);
    const auto back = routing::gate_backward(tape, w);
    auto f = [&](std::span<const double> t) {
      return dot(routing::gate_forward(Matrix(B, F, {t.begin(), t.end()}), rp).first.values(),
                 w.values());
    };
    out.push_back(grad_result("router", nn::grad_check(f, x.values(), shifted(back.dfeatures.values(), perturb)), tolerance));
  }
  {
    const Matrix probs = nn::softmax_forward(random_matrix(rng, B, 3, 3.0));
    const auto plan = routing::build_dispatch(routing::top_k_select(probs, 2), 3, 0.8);
    std::vector<Matrix> outs;
    for (std::size_t e = 0; e < 3; ++e) outs.push_back(random_matrix(rng, plan.counts[e], F));
    const Matrix w = random_matrix(rng, B, F);
    const auto back = routing::combine_backward(outs, plan, w);
    auto f = [&](std::span<const double> g) {
      routing::DispatchPlan q = plan;
      q.choice_gate.assign(g.begin(), g.end());
      return dot(routing::combine(outs, q, F).values(), w.values());
    };
    out.push_back(grad_result("combine gates", nn::grad_check(f, plan.choice_gate, shifted(back.dgates, perturb)), tolerance));
  }

  ModelConfig c;
  c.features = 8;
  out.push_back(model_check("model n=2 top-1", c, false, rng, tolerance, perturb));
  c.n_experts = 3;
  c.top_k = 2;
  c.lambda_balance = 0.5;
  c.capacity_factor = 0.9;
  out.push_back(model_check("model n=3 top-2", c, false, rng, tolerance, perturb));
  out.push_back(model_check("model n=3 top-2 frozen router", c, true, rng, tolerance, perturb));
  ModelConfig one;
  one.n_experts = 1;
  one.features = 16;
  one.expert_depth = 2;
  out.push_back(model_check("model n=1 F=16", one, false, rng, tolerance, perturb));
  return out;
}

CheckResult dispatch_fuzz(std::size_t cases, std::uint64_t seed) {
  Rng rng(seed);
  CheckResult r;
  r.name = "dispatch invariants";
  std::size_t violations = 0;
  std::string first;
  for (std::size_t trial = 0; trial < cases; ++trial) {
    const std::size_t n = 1 + rng.index(8);
    const std::size_t B = 1 + rng.index(96);
    const std::size_t k = 1 + rng.index(n);
    const double cf = rng.index(10) == 0 ? routing::kUnlimitedCapacity : rng.uniform(0.05, 4.0);
    Matrix logits(B, n);
    for (double& v : logits.values()) v = rng.uniform(-3, 3);
    const auto sel = routing::top_k_select(nn::softmax_forward(logits), k);
    const auto plan = routing::build_dispatch(sel, n, cf);
    const std::size_t cap =
        std::isinf(cf) ? B
                       : std::min<std::size_t>(B, static_cast<std::size_t>(std::ceil(
                                                      cf * static_cast<double>(B) / static_cast<double>(n))));
    bool ok = plan.capacity == cap && plan.kept_total() + plan.dropped() == k * B;
    std::size_t sum = 0;
    for (std::size_t e = 0; e < n; ++e) {
      ok = ok && plan.counts[e] <= cap;
      sum += plan.counts[e];
    }
    ok = ok && sum == plan.kept_total();
    const auto again = routing::build_dispatch(sel, n, cf);
    ok = ok && again.kept == plan.kept && again.slots == plan.slots && again.counts == plan.counts;
    if (!ok) {
      if (violations == 0) {
        std::ostringstream s;
        s << "first violation: n=" << n << " B=" << B << " k=" << k << " C_f=" << cf;
        first = s.str();
      }
      ++violations;
    }
  }
  r.value = static_cast<double>(violations);
  r.passed = violations == 0;
  r.detail = std::to_string(cases) + " cases, " + std::to_string(violations) + " violations" +
             (first.empty() ? "" : "; " + first);
  return r;
}

std::vector<CheckResult> codec_round_trips(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckResult> out;
  ModelConfig c;
  c.features = 7;
  c.dims = Dims{16, 16, 16};
  const ModelParams p = init_params(c, rng);

  {
    const auto packed = codec::pack_artifact(p, c, codec::CodecMode::raw, {seed, 10});
    const auto un = codec::unpack_artifact(packed.bytes);
    const auto again = codec::pack_artifact(un.params, un.config, un.mode, un.meta);
    CheckResult r{"raw artifact unpack->pack", again.bytes == packed.bytes, 0.0,
                  std::to_string(packed.bytes.size()) + " bytes"};
    out.push_back(r);
  }
  for (auto mode : {codec::CodecMode::quant, codec::CodecMode::quant_huffman}) {
    const auto packed = codec::pack_artifact(p, c, mode);
    const auto un = codec::unpack_artifact(packed.bytes);
    const bool ok = un.params == codec::as_stored(p, mode) &&
                    codec::pack_artifact(un.params, un.config, mode).bytes == packed.bytes;
    out.push_back({codec::to_string(mode) + " artifact round trip", ok, 0.0,
                   std::to_string(packed.bytes.size()) + " bytes"});
  }
  {
    bool ok = true;
    std::size_t payloads = 0;
    for (std::size_t len : {1ul, 2ul, 17ul, 1000ul, 65536ul}) {
      for (int flavour = 0; flavour < 3; ++flavour) {
        std::vector<std::uint8_t> bytes(len);
        for (auto& b : bytes) {
          b = flavour == 0   ? 42
              : flavour == 1 ? static_cast<std::uint8_t>(rng.index(256))
                             : static_cast<std::uint8_t>(128 + std::lround(rng.normal() * 4.0));
        }
        const auto enc = codec::huffman_encode(bytes);
        ok = ok && codec::huffman_decode(enc.lengths, enc.bits, bytes.size()) == bytes;
        ++payloads;
      }
    }
    out.push_back({"huffman lossless", ok, 0.0, std::to_string(payloads) + " payloads"});
  }
  return out;
}

std::vector<CheckResult> selftest(const SelftestOptions& options) {
  auto out = gradient_checks(options.seed, 1e-5, options.inject_fault ? 1e-3 : 0.0);
  out.push_back(dispatch_fuzz(2000, options.seed));
  for (auto& r : codec_round_trips(options.seed)) out.push_back(std::move(r));
  return out;
}

}  // namespace moec::checks

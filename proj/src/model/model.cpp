// SPDX-License-Identifier: Apache-2.0
#include "moec/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <stdexcept>
#include <string>
#include <thread>

#include "moec/error.hpp"
#include "moec/rng.hpp"

namespace moec {

void ModelConfig::validate() const {
  if (n_experts < 1) throw std::invalid_argument("n_experts must be >= 1");
  if (top_k < 1 || top_k > n_experts) {
    throw std::invalid_argument("top_k must be in [1, n_experts]");
  }
  if (features < 1) throw std::invalid_argument("feature width must be >= 1");
  if (encoder_depth < 1) throw std::invalid_argument("encoder needs at least one layer");
  if (!(omega > 0.0)) throw std::invalid_argument("omega must be positive");
  if (!(capacity_factor > 0.0)) throw std::invalid_argument("capacity factor must be positive");
  if (!(lambda_balance >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
  if (!(norm_hi > norm_lo)) throw std::invalid_argument("normalization range is empty");
}

void apply_preset(ModelConfig& config, const std::string& preset) {
  if (preset == "default") {
    config.expert_depth = 5;
  } else if (preset == "fc7") {
    config.expert_depth = 6;
  } else {
    throw std::invalid_argument("unknown architecture preset '" + preset + "'");
  }
  config.preset = preset;
}

std::vector<const nn::Linear*> ModelParams::layers() const {
  std::vector<const nn::Linear*> out;
  for (const auto& l : encoder) out.push_back(&l);
  out.push_back(&router.pre1);
  out.push_back(&router.pre2);
  out.push_back(&router.gate);
  for (const auto& e : experts)
    for (const auto& l : e) out.push_back(&l);
  for (const auto& l : decoder) out.push_back(&l);
  return out;
}

std::vector<nn::Linear*> ModelParams::layers() {
  std::vector<nn::Linear*> out;
  for (auto& l : encoder) out.push_back(&l);
  out.push_back(&router.pre1);
  out.push_back(&router.pre2);
  out.push_back(&router.gate);
  for (auto& e : experts)
    for (auto& l : e) out.push_back(&l);
  for (auto& l : decoder) out.push_back(&l);
  return out;
}

bool ModelParams::is_router_layer(std::size_t index) const noexcept {
  return index >= encoder.size() && index < encoder.size() + 3;
}

std::size_t ModelParams::param_count() const {
  std::size_t n = 0;
  for (const auto* l : layers()) n += l->param_count();
  return n;
}

bool ModelParams::all_finite() const {
  for (const auto* l : layers()) {
    if (!l->weight.all_finite()) return false;
    for (double b : l->bias)
      if (!std::isfinite(b)) return false;
  }
  return true;
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> out;
  out.reserve(param_count());
  for (const auto* l : layers()) {
    out.insert(out.end(), l->weight.values().begin(), l->weight.values().end());
    out.insert(out.end(), l->bias.begin(), l->bias.end());
  }
  return out;
}

void ModelParams::assign(std::span<const double> flat) {
  if (flat.size() != param_count()) throw DimensionError("assign: parameter count mismatch");
  std::size_t at = 0;
  for (auto* l : layers()) {
    auto w = l->weight.values();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), w.size(), w.begin());
    at += w.size();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), l->bias.size(), l->bias.begin());
    at += l->bias.size();
  }
}

std::size_t count_params(const ModelConfig& c, std::size_t F) {
  const std::size_t square = F * F + F;
  const std::size_t encoder = (3 * F + F) + (c.encoder_depth - 1) * square;
  const std::size_t router = 2 * square + (F * c.n_experts + c.n_experts);
  const std::size_t experts = c.n_experts * (c.expert_depth + 1) * square;
  const std::size_t decoder = c.decoder_depth * square + (F + 1);
  return encoder + router + experts + decoder;
}

std::size_t budget_params(Dims dims, int voxel_bits, double ratio) {
  if (!(ratio > 0.0)) throw BudgetError("compression ratio must be positive");
  const double bytes = static_cast<double>(dims.total()) * static_cast<double>(voxel_bits / 8);
  const auto budget = static_cast<std::size_t>(std::floor(bytes / ratio / 4.0));
  if (budget < 1) {
    throw BudgetError("ratio " + std::to_string(ratio) + " leaves no parameter budget for " +
                      std::to_string(static_cast<std::size_t>(bytes)) + " bytes");
  }
  return budget;
}

std::size_t solve_width(std::size_t max_params, const ModelConfig& skeleton) {
  if (count_params(skeleton, 1) > max_params) {
    throw BudgetError("budget of " + std::to_string(max_params) +
                      " parameters cannot fit a width-1 network (needs " +
                      std::to_string(count_params(skeleton, 1)) + ")");
  }
  std::size_t lo = 1;
  std::size_t hi = 2;
  while (count_params(skeleton, hi) <= max_params) {
    lo = hi;
    hi *= 2;
  }
  // invariant: params(lo) <= budget < params(hi)
  while (hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (count_params(skeleton, mid) <= max_params) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

ModelParams init_params(const ModelConfig& config, Rng& rng, double output_bias,
                        double output_scale) {
  config.validate();
  const std::size_t F = config.features;
  const double omega = config.omega;
  const double router_scale = 1.0 / std::sqrt(6.0);
  ModelParams p;
  for (std::size_t i = 0; i < config.encoder_depth; ++i) {
    p.encoder.emplace_back(i == 0 ? 3 : F, F);
    if (i == 0) {
      nn::init_siren_first(p.encoder.back(), rng);
    } else {
      nn::init_siren_hidden(p.encoder.back(), omega, rng);
    }
  }
  p.router = routing::RouterParams(F, config.n_experts);
  nn::init_uniform(p.router.pre1, router_scale, rng);
  nn::init_uniform(p.router.pre2, router_scale, rng);
  nn::init_uniform(p.router.gate, router_scale, rng);
  p.experts.resize(config.n_experts);
  for (auto& expert : p.experts) {
    for (std::size_t i = 0; i < config.expert_depth; ++i) {
      expert.emplace_back(F, F);
      nn::init_siren_hidden(expert.back(), omega, rng);
    }
    expert.emplace_back(F, F);
    nn::init_uniform(expert.back(), 1.0, rng);
  }
  for (std::size_t i = 0; i < config.decoder_depth; ++i) {
    p.decoder.emplace_back(F, F);
    nn::init_siren_hidden(p.decoder.back(), omega, rng);
  }
  p.decoder.emplace_back(F, 1);
  nn::init_uniform(p.decoder.back(), output_scale, rng);
  p.decoder.back().bias[0] = output_bias;
  return p;
}

ModelParams zero_params(const ModelConfig& config) {
  config.validate();
  const std::size_t F = config.features;
  ModelParams p;
  for (std::size_t i = 0; i < config.encoder_depth; ++i) p.encoder.emplace_back(i == 0 ? 3 : F, F);
  p.router = routing::RouterParams(F, config.n_experts);
  p.experts.assign(config.n_experts,
                   std::vector<nn::Linear>(config.expert_depth + 1, nn::Linear(F, F)));
  p.decoder.assign(config.decoder_depth, nn::Linear(F, F));
  p.decoder.emplace_back(F, 1);
  return p;
}

namespace {

// Sine-activated stack followed, when `final_linear`, by one plain linear layer.
nn::Matrix run_stack(const nn::Matrix& input, std::span<const nn::Linear> layers, double omega,
                     bool final_linear, std::vector<nn::LinearTape>& linear_tapes,
                     std::vector<nn::SineTape>& sine_tapes) {
  nn::Matrix h = input;
  const std::size_t sine_layers = final_linear ? layers.size() - 1 : layers.size();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto [z, lt] = nn::linear_forward(h, layers[i]);
    linear_tapes.push_back(std::move(lt));
    if (i < sine_layers) {
      auto [a, st] = nn::sine_forward(z, omega);
      sine_tapes.push_back(std::move(st));
      h = std::move(a);
    } else {
      h = std::move(z);
    }
  }
  return h;
}

nn::Matrix unwind_stack(const nn::Matrix& dout, const std::vector<nn::LinearTape>& linear_tapes,
                        const std::vector<nn::SineTape>& sine_tapes, ModelGrad& grads,
                        std::size_t first_layer) {
  nn::Matrix d = dout;
  for (std::size_t i = linear_tapes.size(); i-- > 0;) {
    if (i < sine_tapes.size()) d = nn::sine_backward(sine_tapes[i], d);
    auto g = nn::linear_backward(linear_tapes[i], d);
    grads[first_layer + i] = {std::move(g.dweight), std::move(g.dbias)};
    d = std::move(g.dx);
  }
  return d;
}

nn::LinearGrad zero_grad(const nn::Linear& layer) {
  return {nn::Matrix(layer.in(), layer.out()), std::vector<double>(layer.out(), 0.0)};
}

}  // namespace

ForwardResult forward(const nn::Matrix& coords, const ModelParams& params,
                      const ModelConfig& config, bool training) {
  if (coords.cols() != 3) throw DimensionError("forward: coordinates must be B×3");
  ForwardResult r;
  ForwardTape& t = r.tape;
  t.points = coords.rows();
  const nn::Matrix features =
      run_stack(coords, params.encoder, config.omega, false, t.encoder_linear, t.encoder_sine);

  auto [probs, gate_tape] = routing::gate_forward(features, params.router);
  t.gate = std::move(gate_tape);
  t.selection = routing::top_k_select(probs, config.top_k);
  t.plan = routing::build_dispatch(t.selection, config.n_experts,
                                   training ? config.capacity_factor : routing::kUnlimitedCapacity);
  r.balance_loss = routing::balancing_loss(t.plan, probs).value;
  r.probs = std::move(probs);

  t.experts.resize(config.n_experts);
  t.expert_outputs.resize(config.n_experts);
  for (std::size_t e = 0; e < config.n_experts; ++e) {
    ExpertTape& et = t.experts[e];
    et.points = t.plan.kept_points(e);
    const nn::Matrix x = nn::gather_rows(features, et.points);
    t.expert_outputs[e] = run_stack(x, params.experts[e], config.omega, true, et.linear, et.sine);
  }
  const nn::Matrix mixed = routing::combine(t.expert_outputs, t.plan, config.features);
  const nn::Matrix out =
      run_stack(mixed, params.decoder, config.omega, true, t.decoder_linear, t.decoder_sine);
  r.pred.assign(out.values().begin(), out.values().end());
  return r;
}

std::vector<double> predict(const nn::Matrix& coords, const ModelParams& params,
                            const ModelConfig& config) {
  return forward(coords, params, config, false).pred;
}

ModelGrad backward(const ForwardResult& result, const ModelParams& params,
                   const ModelConfig& config, std::span<const double> dpred) {
  const ForwardTape& t = result.tape;
  if (dpred.size() != t.points) throw DimensionError("backward: dpred length mismatch");
  const auto layers = params.layers();
  ModelGrad grads(layers.size());

  const std::size_t enc0 = 0;
  const std::size_t router0 = params.encoder.size();
  const std::size_t expert0 = router0 + 3;
  const std::size_t expert_layers = config.expert_depth + 1;
  const std::size_t dec0 = expert0 + config.n_experts * expert_layers;

  nn::Matrix dy(t.points, 1, std::vector<double>(dpred.begin(), dpred.end()));
  const nn::Matrix dmixed = unwind_stack(dy, t.decoder_linear, t.decoder_sine, grads, dec0);

  auto cb = routing::combine_backward(t.expert_outputs, t.plan, dmixed);
  nn::Matrix dfeatures(t.points, config.features);
  for (std::size_t e = 0; e < config.n_experts; ++e) {
    const ExpertTape& et = t.experts[e];
    const nn::Matrix dx =
        unwind_stack(cb.dexpert[e], et.linear, et.sine, grads, expert0 + e * expert_layers);
    for (std::size_t r = 0; r < et.points.size(); ++r) {
      auto dst = dfeatures.row(et.points[r]);
      const auto src = dx.row(r);
      for (std::size_t f = 0; f < dst.size(); ++f) dst[f] += src[f];
    }
  }

  nn::Matrix dprobs = routing::selection_backward(result.probs, t.selection, cb.dgates);
  if (config.lambda_balance != 0.0) {
    const auto lb = routing::balancing_loss(t.plan, result.probs);
    auto dst = dprobs.values();
    const auto src = lb.dprobs.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += config.lambda_balance * src[i];
  }
  auto gb = routing::gate_backward(t.gate, dprobs);
  {
    auto dst = dfeatures.values();
    const auto src = gb.dfeatures.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  if (params.router.is_frozen()) {
    grads[router0] = zero_grad(params.router.pre1);
    grads[router0 + 1] = zero_grad(params.router.pre2);
    grads[router0 + 2] = zero_grad(params.router.gate);
  } else {
    grads[router0] = std::move(gb.grad.pre1);
    grads[router0 + 1] = std::move(gb.grad.pre2);
    grads[router0 + 2] = std::move(gb.grad.gate);
  }

  unwind_stack(dfeatures, t.encoder_linear, t.encoder_sine, grads, enc0);
  return grads;
}

std::vector<double> flatten(const ModelGrad& grad) {
  std::vector<double> out;
  for (const auto& g : grad) {
    out.insert(out.end(), g.weight.values().begin(), g.weight.values().end());
    out.insert(out.end(), g.bias.begin(), g.bias.end());
  }
  return out;
}

unsigned default_threads() {
  if (const char* env = std::getenv("MOEC_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

Volume reconstruct_grid(const ModelParams& params, const ModelConfig& config,
                        std::size_t chunk_size, unsigned threads) {
  if (chunk_size == 0) throw std::invalid_argument("reconstruct_grid: chunk size must be >= 1");
  Volume v;
  v.dims = config.dims;
  v.voxel_bits = config.voxel_bits;
  v.lo = config.norm_lo;
  v.hi = config.norm_hi;
  const std::size_t total = config.dims.total();
  v.data.assign(total, 0.0);
  const std::size_t chunks = (total + chunk_size - 1) / chunk_size;
  if (threads == 0) threads = default_threads();
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(chunks, 1)));

  // Chunks write disjoint ranges, so the merge order is the flat order
  // regardless of which worker ran which chunk.
  auto work = [&](std::size_t first_chunk, std::size_t stride) {
    for (std::size_t c = first_chunk; c < chunks; c += stride) {
      const std::size_t begin = c * chunk_size;
      const std::size_t count = std::min(chunk_size, total - begin);
      const auto pred = predict(grid_coords(config.dims, begin, count), params, config);
      std::copy(pred.begin(), pred.end(), v.data.begin() + static_cast<std::ptrdiff_t>(begin));
    }
  };
  if (threads <= 1) {
    work(0, 1);
  } else {
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < threads; ++i) {
      pool.emplace_back([&, i] {
        try {
          work(i, threads);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return v;
}

}  // namespace moec

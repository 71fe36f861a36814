// SPDX-License-Identifier: Apache-2.0
#include "moec/router.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "moec/error.hpp"

namespace moec::routing {

void RouterParams::unfreeze() const {
  throw std::logic_error("a frozen router cannot be unfrozen");
}

std::pair<nn::Matrix, GateTape> gate_forward(const nn::Matrix& features,
                                             const RouterParams& params) {
  GateTape tape;
  auto [h1, l1] = nn::linear_forward(features, params.pre1);
  auto [a1, r1] = nn::relu_forward(h1);
  auto [h2, l2] = nn::linear_forward(a1, params.pre2);
  auto [a2, r2] = nn::relu_forward(h2);
  auto [logits, l3] = nn::linear_forward(a2, params.gate);
  tape.l1 = std::move(l1);
  tape.r1 = std::move(r1);
  tape.l2 = std::move(l2);
  tape.r2 = std::move(r2);
  tape.l3 = std::move(l3);
  tape.probs = nn::softmax_forward(logits);
  nn::Matrix probs = tape.probs;
  return {std::move(probs), std::move(tape)};
}

GateBackward gate_backward(const GateTape& tape, const nn::Matrix& dprobs) {
  GateBackward out;
  const nn::Matrix dlogits = nn::softmax_backward(tape.probs, dprobs);
  auto g3 = nn::linear_backward(tape.l3, dlogits);
  auto g2 = nn::linear_backward(tape.l2, nn::relu_backward(tape.r2, g3.dx));
  auto g1 = nn::linear_backward(tape.l1, nn::relu_backward(tape.r1, g2.dx));
  out.grad.gate = {std::move(g3.dweight), std::move(g3.dbias)};
  out.grad.pre2 = {std::move(g2.dweight), std::move(g2.dbias)};
  out.grad.pre1 = {std::move(g1.dweight), std::move(g1.dbias)};
  out.dfeatures = std::move(g1.dx);
  return out;
}

Selection top_k_select(const nn::Matrix& probs, std::size_t k) {
  const std::size_t n = probs.cols();
  if (k < 1 || k > n) {
    throw std::invalid_argument("top_k_select: k = " + std::to_string(k) + " with " +
                                std::to_string(n) + " experts");
  }
  Selection s;
  s.points = probs.rows();
  s.k = k;
  s.experts.resize(s.points * k);
  s.gates.resize(s.points * k);
  std::vector<std::uint32_t> order(n);
  for (std::size_t p = 0; p < s.points; ++p) {
    const auto row = probs.row(p);
    std::iota(order.begin(), order.end(), 0u);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::uint32_t a, std::uint32_t b) {
                        return row[a] != row[b] ? row[a] > row[b] : a < b;
                      });
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += row[order[j]];
    for (std::size_t j = 0; j < k; ++j) {
      s.experts[p * k + j] = order[j];
      s.gates[p * k + j] = k == 1 ? row[order[j]] : row[order[j]] / total;
    }
  }
  return s;
}

nn::Matrix selection_backward(const nn::Matrix& probs, const Selection& selection,
                              std::span<const double> dgates) {
  if (probs.rows() != selection.points || dgates.size() != selection.points * selection.k) {
    throw DimensionError("selection_backward: shape mismatch");
  }
  nn::Matrix dprobs(probs.rows(), probs.cols());
  const std::size_t k = selection.k;
  for (std::size_t p = 0; p < selection.points; ++p) {
    if (k == 1) {
      dprobs(p, selection.expert(p, 0)) += dgates[p];
      continue;
    }
    // g_j = p_j / S  ⇒  dL/dp_j = (dL/dg_j − Σ_m dL/dg_m·g_m) / S
    double total = 0.0;
    double weighted = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      total += probs(p, selection.expert(p, j));
      weighted += dgates[p * k + j] * selection.gate(p, j);
    }
    for (std::size_t j = 0; j < k; ++j) {
      dprobs(p, selection.expert(p, j)) += (dgates[p * k + j] - weighted) / total;
    }
  }
  return dprobs;
}

std::size_t DispatchPlan::kept_total() const noexcept {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

std::vector<std::size_t> DispatchPlan::kept_points(std::size_t expert) const {
  std::vector<std::size_t> out;
  out.reserve(counts[expert]);
  for (std::size_t s = 0; s < counts[expert]; ++s) out.push_back(slots[expert][s] / k);
  return out;
}

DispatchPlan build_dispatch(const Selection& selection, std::size_t experts,
                            double capacity_factor) {
  if (!(capacity_factor > 0.0)) throw std::invalid_argument("capacity factor must be positive");
  if (experts == 0) throw std::invalid_argument("build_dispatch: no experts");
  DispatchPlan plan;
  plan.points = selection.points;
  plan.k = selection.k;
  plan.experts = experts;
  const std::size_t B = selection.points;
  if (std::isinf(capacity_factor)) {
    plan.capacity = B;
  } else {
    const double raw = capacity_factor * static_cast<double>(B) / static_cast<double>(experts);
    plan.capacity = std::min(B, static_cast<std::size_t>(std::ceil(raw)));
  }
  const std::size_t choices = B * plan.k;
  plan.choice_expert = selection.experts;
  plan.choice_gate = selection.gates;
  plan.kept.assign(choices, 0);
  plan.slot_of.assign(choices, kPadSlot);
  plan.counts.assign(experts, 0);
  plan.slots.assign(experts, {});

  std::vector<std::vector<std::size_t>> wanted(experts);
  for (std::size_t c = 0; c < choices; ++c) {
    const auto e = selection.experts[c];
    if (e >= experts) throw DimensionError("build_dispatch: expert id out of range");
    wanted[e].push_back(c);
  }
  for (std::size_t e = 0; e < experts; ++e) {
    auto& cand = wanted[e];
    if (cand.size() > plan.capacity) {
      // choice ids grow with point index, so id order is point order
      std::stable_sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) {
        return selection.gates[a] > selection.gates[b];
      });
      cand.resize(plan.capacity);
      std::sort(cand.begin(), cand.end());
    }
    auto& slots = plan.slots[e];
    slots.assign(plan.capacity, kPadSlot);
    for (std::size_t s = 0; s < cand.size(); ++s) {
      slots[s] = cand[s];
      plan.kept[cand[s]] = 1;
      plan.slot_of[cand[s]] = s;
    }
    plan.counts[e] = cand.size();
  }
  return plan;
}

nn::Matrix combine(std::span<const nn::Matrix> expert_outputs, const DispatchPlan& plan,
                   std::size_t width) {
  if (expert_outputs.size() != plan.experts) {
    throw DimensionError("combine: expert output count does not match the plan");
  }
  for (std::size_t e = 0; e < plan.experts; ++e) {
    if (expert_outputs[e].rows() != plan.counts[e] ||
        (plan.counts[e] > 0 && expert_outputs[e].cols() != width)) {
      throw DimensionError("combine: expert " + std::to_string(e) +
                           " output is misaligned with its slots");
    }
  }
  nn::Matrix out(plan.points, width);
  for (std::size_t p = 0; p < plan.points; ++p) {
    auto dst = out.row(p);
    for (std::size_t j = 0; j < plan.k; ++j) {
      const std::size_t c = p * plan.k + j;
      if (!plan.kept[c]) continue;
      const double g = plan.choice_gate[c];
      const auto src = expert_outputs[plan.choice_expert[c]].row(plan.slot_of[c]);
      for (std::size_t f = 0; f < width; ++f) dst[f] += g * src[f];
    }
  }
  return out;
}

CombineBackward combine_backward(std::span<const nn::Matrix> expert_outputs,
                                 const DispatchPlan& plan, const nn::Matrix& dy) {
  if (expert_outputs.size() != plan.experts || dy.rows() != plan.points) {
    throw DimensionError("combine_backward: shape mismatch");
  }
  const std::size_t width = dy.cols();
  CombineBackward out;
  out.dgates.assign(plan.points * plan.k, 0.0);
  out.dexpert.reserve(plan.experts);
  for (std::size_t e = 0; e < plan.experts; ++e) out.dexpert.emplace_back(plan.counts[e], width);
  for (std::size_t p = 0; p < plan.points; ++p) {
    const auto g_out = dy.row(p);
    for (std::size_t j = 0; j < plan.k; ++j) {
      const std::size_t c = p * plan.k + j;
      if (!plan.kept[c]) continue;
      const auto e = plan.choice_expert[c];
      const std::size_t slot = plan.slot_of[c];
      const auto y = expert_outputs[e].row(slot);
      auto dx = out.dexpert[e].row(slot);
      const double g = plan.choice_gate[c];
      double dot = 0.0;
      for (std::size_t f = 0; f < width; ++f) {
        dx[f] = g * g_out[f];
        dot += g_out[f] * y[f];
      }
      out.dgates[c] = dot;
    }
  }
  return out;
}

BalancingLoss balancing_loss(const DispatchPlan& plan, const nn::Matrix& probs) {
  if (plan.points == 0) throw std::invalid_argument("balancing_loss: empty batch");
  if (probs.rows() != plan.points || probs.cols() != plan.experts) {
    throw DimensionError("balancing_loss: probabilities do not match the plan");
  }
  const double B = static_cast<double>(plan.points);
  const double scale = static_cast<double>(plan.experts) / (B * B);
  BalancingLoss out;
  out.dprobs = nn::Matrix(probs.rows(), probs.cols());
  std::vector<double> mass(plan.experts, 0.0);
  for (std::size_t p = 0; p < probs.rows(); ++p) {
    const auto row = probs.row(p);
    for (std::size_t e = 0; e < plan.experts; ++e) mass[e] += row[e];
  }
  for (std::size_t e = 0; e < plan.experts; ++e) {
    out.value += static_cast<double>(plan.counts[e]) * mass[e];
  }
  out.value *= scale;
  for (std::size_t p = 0; p < probs.rows(); ++p) {
    auto row = out.dprobs.row(p);
    for (std::size_t e = 0; e < plan.experts; ++e) {
      row[e] = scale * static_cast<double>(plan.counts[e]);
    }
  }
  return out;
}

}  // namespace moec::routing

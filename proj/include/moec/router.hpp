// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "moec/nn/layers.hpp"
#include "moec/nn/matrix.hpp"

namespace moec::routing {

/// Gating network: two ReLU-activated F→F layers in front of an F→n
/// linear layer that feeds a softmax.
struct RouterParams {
  nn::Linear pre1;
  nn::Linear pre2;
  nn::Linear gate;

  RouterParams() = default;
  RouterParams(std::size_t features, std::size_t experts)
      : pre1(features, features), pre2(features, features), gate(features, experts) {}

  std::size_t experts() const noexcept { return gate.out(); }
  std::size_t param_count() const noexcept {
    return pre1.param_count() + pre2.param_count() + gate.param_count();
  }

  /// Stops all further parameter updates. There is no way back.
  void freeze() noexcept { frozen_ = true; }
  bool is_frozen() const noexcept { return frozen_; }
  /// Always throws std::logic_error: a frozen router stays frozen.
  [[noreturn]] void unfreeze() const;

  friend bool operator==(const RouterParams&, const RouterParams&) = default;

 private:
  bool frozen_ = false;
};

struct RouterGrad {
  nn::LinearGrad pre1;
  nn::LinearGrad pre2;
  nn::LinearGrad gate;
};

struct GateTape {
  nn::LinearTape l1;
  nn::ReluTape r1;
  nn::LinearTape l2;
  nn::ReluTape r2;
  nn::LinearTape l3;
  nn::Matrix probs;
};

/// probs = softmax(gate(relu(pre2(relu(pre1(features))))))
std::pair<nn::Matrix, GateTape> gate_forward(const nn::Matrix& features, const RouterParams& params);

struct GateBackward {
  nn::Matrix dfeatures;
  RouterGrad grad;
};

GateBackward gate_backward(const GateTape& tape, const nn::Matrix& dprobs);

/// Top-k choices per point, row-major B×k.
struct Selection {
  std::size_t points = 0;
  std::size_t k = 1;
  std::vector<std::uint32_t> experts;
  /// Raw softmax value for k = 1; renormalized over the k choices for k > 1.
  std::vector<double> gates;

  std::uint32_t expert(std::size_t point, std::size_t choice) const {
    return experts[point * k + choice];
  }
  double gate(std::size_t point, std::size_t choice) const { return gates[point * k + choice]; }
};

/// Experts ordered by descending probability, ties to the lower id.
Selection top_k_select(const nn::Matrix& probs, std::size_t k);

/// dL/dprobs from dL/dgates, undoing the k > 1 renormalization.
nn::Matrix selection_backward(const nn::Matrix& probs, const Selection& selection,
                              std::span<const double> dgates);

inline constexpr std::size_t kPadSlot = std::numeric_limits<std::size_t>::max();
inline constexpr double kUnlimitedCapacity = std::numeric_limits<double>::infinity();

/// Capacity-limited assignment of (point, choice) pairs to experts.
struct DispatchPlan {
  std::size_t points = 0;
  std::size_t k = 1;
  std::size_t experts = 1;
  std::size_t capacity = 0;
  /// Per choice (point·k + j): routed expert, gate value, kept flag and
  /// position inside the expert's slot list (kPadSlot when dropped).
  std::vector<std::uint32_t> choice_expert;
  std::vector<double> choice_gate;
  std::vector<std::uint8_t> kept;
  std::vector<std::size_t> slot_of;
  /// Per expert: `capacity` entries; kept choice ids in ascending point
  /// order, then kPadSlot padding.
  std::vector<std::vector<std::size_t>> slots;
  /// c_i: kept choices per expert.
  std::vector<std::size_t> counts;

  std::size_t kept_total() const noexcept;
  std::size_t dropped() const noexcept { return points * k - kept_total(); }
  double drop_fraction() const noexcept {
    return points == 0 ? 0.0 : static_cast<double>(dropped()) / static_cast<double>(points * k);
  }
  /// Point ids of the kept slots of `expert`, in slot order.
  std::vector<std::size_t> kept_points(std::size_t expert) const;
};

/// capacity = ceil(C_f·B/n), or B when C_f is kUnlimitedCapacity. An
/// over-subscribed expert keeps its highest-gate choices (ties to the lower
/// point index) and drops the rest.
DispatchPlan build_dispatch(const Selection& selection, std::size_t experts,
                            double capacity_factor);

/// Per point, the gate-weighted sum of its kept choices' expert outputs.
/// `expert_outputs[i]` holds one row per kept slot of expert i.
nn::Matrix combine(std::span<const nn::Matrix> expert_outputs, const DispatchPlan& plan,
                   std::size_t width);

struct CombineBackward {
  std::vector<nn::Matrix> dexpert;
  /// Per choice; zero for dropped choices.
  std::vector<double> dgates;
};

CombineBackward combine_backward(std::span<const nn::Matrix> expert_outputs,
                                 const DispatchPlan& plan, const nn::Matrix& dy);

struct BalancingLoss {
  double value = 0.0;
  nn::Matrix dprobs;
};

/// L_b = (n/B²)·Σ_i c_i·Σ_x G(x)_i, with c_i held constant for the gradient.
BalancingLoss balancing_loss(const DispatchPlan& plan, const nn::Matrix& probs);

}  // namespace moec::routing

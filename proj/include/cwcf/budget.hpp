#pragma once

#include <algorithm>
#include <cstddef>
#include <deque>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "cwcf/common.hpp"

namespace cwcf {

// Dual ascent on the Lagrange multiplier of the average-budget constraint.
// The gradient of the Lagrangian in lambda is E[cost] - b, estimated from a
// sliding window of recently completed training episodes.
struct LagrangeState {
  double lambda = 0.0;
  double velocity = 0.0;
  double lr = 1e-3;
  double momentum = 0.9;
  double target = 0.0;
  std::size_t window_size = 1000;
  std::deque<double> window;
  std::deque<double> weights;  // parallel to window; 1 unless importance-weighted

  // Sign history of the gradient estimate, for oscillation detection.
  std::size_t history_size = 200;
  std::deque<int> gradient_signs;
  std::uint64_t updates = 0;
  bool last_step_skipped = false;

  void observe(double cost, double weight = 1.0) {
    window.push_back(cost);
    weights.push_back(weight);
    while (window.size() > window_size) {
      window.pop_front();
      weights.pop_front();
    }
  }

  // Self-normalized weighted mean; NaN when no weight is in the window.
  double window_mean() const {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < window.size(); ++i) {
      num += weights[i] * window[i];
      den += weights[i];
    }
    return den > 0.0 ? num / den : std::numeric_limits<double>::quiet_NaN();
  }
};

// Learning rate scaled so that the update is invariant to the unit of cost:
// lambda carries units of 1/cost and the gradient units of cost.
inline double cost_invariant_lr(double base_lr, double mean_feature_cost) {
  return base_lr / (mean_feature_cost * mean_feature_cost);
}

// Pushes the new costs into the window and takes one projected ascent step
// with momentum. weights, if given, pair with costs. With an empty (or
// zero-weight) window the state is left unchanged and last_step_skipped is set.
inline LagrangeState& lambda_step(LagrangeState& s, const std::vector<double>& costs,
                                  const std::vector<double>& weights = {}) {
  if (!weights.empty() && weights.size() != costs.size()) throw ShapeError("lambda_step: weights/costs size");
  for (std::size_t i = 0; i < costs.size(); ++i) s.observe(costs[i], weights.empty() ? 1.0 : weights[i]);
  const double mean = s.window_mean();
  if (std::isnan(mean)) {
    s.last_step_skipped = true;
    return s;
  }
  s.last_step_skipped = false;
  const double grad = mean - s.target;
  s.velocity = s.momentum * s.velocity + grad;
  s.lambda = std::max(0.0, s.lambda + s.lr * s.velocity);
  s.gradient_signs.push_back(grad > 0.0 ? 1 : (grad < 0.0 ? -1 : 0));
  while (s.gradient_signs.size() > s.history_size) s.gradient_signs.pop_front();
  ++s.updates;
  return s;
}

// Number of sign changes of the gradient estimate over the last k updates
// (zeros are skipped).
inline std::size_t sign_changes(const LagrangeState& s, std::size_t k) {
  const auto n = s.gradient_signs.size();
  const auto begin = n > k ? n - k : 0;
  std::size_t changes = 0;
  int prev = 0;
  for (auto i = begin; i < n; ++i) {
    const int sg = s.gradient_signs[i];
    if (sg == 0) continue;
    if (prev != 0 && sg != prev) ++changes;
    prev = sg;
  }
  return changes;
}

inline bool oscillating(const LagrangeState& s, std::size_t k, std::size_t min_changes) {
  return s.gradient_signs.size() >= k && sign_changes(s, k) >= min_changes;
}

struct SnapshotScore {
  double val_cost = 0.0;
  double val_accuracy = 0.0;
};

struct FeasibleChoice {
  std::size_t index = 0;
  bool feasible = true;  // false: no snapshot met the budget, min-cost fallback
};

// Among snapshots with validation cost <= b, the one with the highest
// accuracy (latest wins ties). Without any feasible snapshot, the cheapest one.
inline FeasibleChoice select_feasible_best(const std::vector<SnapshotScore>& snaps, double b) {
  if (snaps.empty()) throw ValidationError("no snapshots to select from");
  FeasibleChoice best{0, false};
  bool found = false;
  for (std::size_t i = 0; i < snaps.size(); ++i) {
    if (snaps[i].val_cost > b) continue;
    if (!found || snaps[i].val_accuracy >= snaps[best.index].val_accuracy) best = {i, true};
    found = true;
  }
  if (found) return best;
  for (std::size_t i = 1; i < snaps.size(); ++i)
    if (snaps[i].val_cost < snaps[best.index].val_cost) best.index = i;
  return best;
}

}  // namespace cwcf

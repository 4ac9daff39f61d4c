#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cwcf/agent.hpp"
#include "cwcf/common.hpp"
#include "cwcf/data.hpp"
#include "cwcf/net.hpp"
#include "cwcf/trainer.hpp"

namespace cwcf {

struct EvalPoint {
  double cost = 0.0;
  double accuracy = 0.0;
  std::string split = "val";
  std::string run_id;
  double budget_param = 0.0;
};

struct TradeoffCurve {
  std::vector<std::size_t> hull;   // indices into the input points, by cost
  std::vector<EvalPoint> selected;  // validation points on the hull
  std::vector<EvalPoint> reported;  // their paired test points
  double area = 0.0;
};

// Upper-left concave hull of (cost, accuracy): starts at the cheapest point
// (best accuracy among equal cost), accuracy strictly increases and slopes
// strictly decrease along it. Collinear interior points (within 1e-12) are
// dropped.
//
// With an anchor, the hull is built over the points plus (0, anchor) and the
// anchor itself is left out of the result: points at or below the prior, or
// under a chord from the anchor, are not selected.
inline std::vector<std::size_t> upper_left_hull(const std::vector<EvalPoint>& input,
                                                std::optional<double> anchor = std::nullopt) {
  std::vector<EvalPoint> pts = input;
  if (anchor) pts.push_back(EvalPoint{0.0, *anchor, "anchor", "", 0.0});
  std::vector<std::size_t> order(pts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (pts[a].cost != pts[b].cost) return pts[a].cost < pts[b].cost;
    return pts[a].accuracy > pts[b].accuracy;
  });
  std::vector<std::size_t> hull;
  auto cross = [&](std::size_t o, std::size_t a, std::size_t b) {
    return (pts[a].cost - pts[o].cost) * (pts[b].accuracy - pts[o].accuracy) -
           (pts[a].accuracy - pts[o].accuracy) * (pts[b].cost - pts[o].cost);
  };
  for (auto i : order) {
    if (!hull.empty() && pts[i].accuracy <= pts[hull.back()].accuracy) continue;  // dominated
    while (hull.size() >= 2 && cross(hull[hull.size() - 2], hull.back(), i) >= -1e-12) hull.pop_back();
    hull.push_back(i);
  }
  if (anchor) std::erase(hull, input.size());
  return hull;
}

// Hull selection on validation points only; the reported curve is made of the
// paired test points of the selected models.
inline TradeoffCurve build_curve(const std::vector<std::pair<EvalPoint, EvalPoint>>& points,
                                 std::optional<double> prior_accuracy = std::nullopt) {
  if (points.empty()) throw ValidationError("build_curve needs at least one point");
  std::vector<EvalPoint> val;
  for (const auto& p : points) val.push_back(p.first);
  TradeoffCurve c;
  c.hull = upper_left_hull(val, prior_accuracy);
  for (auto i : c.hull) {
    c.selected.push_back(points[i].first);
    c.reported.push_back(points[i].second);
  }
  return c;
}

// Area under the piecewise-linear curve anchored at (0, prior_accuracy) and
// extended flat from its last point to max_cost, divided by max_cost * 1.
inline double normalized_area(const std::vector<EvalPoint>& curve, double prior_accuracy, double max_cost) {
  if (!(max_cost > 0.0)) throw ValidationError("max_cost must be positive");
  if (!(prior_accuracy >= 0.0 && prior_accuracy <= 1.0)) throw ValidationError("prior accuracy outside [0,1]");
  std::vector<std::pair<double, double>> pts{{0.0, prior_accuracy}};
  for (const auto& p : curve) {
    if (!(p.accuracy >= 0.0 && p.accuracy <= 1.0)) throw ValidationError("accuracy outside [0,1]");
    pts.emplace_back(std::clamp(p.cost, 0.0, max_cost), p.accuracy);
  }
  std::stable_sort(pts.begin() + 1, pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  pts.emplace_back(max_cost, pts.back().second);
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    area += (pts[i].first - pts[i - 1].first) * 0.5 * (pts[i].second + pts[i - 1].second);
  return area / max_cost;
}

// ---------------------------------------------------------------------------
// Ridge + recursive feature elimination

struct RidgeModel {
  Matrix coef;       // [classes x features]
  Vector intercept;  // [classes]
};

// One-vs-rest ridge regression on +-1 targets, closed form
// (X^T X + alpha I) w = X^T y. With fit_intercept the columns and targets are
// centered first and the intercept is left unpenalized.
inline RidgeModel ridge_fit(const Matrix& x, const std::vector<int>& labels, int n_classes, double alpha,
                            bool fit_intercept = true) {
  if (x.cols() == 0) throw ValidationError("ridge_fit needs at least one feature");
  if (!(alpha > 0.0)) throw ValidationError("ridge alpha must be positive");
  if (static_cast<std::size_t>(x.rows()) != labels.size()) throw ShapeError("one label per row required");
  Matrix y(x.rows(), n_classes);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (int c = 0; c < n_classes; ++c) y(i, c) = labels[static_cast<std::size_t>(i)] == c ? 1.0 : -1.0;
  Matrix xc = x;
  Eigen::RowVectorXd x_mean = Eigen::RowVectorXd::Zero(x.cols());
  Eigen::RowVectorXd y_mean = Eigen::RowVectorXd::Zero(n_classes);
  if (fit_intercept && x.rows() > 0) {
    x_mean = x.colwise().mean();
    y_mean = y.colwise().mean();
    xc.rowwise() -= x_mean;
    y.rowwise() -= y_mean;
  }
  Eigen::MatrixXd gram = xc.transpose() * xc;
  gram.diagonal().array() += alpha;
  const Eigen::MatrixXd w = gram.ldlt().solve(Eigen::MatrixXd(xc.transpose() * y));  // [features x classes]
  RidgeModel m;
  m.coef = w.transpose();
  m.intercept = (y_mean - x_mean * w).transpose();
  return m;
}

// Most important first. Each round fits ridge on the remaining features and
// eliminates the one with the smallest coefficient norm across classes;
// among ties (relative 1e-12) the highest index goes first, so lower indices
// rank higher.
inline std::vector<int> rfe_order(const Matrix& x, const std::vector<int>& labels, int n_classes,
                                  double alpha = 1.0) {
  std::vector<int> remaining(static_cast<std::size_t>(x.cols()));
  std::iota(remaining.begin(), remaining.end(), 0);
  std::vector<int> eliminated;
  while (!remaining.empty()) {
    if (remaining.size() == 1) {
      eliminated.push_back(remaining.front());
      break;
    }
    Matrix sub(x.rows(), static_cast<Eigen::Index>(remaining.size()));
    for (std::size_t j = 0; j < remaining.size(); ++j) sub.col(static_cast<Eigen::Index>(j)) = x.col(remaining[j]);
    const auto model = ridge_fit(sub, labels, n_classes, alpha);
    std::size_t worst = 0;
    double worst_norm = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < remaining.size(); ++j) {
      const double norm = model.coef.col(static_cast<Eigen::Index>(j)).norm();
      const double tol = 1e-12 * std::max(1.0, std::abs(worst_norm));
      if (norm < worst_norm - tol || std::abs(norm - worst_norm) <= tol) {
        worst = j;
        worst_norm = std::min(norm, worst_norm);
      }
    }
    eliminated.push_back(remaining[worst]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(worst));
  }
  return {eliminated.rbegin(), eliminated.rend()};
}

inline std::vector<int> rfe_order(const Dataset& d, double alpha = 1.0) {
  const auto& rows = d.split.train;
  Matrix x(static_cast<Eigen::Index>(rows.size()), d.n_features());
  std::vector<int> y(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = d.features.row(static_cast<Eigen::Index>(rows[i]));
    y[i] = d.labels[rows[i]];
  }
  return rfe_order(x, y, d.n_classes, alpha);
}

// ---------------------------------------------------------------------------
// Fixed-order baseline

struct BaselineOptions {
  int hidden = 128;
  ClassifierOptions classifier{2000, 128, 1e-3, 1.0};
  double head_init_scale = 0.01;
  std::uint64_t seed = 0;
};

struct BaselinePoint {
  std::size_t prefix = 0;
  double budget = 0.0;
  EvalPoint val, test;
};

// Largest prefix of `order` whose cumulative cost fits the budget.
inline std::size_t prefix_for_budget(const Dataset& d, const std::vector<int>& order, double budget) {
  double spent = 0.0;
  std::size_t k = 0;
  while (k < order.size() && spent + d.costs[static_cast<std::size_t>(order[k])] <= budget)
    spent += d.costs[static_cast<std::size_t>(order[k++])];
  return k;
}

// Accuracy of a classifier that always observes exactly the prefix mask.
inline double prefix_accuracy(const QNetwork& net, const Dataset& d, const std::vector<std::uint8_t>& mask,
                              const std::vector<std::size_t>& rows) {
  if (rows.empty()) return 0.0;
  const int n = d.n_features();
  Matrix obs(static_cast<Eigen::Index>(rows.size()), 2 * n);
  EnvState s;
  s.acquired = mask;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    s.sample = rows[i];
    encode_into(d, s, obs.row(static_cast<Eigen::Index>(i)));
  }
  const Matrix q = forward(net, obs);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    Eigen::Index best;
    q.row(static_cast<Eigen::Index>(i)).tail(d.n_classes).maxCoeff(&best);
    hit += static_cast<int>(best) == d.labels[rows[i]] ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(rows.size());
}

// One classifier per distinct prefix implied by the budgets. The empty prefix
// predicts the train-majority class.
inline std::vector<BaselinePoint> baseline_curve(const Dataset& d, const std::vector<int>& order,
                                                 const std::vector<double>& budgets, const BaselineOptions& opt) {
  std::vector<BaselinePoint> out;
  std::vector<std::size_t> done;
  for (double b : budgets) {
    const auto k = prefix_for_budget(d, order, b);
    if (std::find(done.begin(), done.end(), k) != done.end()) continue;
    done.push_back(k);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(d.n_features()), 0);
    double cost = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      mask[static_cast<std::size_t>(order[i])] = 1;
      cost += d.costs[static_cast<std::size_t>(order[i])];
    }
    BaselinePoint p;
    p.prefix = k;
    p.budget = b;
    double val_acc, test_acc;
    if (k == 0) {
      val_acc = prior_accuracy(d, SplitId::Val);
      test_acc = prior_accuracy(d, SplitId::Test);
    } else {
      Rng rng = make_stream(opt.seed, 100 + k);
      QNetwork net(NetShape{2 * d.n_features(), opt.hidden, d.n_actions()});
      net.init(rng, opt.head_init_scale);
      MaskFn fixed = [&d, &mask](std::size_t sample, Rng&) {
        auto m = mask;
        for (int j = 0; j < d.n_features(); ++j)
          if (!d.present(static_cast<Eigen::Index>(sample), j)) m[static_cast<std::size_t>(j)] = 0;
        return m;
      };
      train_classifier(net, d, fixed, opt.classifier, rng);
      val_acc = prefix_accuracy(net, d, mask, d.split.val);
      test_acc = prefix_accuracy(net, d, mask, d.split.test);
    }
    const auto id = "prefix-" + std::to_string(k);
    p.val = {cost, val_acc, "val", id, b};
    p.test = {cost, test_acc, "test", id, b};
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Curve report (shared by RL sweeps and the baseline)

inline constexpr int kCurveReportVersion = 1;

inline nlohmann::json curve_report(const std::string& method, const std::vector<std::pair<EvalPoint, EvalPoint>>& pts,
                                   double prior_accuracy, double max_cost) {
  const auto curve = build_curve(pts, prior_accuracy);
  std::vector<bool> on_hull(pts.size(), false);
  for (auto i : curve.hull) on_hull[i] = true;
  auto points = nlohmann::json::array();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& [v, t] = pts[i];
    points.push_back(nlohmann::json{{"run_id", v.run_id},
                      {"budget_param", v.budget_param},
                      {"val", {{"cost", v.cost}, {"accuracy", v.accuracy}}},
                      {"test", {{"cost", t.cost}, {"accuracy", t.accuracy}}},
                      {"on_hull", static_cast<bool>(on_hull[i])}});
  }
  return {{"schema_version", kCurveReportVersion},
          {"method", method},
          {"points", points},
          {"anchors", {{"prior_accuracy", prior_accuracy}, {"max_cost", max_cost}}},
          {"cost_axis", "total feature cost c(F)"},
          {"area_val", normalized_area(curve.selected, prior_accuracy, max_cost)},
          {"area_test", normalized_area(curve.reported, prior_accuracy, max_cost)}};
}

}  // namespace cwcf

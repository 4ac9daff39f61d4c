#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cwcf/common.hpp"
#include "cwcf/data.hpp"
#include "cwcf/env.hpp"
#include "cwcf/net.hpp"
#include "cwcf/agent.hpp"

namespace cwcf {

// Exact solver for tiny discrete instances. Belief nodes are keyed by the
// acquired mask and the observed value codes; the posterior over classes is
// the empirical distribution of the dataset rows consistent with them.

inline constexpr int kOracleMaxFeatures = 12;
inline constexpr int kOracleMaxValues = 3;
inline constexpr std::size_t kOracleMaxSamples = 20000;

// Per-feature value codes of the given rows.
struct DiscreteView {
  std::vector<std::vector<double>> values;  // values[f] = distinct values, sorted
  std::vector<std::vector<std::uint8_t>> codes;  // codes[row position][f]

  std::uint8_t code(int f, double v) const {
    const auto& vs = values[static_cast<std::size_t>(f)];
    return static_cast<std::uint8_t>(std::lower_bound(vs.begin(), vs.end(), v) - vs.begin());
  }
};

inline DiscreteView discretize(const Dataset& d, const std::vector<std::size_t>& rows) {
  const int n = d.n_features();
  if (n > kOracleMaxFeatures)
    throw SizeError("oracle supports at most " + std::to_string(kOracleMaxFeatures) + " features, got " +
                    std::to_string(n));
  if (rows.empty()) throw SizeError("oracle needs at least one sample");
  if (rows.size() > kOracleMaxSamples)
    throw SizeError("oracle supports at most " + std::to_string(kOracleMaxSamples) + " samples, got " +
                    std::to_string(rows.size()));
  DiscreteView v;
  v.values.resize(static_cast<std::size_t>(n));
  for (int f = 0; f < n; ++f) {
    auto& vs = v.values[static_cast<std::size_t>(f)];
    for (auto r : rows) vs.push_back(d.features(static_cast<Eigen::Index>(r), f));
    std::sort(vs.begin(), vs.end());
    vs.erase(std::unique(vs.begin(), vs.end()), vs.end());
    if (static_cast<int>(vs.size()) > kOracleMaxValues)
      throw SizeError("feature " + std::to_string(f) + " takes " + std::to_string(vs.size()) +
                      " distinct values; oracle supports at most " + std::to_string(kOracleMaxValues));
  }
  v.codes.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    v.codes[i].resize(static_cast<std::size_t>(n));
    for (int f = 0; f < n; ++f)
      v.codes[i][static_cast<std::size_t>(f)] = v.code(f, d.features(static_cast<Eigen::Index>(rows[i]), f));
  }
  return v;
}

// Key: bit f = acquired; bits 16 + 2f.. = value code of feature f.
inline std::uint64_t belief_key(const std::vector<std::uint8_t>& acquired, const std::vector<std::uint8_t>& codes) {
  std::uint64_t key = 0;
  for (std::size_t f = 0; f < acquired.size(); ++f)
    if (acquired[f]) key |= (std::uint64_t{1} << f) | (std::uint64_t{codes[f]} << (16 + 2 * f));
  return key;
}

struct PolicyTable {
  std::unordered_map<std::uint64_t, int> action;
};

struct OracleSolution {
  double value = 0.0;
  PolicyTable policy;
  std::size_t nodes = 0;
};

namespace detail {

struct OracleSolver {
  const Dataset& d;
  const std::vector<std::size_t>& rows;
  const BudgetSpec& budget;
  const LossMatrix& loss;
  DiscreteView view;
  double lambda = 0.0;
  std::unordered_map<std::uint64_t, std::pair<double, int>> memo;

  static constexpr double kTieTol = 1e-12;

  double solve(std::vector<std::uint8_t>& acquired, std::vector<std::uint8_t>& codes, double spent,
               const std::vector<std::size_t>& members) {
    const auto key = belief_key(acquired, codes);
    if (auto it = memo.find(key); it != memo.end()) return it->second.first;

    const int n = d.n_features();
    std::vector<double> class_count(static_cast<std::size_t>(d.n_classes), 0.0);
    for (auto m : members) class_count[static_cast<std::size_t>(d.labels[rows[m]])] += 1.0;
    const double total = static_cast<double>(members.size());

    double best = -std::numeric_limits<double>::infinity();
    int best_action = -1;
    for (int a = 0; a < d.n_classes; ++a) {
      double expected = 0.0;
      for (int y = 0; y < d.n_classes; ++y) expected += class_count[static_cast<std::size_t>(y)] * loss(a, y);
      const double v = -expected / total;
      if (v > best + kTieTol) {
        best = v;
        best_action = class_action(d, a);
      }
    }
    const auto* hard = std::get_if<Hard>(&budget);
    for (int f = 0; f < n; ++f) {
      const auto fu = static_cast<std::size_t>(f);
      if (acquired[fu]) continue;
      if (hard && spent + d.costs[fu] > hard->budget) continue;
      std::vector<std::vector<std::size_t>> groups(view.values[fu].size());
      for (auto m : members) groups[view.codes[m][fu]].push_back(m);
      double v = hard ? 0.0 : -lambda * d.costs[fu];
      acquired[fu] = 1;
      for (std::size_t c = 0; c < groups.size(); ++c) {
        if (groups[c].empty()) continue;
        codes[fu] = static_cast<std::uint8_t>(c);
        v += static_cast<double>(groups[c].size()) / total * solve(acquired, codes, spent + d.costs[fu], groups[c]);
      }
      acquired[fu] = 0;
      codes[fu] = 0;
      if (v > best + kTieTol) {
        best = v;
        best_action = f;
      }
    }
    memo.emplace(key, std::make_pair(best, best_action));
    return best;
  }
};

inline double oracle_lambda(const BudgetSpec& budget) {
  if (const auto* l = std::get_if<LambdaFixed>(&budget)) return l->lambda;
  if (std::holds_alternative<Hard>(budget)) return 0.0;
  throw ValidationError("exact oracle supports lambda and hard budgets only");
}

}  // namespace detail

// Optimal expected reward (-(loss + lambda * cost), or -loss in hard mode)
// over the empirical distribution of `rows`. Ties prefer classification,
// then the lowest action index.
inline OracleSolution solve_exact(const Dataset& d, const std::vector<std::size_t>& rows, const BudgetSpec& budget,
                                  const LossMatrix& loss = {}) {
  validate(budget);
  detail::OracleSolver solver{d, rows, budget, loss, discretize(d, rows), detail::oracle_lambda(budget), {}};
  std::vector<std::uint8_t> acquired(static_cast<std::size_t>(d.n_features()), 0), codes(acquired.size(), 0);
  std::vector<std::size_t> members(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) members[i] = i;
  OracleSolution sol;
  sol.value = solver.solve(acquired, codes, 0.0, members);
  for (const auto& [key, entry] : solver.memo) sol.policy.action[key] = entry.second;
  sol.nodes = solver.memo.size();
  return sol;
}

// A deterministic policy: observed state and legal mask to action.
using Policy = std::function<int(const EnvState&, const ActionMask&)>;

struct PolicyValue {
  double value = 0.0;  // expected reward
  double mean_cost = 0.0;
  double accuracy = 0.0;
};

// Exact expectation by running the policy on every listed sample.
inline PolicyValue policy_value(const Policy& policy, const Dataset& d, const std::vector<std::size_t>& rows,
                                const BudgetSpec& budget, const LossMatrix& loss = {}) {
  validate(budget);
  discretize(d, rows);  // size limits
  const double lambda = detail::oracle_lambda(budget);
  PolicyValue pv;
  for (auto r : rows) {
    EnvState s;
    s.sample = r;
    s.label = d.labels[r];
    s.acquired.assign(static_cast<std::size_t>(d.n_features()), 0);
    double ret = 0.0;
    for (;;) {
      const auto legal = legal_actions(d, s, budget, false);
      const int a = policy(s, legal);
      if (a < 0 || a >= d.n_actions() || !legal[static_cast<std::size_t>(a)])
        throw std::logic_error("policy chose an illegal action");
      if (is_class_action(d, a)) {
        ret -= loss(class_of(d, a), s.label);
        pv.accuracy += class_of(d, a) == s.label ? 1.0 : 0.0;
        break;
      }
      s.acquired[static_cast<std::size_t>(a)] = 1;
      s.spent += d.costs[static_cast<std::size_t>(a)];
      if (!is_hard(budget)) ret -= lambda * d.costs[static_cast<std::size_t>(a)];
    }
    pv.value += ret;
    pv.mean_cost += s.spent;
  }
  const double n = static_cast<double>(rows.size());
  pv.value /= n;
  pv.mean_cost /= n;
  pv.accuracy /= n;
  return pv;
}

inline Policy table_policy(const Dataset& d, const std::vector<std::size_t>& rows, const PolicyTable& table) {
  auto view = std::make_shared<DiscreteView>(discretize(d, rows));
  return [&d, view, &table](const EnvState& s, const ActionMask&) {
    std::vector<std::uint8_t> codes(s.acquired.size(), 0);
    for (std::size_t f = 0; f < codes.size(); ++f)
      if (s.acquired[f])
        codes[f] = view->code(static_cast<int>(f), d.features(static_cast<Eigen::Index>(s.sample),
                                                               static_cast<Eigen::Index>(f)));
    auto it = table.action.find(belief_key(s.acquired, codes));
    if (it == table.action.end()) throw std::logic_error("policy table has no entry for this state");
    return it->second;
  };
}

// Greedy policy of a network with masked argmax.
inline Policy greedy_policy(const Dataset& d, const QNetwork& net) {
  return [&d, &net](const EnvState& s, const ActionMask& legal) {
    Matrix obs(1, 2 * d.n_features());
    encode_into(d, s, obs.row(0));
    const Matrix q = forward(net, obs);
    return masked_argmax(q.row(0), legal);
  };
}

// [{mask: [0/1...], values: [value or null...], action: index}], sorted by key.
inline nlohmann::json policy_table_json(const Dataset& d, const std::vector<std::size_t>& rows,
                                        const PolicyTable& table) {
  const auto view = discretize(d, rows);
  std::map<std::uint64_t, int> sorted(table.action.begin(), table.action.end());
  auto out = nlohmann::json::array();
  const int n = d.n_features();
  for (const auto& [key, action] : sorted) {
    nlohmann::json mask = nlohmann::json::array(), values = nlohmann::json::array();
    for (int f = 0; f < n; ++f) {
      const bool on = (key >> f) & 1u;
      mask.push_back(on ? 1 : 0);
      if (on) values.push_back(view.values[static_cast<std::size_t>(f)][(key >> (16 + 2 * f)) & 3u]);
      else values.push_back(nullptr);
    }
    out.push_back({{"mask", mask}, {"values", values}, {"action", action}});
  }
  return out;
}

}  // namespace cwcf

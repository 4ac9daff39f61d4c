#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cwcf/common.hpp"
#include "cwcf/data.hpp"

namespace cwcf {

// ---------------------------------------------------------------------------
// Budget variants

struct LambdaFixed {
  double lambda = 0.0;
};
struct AverageTarget {
  double budget = 0.0;
};
struct Hard {
  double budget = 0.0;
};

using BudgetSpec = std::variant<LambdaFixed, AverageTarget, Hard>;

inline void validate(const BudgetSpec& b) {
  std::visit(
      [](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LambdaFixed>) {
          if (!(m.lambda >= 0.0)) throw ValidationError("lambda must be nonnegative");
        } else {
          if (!(m.budget >= 0.0)) throw ValidationError("budget must be nonnegative");
        }
      },
      b);
}

inline bool is_hard(const BudgetSpec& b) { return std::holds_alternative<Hard>(b); }

inline std::string budget_mode_name(const BudgetSpec& b) {
  if (std::holds_alternative<LambdaFixed>(b)) return "lambda";
  if (std::holds_alternative<AverageTarget>(b)) return "average";
  return "hard";
}

// The scalar the user chose: lambda or b.
inline double budget_parameter(const BudgetSpec& b) {
  return std::visit(
      [](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LambdaFixed>) return m.lambda;
        else return m.budget;
      },
      b);
}

inline BudgetSpec make_budget(const std::string& mode, double value) {
  BudgetSpec b;
  if (mode == "lambda") b = LambdaFixed{value};
  else if (mode == "average") b = AverageTarget{value};
  else if (mode == "hard") b = Hard{value};
  else throw ValidationError("unknown budget mode '" + mode + "' (lambda|average|hard)");
  validate(b);
  return b;
}

// Misclassification loss; an empty matrix means the binary 0/1 loss.
struct LossMatrix {
  std::vector<std::vector<double>> loss;  // loss[predicted][true]

  double operator()(int predicted, int truth) const {
    if (loss.empty()) return predicted == truth ? 0.0 : 1.0;
    return loss.at(static_cast<std::size_t>(predicted)).at(static_cast<std::size_t>(truth));
  }
};

// ---------------------------------------------------------------------------
// States and observations

struct EnvState {
  std::size_t sample = 0;
  int label = 0;
  std::vector<std::uint8_t> acquired;
  double spent = 0.0;
  bool terminal = false;
};

struct Observation {
  Vector values;  // x-bar
  Vector mask;    // m
};

inline Observation observe(const Dataset& d, const EnvState& s) {
  const int n = d.n_features();
  Observation o{Vector::Zero(n), Vector::Zero(n)};
  for (int j = 0; j < n; ++j)
    if (s.acquired[static_cast<std::size_t>(j)]) {
      o.values[j] = d.features(static_cast<Eigen::Index>(s.sample), j);
      o.mask[j] = 1.0;
    }
  return o;
}

// Writes [x-bar, m] into one row of width 2n.
template <typename Row>
void encode_into(const Dataset& d, const EnvState& s, Row&& row) {
  const int n = d.n_features();
  for (int j = 0; j < n; ++j) {
    const bool on = s.acquired[static_cast<std::size_t>(j)] != 0;
    row(j) = on ? d.features(static_cast<Eigen::Index>(s.sample), j) : 0.0;
    row(n + j) = on ? 1.0 : 0.0;
  }
}

inline bool is_feature_action(const Dataset& d, int a) { return a >= 0 && a < d.n_features(); }
inline bool is_class_action(const Dataset& d, int a) { return a >= d.n_features() && a < d.n_actions(); }
inline int class_of(const Dataset& d, int a) { return a - d.n_features(); }
inline int class_action(const Dataset& d, int y) { return d.n_features() + y; }

// Classification actions are always legal. A feature is legal iff it is not
// acquired yet, fits the hard budget, and (when missing data is respected)
// is present in the sample.
inline ActionMask legal_actions(const Dataset& d, const EnvState& s, const BudgetSpec& budget,
                                bool respect_missing) {
  ActionMask mask(static_cast<std::size_t>(d.n_actions()), 0);
  const auto* hard = std::get_if<Hard>(&budget);
  for (int j = 0; j < d.n_features(); ++j) {
    const auto ju = static_cast<std::size_t>(j);
    if (s.acquired[ju]) continue;
    if (hard && s.spent + d.costs[ju] > hard->budget) continue;
    if (respect_missing && !d.present(static_cast<Eigen::Index>(s.sample), j)) continue;
    mask[ju] = 1;
  }
  for (int c = 0; c < d.n_classes; ++c) mask[static_cast<std::size_t>(class_action(d, c))] = 1;
  return mask;
}

struct StepResult {
  double reward = 0.0;
  bool terminal = false;
};

// One CwCF environment bound to a split. Training mode draws samples uniformly
// and restricts acquisition to present features when respect_missing is set;
// evaluation mode walks the split in order.
class Environment {
 public:
  Environment(const Dataset& data, SplitId which, BudgetSpec budget, bool training, LossMatrix loss = {})
      : data_(&data), rows_(&data.split[which]), budget_(budget), training_(training), loss_(std::move(loss)) {
    validate(budget_);
    if (rows_->empty()) throw ValidationError(std::string("empty split '") + to_string(which) + "'");
    if (const auto* l = std::get_if<LambdaFixed>(&budget_)) lambda_ = l->lambda;
  }

  // AverageTarget environments read the controller's current multiplier.
  void set_lambda(double lambda) { lambda_ = lambda; }
  double lambda() const { return lambda_; }
  bool training() const { return training_; }
  bool respect_missing() const { return training_; }
  const BudgetSpec& budget() const { return budget_; }
  const Dataset& data() const { return *data_; }
  const EnvState& state() const { return state_; }

  void reset(Rng& rng) {
    std::size_t pick;
    if (training_) {
      pick = (*rows_)[uniform_index(rng, rows_->size())];
    } else {
      pick = (*rows_)[cursor_];
      cursor_ = (cursor_ + 1) % rows_->size();
    }
    reset_to(pick);
  }

  void reset_to(std::size_t sample) {
    state_.sample = sample;
    state_.label = data_->labels[sample];
    state_.acquired.assign(static_cast<std::size_t>(data_->n_features()), 0);
    state_.spent = 0.0;
    state_.terminal = false;
  }

  Observation observation() const { return observe(*data_, state_); }
  ActionMask legal() const { return legal_actions(*data_, state_, budget_, respect_missing()); }

  StepResult step(int a) {
    if (state_.terminal) throw std::logic_error("step on a terminated episode");
    if (a < 0 || a >= data_->n_actions()) throw std::logic_error("action index out of range");
    if (!legal()[static_cast<std::size_t>(a)])
      throw std::logic_error("illegal action " + std::to_string(a) + " on sample " + std::to_string(state_.sample));
    if (is_class_action(*data_, a)) {
      state_.terminal = true;
      return {-loss_(class_of(*data_, a), state_.label), true};
    }
    const auto f = static_cast<std::size_t>(a);
    state_.acquired[f] = 1;
    state_.spent += data_->costs[f];
    if (is_hard(budget_)) return {0.0, false};
    return {-lambda_ * data_->costs[f], false};
  }

 private:
  const Dataset* data_;
  const std::vector<std::size_t>* rows_;
  BudgetSpec budget_;
  bool training_;
  LossMatrix loss_;
  double lambda_ = 0.0;
  std::size_t cursor_ = 0;
  EnvState state_;
};

// Raw (unscaled) feature cost of a finished action sequence.
inline double episode_cost(const Dataset& d, const std::vector<int>& actions) {
  if (actions.empty() || !is_class_action(d, actions.back()))
    throw std::logic_error("episode_cost on an unterminated trace");
  double cost = 0.0;
  for (std::size_t i = 0; i + 1 < actions.size(); ++i) {
    if (!is_feature_action(d, actions[i])) throw std::logic_error("classification before end of trace");
    cost += d.costs[static_cast<std::size_t>(actions[i])];
  }
  return cost;
}

}  // namespace cwcf

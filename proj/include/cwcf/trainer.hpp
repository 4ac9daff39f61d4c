#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cwcf/agent.hpp"
#include "cwcf/budget.hpp"
#include "cwcf/common.hpp"
#include "cwcf/data.hpp"
#include "cwcf/env.hpp"
#include "cwcf/net.hpp"

namespace cwcf {

struct TrainOptions {
  int hidden = 128;
  std::size_t n_envs = 1000;
  std::uint64_t max_steps = 100000;
  double gamma = 1.0;
  double retrace_lambda = 1.0;
  double rho = 0.1;
  std::size_t batch_size = 128;  // transitions per learner step
  std::size_t memory_episodes = 40000;
  Schedules schedules;
  LrSchedule lr;
  ClassifierOptions pretrain{500, 128, 1e-3, 1.0};
  double max_grad_norm = 1.0;
  double head_init_scale = 0.01;
  double warmup_fraction = 0.01;
  // Lagrangian controller (average-target mode only)
  double lambda_lr = 5e-4;
  double lambda_momentum = 0.5;
  double lambda_lr_decay = 1.0;  // exponent on the network's lr decay ratio
  // Estimate the greedy policy's cost from the exploring episodes by
  // importance weighting, instead of the raw behavior cost.
  bool lambda_greedy_cost = false;
  // Recompute stored feature rewards with the current lambda at batch time.
  bool lambda_relabel = true;
  std::size_t lambda_window = 1000;
  std::size_t oscillation_window = 50;
  std::size_t oscillation_min_changes = 10;
  bool stop_on_oscillation = false;
  std::uint64_t eval_every = 1000;
  std::uint64_t seed = 0;
  LossMatrix loss;
};

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  double mean_cost = 0.0;
  double accuracy = 0.0;
  double max_cost = 0.0;
  double mean_reward = 0.0;  // -(loss + lambda * cost); lambda = 0 in hard mode
  std::size_t samples = 0;
};

// Greedy rollout over the listed samples; all samples advance together so
// each round costs one batched forward pass. respect_missing restricts
// acquisition to present features (training-time semantics).
inline EvalResult evaluate_rows(const QNetwork& net, const Dataset& d, const std::vector<std::size_t>& rows,
                                const BudgetSpec& budget, double lambda = 0.0, bool respect_missing = false,
                                const LossMatrix& loss = {}) {
  EvalResult r;
  r.samples = rows.size();
  if (rows.empty()) return r;
  const int n = d.n_features();
  std::vector<EnvState> states(rows.size());
  std::vector<std::size_t> active(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    states[i].sample = rows[i];
    states[i].label = d.labels[rows[i]];
    states[i].acquired.assign(static_cast<std::size_t>(n), 0);
    active[i] = i;
  }
  double total_cost = 0.0, total_loss = 0.0;
  std::size_t correct = 0;
  while (!active.empty()) {
    Matrix obs(static_cast<Eigen::Index>(active.size()), 2 * n);
    for (std::size_t k = 0; k < active.size(); ++k)
      encode_into(d, states[active[k]], obs.row(static_cast<Eigen::Index>(k)));
    const Matrix q = forward(net, obs);
    std::vector<std::size_t> still;
    for (std::size_t k = 0; k < active.size(); ++k) {
      auto& s = states[active[k]];
      const int a = masked_argmax(q.row(static_cast<Eigen::Index>(k)), legal_actions(d, s, budget, respect_missing));
      if (is_class_action(d, a)) {
        const int y = class_of(d, a);
        correct += y == s.label ? 1 : 0;
        total_loss += loss(y, s.label);
        total_cost += s.spent;
        r.max_cost = std::max(r.max_cost, s.spent);
      } else {
        s.acquired[static_cast<std::size_t>(a)] = 1;
        s.spent += d.costs[static_cast<std::size_t>(a)];
        still.push_back(active[k]);
      }
    }
    active.swap(still);
  }
  const double count = static_cast<double>(rows.size());
  r.mean_cost = total_cost / count;
  r.accuracy = static_cast<double>(correct) / count;
  r.mean_reward = -(total_loss + (is_hard(budget) ? 0.0 : lambda * total_cost)) / count;
  return r;
}

inline EvalResult evaluate(const QNetwork& net, const Dataset& d, SplitId split, const BudgetSpec& budget,
                           double lambda = 0.0) {
  const auto& rows = d.split[split];
  if (rows.empty()) throw ValidationError(std::string("empty split '") + to_string(split) + "'");
  return evaluate_rows(net, d, rows, budget, lambda);
}

// ---------------------------------------------------------------------------
// Training

struct MetricsRow {
  std::uint64_t step = 0;
  double lambda = 0.0;
  double train_cost = 0.0;
  double val_cost = 0.0;
  double val_accuracy = 0.0;
  double loss = 0.0;
  double epsilon = 0.0;
  double eta = 0.0;
  double lr = 0.0;
};

struct Snapshot {
  std::uint64_t step = 0;
  double lambda = 0.0;
  EvalResult val;
  std::vector<double> params;
};

struct TrainResult {
  QNetwork final_net;
  QNetwork best_net;
  std::size_t best_index = 0;
  bool best_feasible = true;
  std::vector<Snapshot> snapshots;
  std::vector<MetricsRow> metrics;
  double final_lambda = 0.0;
  bool stopped_on_oscillation = false;
  std::uint64_t steps_done = 0;
};

// Independent RNG streams derived from one seed.
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), 0x5eedu};
  return Rng(seq);
}

class Trainer {
 public:
  using Callback = std::function<void(const MetricsRow&)>;

  Trainer(const Dataset& data, BudgetSpec budget, TrainOptions opt)
      : data_(data),
        budget_(budget),
        opt_(std::move(opt)),
        net_(NetShape{2 * data.n_features(), opt_.hidden, data.n_actions()}),
        replay_(opt_.memory_episodes),
        init_rng_(make_stream(opt_.seed, 1)),
        env_rng_(make_stream(opt_.seed, 2)),
        act_rng_(make_stream(opt_.seed, 3)),
        replay_rng_(make_stream(opt_.seed, 4)) {
    validate(budget_);
    if (data.split.train.empty()) throw ValidationError("empty train split");
    if (opt_.n_envs == 0 || opt_.batch_size == 0) throw ValidationError("n_envs and batch_size must be positive");
    net_.init(init_rng_, opt_.head_init_scale);
    adam_ = AdamState(net_.n_params(), opt_.lr.start);
    if (const auto* avg = std::get_if<AverageTarget>(&budget_)) {
      lagrange_.target = avg->budget;
      const double mean_cost = data.total_cost() / data.n_features();
      lambda_lr_base_ = cost_invariant_lr(opt_.lambda_lr, mean_cost);
      lagrange_.lr = lambda_lr_base_;
      lagrange_.momentum = opt_.lambda_momentum;
      lagrange_.window_size = opt_.lambda_window;
      lagrange_.history_size = std::max<std::size_t>(opt_.oscillation_window, 1);
    }
  }

  const QNetwork& network() const { return net_; }
  const std::vector<double>& target_params() const { return target_; }
  const AdamState& adam() const { return adam_; }
  const LagrangeState& lagrange() const { return lagrange_; }
  double lambda() const { return current_lambda(); }
  std::uint64_t step_count() const { return step_; }
  const ReplayBuffer& replay() const { return replay_; }
  const Rng& env_rng() const { return env_rng_; }

  // Pretraining, target-network copy, environment setup, random warm-up.
  void prepare() {
    if (prepared_) return;
    Rng pre_rng = make_stream(opt_.seed, 5);
    if (opt_.pretrain.steps > 0) pretrain_classifier(net_, data_, opt_.pretrain, pre_rng);
    target_ = net_.params;
    envs_.clear();
    for (std::size_t i = 0; i < opt_.n_envs; ++i) {
      envs_.emplace_back(data_, SplitId::Train, budget_, true, opt_.loss);
      envs_.back().set_lambda(current_lambda());
      envs_.back().reset(env_rng_);
    }
    pending_.assign(opt_.n_envs, Episode{});
    greedy_weight_.assign(opt_.n_envs, 1.0);
    for (std::size_t i = 0; i < opt_.n_envs; ++i) pending_[i].sample = envs_[i].state().sample;
    const auto warm = std::max<std::size_t>(
        {static_cast<std::size_t>(opt_.warmup_fraction * static_cast<double>(opt_.memory_episodes)), 1});
    while (replay_.size() < warm || replay_.transitions() < opt_.batch_size) act_all(1.0);
    prepared_ = true;
  }

  // One iteration of the main loop: every environment takes one action, the
  // multiplier is updated (average-target mode), then one learner step.
  MetricsRow step() {
    prepare();
    const double eps = opt_.schedules.epsilon(step_);
    const double eta = opt_.schedules.eta(step_);
    std::vector<double> finished_costs, finished_weights;
    act_all(eps, &finished_costs, &finished_weights);

    if (std::holds_alternative<AverageTarget>(budget_)) {
      // The multiplier's rate follows the network's decay, raised to lambda_lr_decay.
      lagrange_.lr = lambda_lr_base_ * std::pow(lr_schedule(step_, opt_.lr) / opt_.lr.start, opt_.lambda_lr_decay);
      lambda_step(lagrange_, finished_costs,
                  opt_.lambda_greedy_cost ? finished_weights : std::vector<double>{});
      for (auto& e : envs_) e.set_lambda(lagrange_.lambda);
    } else {
      for (double c : finished_costs) lagrange_.observe(c);
    }

    const auto picks = replay_.sample(replay_rng_, opt_.batch_size);
    std::vector<const Episode*> batch;
    batch.reserve(picks.size());
    for (auto i : picks) batch.push_back(&replay_[i]);
    std::vector<double> grad;
    const auto stats = retrace_gradient(data_, budget_, true, batch, net_, target_, eta,
                                        {opt_.gamma, opt_.retrace_lambda, true}, grad, relabel_lambda());
    if (!std::isfinite(stats.loss))
      throw DivergenceError("non-finite loss at step " + std::to_string(step_));
    adam_.lr = lr_schedule(step_, opt_.lr);
    clip_and_step(adam_, net_.params, std::move(grad), opt_.max_grad_norm);
    soft_update(target_, net_.params, opt_.rho);

    MetricsRow row;
    row.step = ++step_;
    row.lambda = current_lambda();
    row.train_cost = lagrange_.window.empty() ? 0.0 : lagrange_.window_mean();
    row.loss = stats.loss / static_cast<double>(stats.transitions);
    row.epsilon = eps;
    row.eta = eta;
    row.lr = adam_.lr;
    return row;
  }

  TrainResult run(const Callback& on_eval = {}) {
    prepare();
    TrainResult result;
    double recent_loss = 0.0;
    std::uint64_t since = 0;
    while (step_ < opt_.max_steps) {
      auto row = step();
      recent_loss += row.loss;
      ++since;
      const bool last = step_ >= opt_.max_steps;
      const bool osc = std::holds_alternative<AverageTarget>(budget_) && opt_.stop_on_oscillation &&
                       oscillating(lagrange_, opt_.oscillation_window, opt_.oscillation_min_changes);
      if (step_ % opt_.eval_every == 0 || last || osc) {
        const auto val = validation();
        row.val_cost = val.mean_cost;
        row.val_accuracy = val.accuracy;
        row.loss = recent_loss / static_cast<double>(since);
        recent_loss = 0.0;
        since = 0;
        result.snapshots.push_back({step_, current_lambda(), val, net_.params});
        result.metrics.push_back(row);
        if (on_eval) on_eval(row);
      }
      if (osc) {
        result.stopped_on_oscillation = true;
        break;
      }
    }
    result.final_net = net_;
    result.final_lambda = current_lambda();
    result.steps_done = step_;
    select_best(result);
    return result;
  }

  EvalResult validation() const {
    const auto& rows = data_.split.val.empty() ? data_.split.train : data_.split.val;
    return evaluate_rows(net_, data_, rows, budget_, selection_lambda(), false, opt_.loss);
  }

  Checkpoint checkpoint() const {
    Checkpoint ck;
    ck.online = net_;
    ck.target = target_.empty() ? net_.params : target_;
    ck.adam = adam_;
    ck.meta = {{"step", step_},
               {"lambda", current_lambda()},
               {"lambda_velocity", lagrange_.velocity},
               {"epsilon", opt_.schedules.epsilon(step_)},
               {"eta", opt_.schedules.eta(step_)},
               {"rng_env", rng_state(env_rng_)},
               {"rng_act", rng_state(act_rng_)},
               {"rng_replay", rng_state(replay_rng_)},
               {"seed", opt_.seed}};
    return ck;
  }

 private:
  std::optional<double> relabel_lambda() const {
    if (opt_.lambda_relabel && std::holds_alternative<AverageTarget>(budget_)) return lagrange_.lambda;
    return std::nullopt;
  }

  double current_lambda() const {
    if (const auto* l = std::get_if<LambdaFixed>(&budget_)) return l->lambda;
    if (std::holds_alternative<AverageTarget>(budget_)) return lagrange_.lambda;
    return 0.0;
  }

  // Lambda-mode snapshots are ranked by validation reward, which needs the
  // user's lambda; other modes rank by accuracy.
  double selection_lambda() const {
    if (const auto* l = std::get_if<LambdaFixed>(&budget_)) return l->lambda;
    return 0.0;
  }

  void select_best(TrainResult& result) const {
    auto& snaps = result.snapshots;
    if (snaps.empty()) {
      result.best_net = net_;
      return;
    }
    std::size_t best = 0;
    if (const auto* avg = std::get_if<AverageTarget>(&budget_)) {
      std::vector<SnapshotScore> scores;
      for (const auto& s : snaps) scores.push_back({s.val.mean_cost, s.val.accuracy});
      const auto choice = select_feasible_best(scores, avg->budget);
      best = choice.index;
      result.best_feasible = choice.feasible;
    } else {
      const bool by_reward = std::holds_alternative<LambdaFixed>(budget_);
      for (std::size_t i = 1; i < snaps.size(); ++i) {
        const double a = by_reward ? snaps[i].val.mean_reward : snaps[i].val.accuracy;
        const double b = by_reward ? snaps[best].val.mean_reward : snaps[best].val.accuracy;
        if (a >= b) best = i;
      }
    }
    result.best_index = best;
    result.best_net = QNetwork(net_.shape);
    result.best_net.params = snaps[best].params;
  }

  // Every environment takes one action. Finished episodes go to the replay
  // buffer and their raw costs to `finished` when given.
  // Steps every env once. For finished episodes, appends the raw cost and the
  // ratio prod 1[a = greedy] / mu(a|s) of the greedy policy to the behavior.
  void act_all(double eps, std::vector<double>* finished = nullptr, std::vector<double>* weights = nullptr) {
    const int n = data_.n_features();
    Matrix q;
    if (eps < 1.0) {
      Matrix obs(static_cast<Eigen::Index>(envs_.size()), 2 * n);
      for (std::size_t i = 0; i < envs_.size(); ++i)
        encode_into(data_, envs_[i].state(), obs.row(static_cast<Eigen::Index>(i)));
      q = forward(net_, obs);
    } else {
      q = Matrix::Zero(static_cast<Eigen::Index>(envs_.size()), net_.shape.actions);
    }
    for (std::size_t i = 0; i < envs_.size(); ++i) {
      auto& env = envs_[i];
      const auto legal = env.legal();
      const auto choice = behavior_policy(q.row(static_cast<Eigen::Index>(i)), legal, eps, act_rng_);
      const auto res = env.step(choice.action);
      auto& ep = pending_[i];
      ep.actions.push_back(choice.action);
      ep.rewards.push_back(res.reward);
      ep.mus.push_back(choice.prob);
      greedy_weight_[i] = choice.greedy ? greedy_weight_[i] / choice.prob : 0.0;
      if (res.terminal) {
        if (finished) finished->push_back(env.state().spent);
        if (weights) weights->push_back(greedy_weight_[i]);
        greedy_weight_[i] = 1.0;
        replay_.push(std::move(ep));
        env.reset(env_rng_);
        ep = Episode{};
        ep.sample = env.state().sample;
      }
    }
  }

  const Dataset& data_;
  BudgetSpec budget_;
  TrainOptions opt_;
  QNetwork net_;
  std::vector<double> target_;
  AdamState adam_;
  LagrangeState lagrange_;
  double lambda_lr_base_ = 0.0;
  ReplayBuffer replay_;
  std::vector<Environment> envs_;
  std::vector<Episode> pending_;
  std::vector<double> greedy_weight_;
  Rng init_rng_, env_rng_, act_rng_, replay_rng_;
  std::uint64_t step_ = 0;
  bool prepared_ = false;
};

inline TrainResult train(const Dataset& data, const BudgetSpec& budget, const TrainOptions& opt,
                         const Trainer::Callback& on_eval = {}) {
  Trainer t(data, budget, opt);
  return t.run(on_eval);
}

}  // namespace cwcf

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "cwcf/common.hpp"
#include "cwcf/data.hpp"
#include "cwcf/env.hpp"
#include "cwcf/net.hpp"

namespace cwcf {

// ---------------------------------------------------------------------------
// Policies

// Greedy action over legal entries; ties go to the lowest index.
template <typename Row>
int masked_argmax(const Row& q, const ActionMask& legal) {
  int best = -1;
  double best_q = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < legal.size(); ++a) {
    if (!legal[a]) continue;
    const double v = q(static_cast<Eigen::Index>(a));
    if (best < 0 || v > best_q) {
      best = static_cast<int>(a);
      best_q = v;
    }
  }
  if (best < 0) throw std::logic_error("no legal action");
  return best;
}

inline std::size_t count_legal(const ActionMask& legal) {
  return static_cast<std::size_t>(std::count(legal.begin(), legal.end(), std::uint8_t{1}));
}

struct BehaviorChoice {
  int action = 0;
  double prob = 1.0;  // mu(a|s)
  bool greedy = true;
};

// Epsilon-greedy over legal actions. Returns the exact probability with which
// the chosen action would be drawn.
template <typename Row>
BehaviorChoice behavior_policy(const Row& q, const ActionMask& legal, double epsilon, Rng& rng) {
  const int greedy = masked_argmax(q, legal);
  const auto n_legal = count_legal(legal);
  int action = greedy;
  if (epsilon > 0.0 && uniform01(rng) < epsilon) {
    auto k = uniform_index(rng, n_legal);
    for (std::size_t a = 0; a < legal.size(); ++a)
      if (legal[a] && k-- == 0) {
        action = static_cast<int>(a);
        break;
      }
  }
  const double mu = epsilon / static_cast<double>(n_legal) + (action == greedy ? 1.0 - epsilon : 0.0);
  return {action, mu, action == greedy};
}

// eta-greedy distribution: eta spread uniformly over legal actions, the rest
// on the greedy one. Illegal actions get probability 0.
template <typename Row>
Vector target_policy_probs(const Row& q, const ActionMask& legal, double eta) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw ValidationError("eta must lie in [0,1]");
  const int greedy = masked_argmax(q, legal);
  const double share = eta / static_cast<double>(count_legal(legal));
  Vector pi = Vector::Zero(static_cast<Eigen::Index>(legal.size()));
  for (std::size_t a = 0; a < legal.size(); ++a)
    if (legal[a]) pi[static_cast<Eigen::Index>(a)] = share;
  pi[greedy] += 1.0 - eta;
  return pi;
}

// ---------------------------------------------------------------------------
// Retrace

struct RetraceStep {
  double reward = 0.0;
  int action = 0;
  double mu = 1.0;
};

struct RetraceOptions {
  double gamma = 1.0;
  double trace_lambda = 1.0;
  bool clip_at_zero = true;
};

// Targets for one finished episode in a single backward sweep. Row t of
// q_target holds Q^phi(s_t, .) and row t of pi holds pi(.|s_t); the state
// after the last step is terminal with value 0. When clipping is on, each
// target is capped at 0 and the capped value feeds the step before it.
inline std::vector<double> retrace_targets(std::span<const RetraceStep> steps, const Matrix& q_target,
                                           const Matrix& pi, const RetraceOptions& opt = {}) {
  const auto T = steps.size();
  if (static_cast<std::size_t>(q_target.rows()) < T || static_cast<std::size_t>(pi.rows()) < T)
    throw ShapeError("retrace: one Q row and one policy row per step required");
  for (std::size_t t = 0; t < T; ++t)
    if (!(steps[t].mu > 0.0))
      throw DataCorruptionError("retrace: behavior probability of taken action is " + std::to_string(steps[t].mu) +
                                " at step " + std::to_string(t));
  std::vector<double> q(T);
  for (std::size_t i = T; i-- > 0;) {
    double target = steps[i].reward;
    if (i + 1 < T) {
      const auto n = static_cast<Eigen::Index>(i + 1);
      const int a_next = steps[i + 1].action;
      const double expected = pi.row(n).dot(q_target.row(n));
      const double ratio = std::min(1.0, pi(n, a_next) / steps[i + 1].mu);
      target += opt.gamma * expected + opt.gamma * opt.trace_lambda * ratio * (q[i + 1] - q_target(n, a_next));
    }
    q[i] = opt.clip_at_zero ? std::min(target, 0.0) : target;
  }
  return q;
}

// ---------------------------------------------------------------------------
// Replay

// A stored episode keeps only the sample index and the decisions; states are
// rebuilt from the dataset when the episode is replayed.
struct Episode {
  std::size_t sample = 0;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<double> mus;

  std::size_t size() const { return actions.size(); }
};

// Fully materialized transition, for inspection and tests.
struct Transition {
  Observation obs;
  int action = 0;
  double reward = 0.0;
  std::optional<Observation> next;  // nullopt = terminal
  double mu = 1.0;
  ActionMask legal;
  ActionMask next_legal;
};

inline void check_episode(const Dataset& d, const Episode& e) {
  if (e.actions.empty() || e.actions.size() != e.rewards.size() || e.actions.size() != e.mus.size())
    throw DataCorruptionError("malformed episode record");
  for (std::size_t t = 0; t + 1 < e.actions.size(); ++t)
    if (!is_feature_action(d, e.actions[t])) throw DataCorruptionError("classification inside an episode");
  if (!is_class_action(d, e.actions.back())) throw DataCorruptionError("episode does not end in classification");
}

// Replays an episode and calls fn(t, state) at each decision point.
template <typename Fn>
void replay_states(const Dataset& d, const Episode& e, Fn&& fn) {
  EnvState s;
  s.sample = e.sample;
  s.label = d.labels[e.sample];
  s.acquired.assign(static_cast<std::size_t>(d.n_features()), 0);
  for (std::size_t t = 0; t < e.size(); ++t) {
    fn(t, static_cast<const EnvState&>(s));
    const int a = e.actions[t];
    if (is_feature_action(d, a)) {
      s.acquired[static_cast<std::size_t>(a)] = 1;
      s.spent += d.costs[static_cast<std::size_t>(a)];
    }
  }
}

inline std::vector<Transition> materialize(const Dataset& d, const Episode& e, const BudgetSpec& budget,
                                           bool respect_missing) {
  check_episode(d, e);
  std::vector<Transition> out(e.size());
  replay_states(d, e, [&](std::size_t t, const EnvState& s) {
    out[t].obs = observe(d, s);
    out[t].legal = legal_actions(d, s, budget, respect_missing);
    out[t].action = e.actions[t];
    out[t].reward = e.rewards[t];
    out[t].mu = e.mus[t];
    if (t > 0) {
      out[t - 1].next = out[t].obs;
      out[t - 1].next_legal = out[t].legal;
    }
  });
  return out;
}

// Circular store of whole episodes; the oldest is evicted first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ValidationError("replay capacity must be positive");
    episodes_.reserve(std::min<std::size_t>(capacity, 1 << 16));
  }

  void push(Episode e) {
    transitions_ += e.size();
    if (episodes_.size() < capacity_) {
      episodes_.push_back(std::move(e));
    } else {
      transitions_ -= episodes_[head_].size();
      episodes_[head_] = std::move(e);
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const { return episodes_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t transitions() const { return transitions_; }
  const Episode& operator[](std::size_t i) const { return episodes_[i]; }

  // Uniformly drawn whole episodes until at least min_transitions are covered.
  std::vector<std::size_t> sample(Rng& rng, std::size_t min_transitions) const {
    if (episodes_.empty()) throw std::logic_error("sampling from an empty replay buffer");
    std::vector<std::size_t> picks;
    std::size_t covered = 0;
    while (covered < min_transitions) {
      const auto i = uniform_index(rng, episodes_.size());
      picks.push_back(i);
      covered += episodes_[i].size();
    }
    return picks;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::size_t transitions_ = 0;
  std::vector<Episode> episodes_;
};

// ---------------------------------------------------------------------------
// Schedules

struct Schedules {
  double eps_start = 1.0;
  double eps_end = 0.1;
  double eta_start = 0.5;
  double eta_end = 0.0;
  std::uint64_t steps = 2000;  // length of the exploration phase

  static double linear(double from, double to, std::uint64_t step, std::uint64_t steps) {
    if (steps == 0 || step >= steps) return to;
    return from + (to - from) * static_cast<double>(step) / static_cast<double>(steps);
  }
  double epsilon(std::uint64_t step) const { return linear(eps_start, eps_end, step, steps); }
  double eta(std::uint64_t step) const { return linear(eta_start, eta_end, step, steps); }
};

// ---------------------------------------------------------------------------
// Learner update

struct UpdateStats {
  double loss = 0.0;
  double grad_norm = 0.0;
  std::size_t transitions = 0;
  double max_target = -std::numeric_limits<double>::infinity();
};

// Builds the batch for the given episodes, computes Retrace targets with the
// online network choosing (eta-greedy pi) and the target network valuing, and
// returns the gradient of the summed squared error. With relabel_lambda set,
// stored feature rewards are replaced by -relabel_lambda * cost.
inline UpdateStats retrace_gradient(const Dataset& d, const BudgetSpec& budget, bool respect_missing,
                                    const std::vector<const Episode*>& episodes, const QNetwork& online,
                                    const std::vector<double>& target_params, double eta,
                                    const RetraceOptions& opt, std::vector<double>& grad,
                                    std::optional<double> relabel_lambda = std::nullopt) {
  std::size_t rows = 0;
  for (const auto* e : episodes) rows += e->size();
  const int n = d.n_features();
  Matrix obs(static_cast<Eigen::Index>(rows), 2 * n);
  std::vector<ActionMask> legal(rows);
  std::size_t r = 0;
  for (const auto* e : episodes) {
    replay_states(d, *e, [&](std::size_t, const EnvState& s) {
      encode_into(d, s, obs.row(static_cast<Eigen::Index>(r)));
      legal[r] = legal_actions(d, s, budget, respect_missing);
      ++r;
    });
  }

  ForwardCache cache;
  const Matrix q_online = forward(online, obs, &cache);
  QNetwork target_net{online.shape};
  target_net.params = target_params;
  const Matrix q_target = forward(target_net, obs);
  Matrix pi(static_cast<Eigen::Index>(rows), online.shape.actions);
  for (std::size_t i = 0; i < rows; ++i)
    pi.row(static_cast<Eigen::Index>(i)) =
        target_policy_probs(q_online.row(static_cast<Eigen::Index>(i)), legal[i], eta).transpose();

  UpdateStats stats;
  stats.transitions = rows;
  Matrix dq = Matrix::Zero(static_cast<Eigen::Index>(rows), online.shape.actions);
  std::size_t offset = 0;
  std::vector<RetraceStep> steps;
  for (const auto* e : episodes) {
    const auto len = e->size();
    steps.resize(len);
    for (std::size_t t = 0; t < len; ++t) {
      steps[t] = {e->rewards[t], e->actions[t], e->mus[t]};
      if (relabel_lambda && e->actions[t] < n)
        steps[t].reward = -*relabel_lambda * d.costs[static_cast<std::size_t>(e->actions[t])];
    }
    const auto off = static_cast<Eigen::Index>(offset);
    const auto cnt = static_cast<Eigen::Index>(len);
    const Matrix qt = q_target.middleRows(off, cnt);
    const Matrix p = pi.middleRows(off, cnt);
    const auto targets = retrace_targets(steps, qt, p, opt);
    for (std::size_t t = 0; t < len; ++t) {
      const auto row = off + static_cast<Eigen::Index>(t);
      const double resid = q_online(row, steps[t].action) - targets[t];
      stats.loss += resid * resid;
      dq(row, steps[t].action) = 2.0 * resid;
      stats.max_target = std::max(stats.max_target, targets[t]);
    }
    offset += len;
  }
  grad = backward(online, obs, cache, dq);
  return stats;
}

// ---------------------------------------------------------------------------
// Classifier training on masked observations

// Observation density for pretraining: p = u^3 with u ~ U(0,1), then each
// feature is observed with probability p.
inline std::vector<std::uint8_t> sample_pretrain_mask(int n, Rng& rng) {
  const double u = uniform01(rng);
  const double p = u * u * u;
  std::vector<std::uint8_t> m(static_cast<std::size_t>(n));
  for (auto& v : m) v = uniform01(rng) < p ? 1 : 0;
  return m;
}

struct ClassifierOptions {
  std::uint64_t steps = 500;
  std::size_t batch = 128;
  double lr = 1e-3;
  double max_grad_norm = 1.0;
};

using MaskFn = std::function<std::vector<std::uint8_t>(std::size_t sample, Rng&)>;

// Regresses classification outputs toward their terminal rewards (0 for the
// true class, -1 otherwise). Feature-action outputs carry no loss. Returns
// the mean per-sample loss of the last batch.
inline double train_classifier(QNetwork& net, const Dataset& d, const MaskFn& mask_fn,
                               const ClassifierOptions& opt, Rng& rng) {
  const auto& rows = d.split.train;
  if (rows.empty()) throw ValidationError("empty train split");
  const int n = d.n_features();
  AdamState adam(net.n_params(), opt.lr);
  double last = 0.0;
  Matrix obs(static_cast<Eigen::Index>(opt.batch), 2 * n);
  std::vector<std::size_t> picked(opt.batch);
  EnvState s;
  for (std::uint64_t step = 0; step < opt.steps; ++step) {
    for (std::size_t b = 0; b < opt.batch; ++b) {
      const auto sample = rows[uniform_index(rng, rows.size())];
      picked[b] = sample;
      s.sample = sample;
      s.acquired = mask_fn(sample, rng);
      encode_into(d, s, obs.row(static_cast<Eigen::Index>(b)));
    }
    ForwardCache cache;
    const Matrix q = forward(net, obs, &cache);
    Matrix dq = Matrix::Zero(q.rows(), q.cols());
    double loss = 0.0;
    for (std::size_t b = 0; b < opt.batch; ++b) {
      const auto bi = static_cast<Eigen::Index>(b);
      for (int c = 0; c < d.n_classes; ++c) {
        const double target = c == d.labels[picked[b]] ? 0.0 : -1.0;
        const double resid = q(bi, n + c) - target;
        loss += resid * resid;
        dq(bi, n + c) = 2.0 * resid;
      }
    }
    clip_and_step(adam, net.params, backward(net, obs, cache, dq), opt.max_grad_norm);
    last = loss / static_cast<double>(opt.batch);
  }
  return last;
}

// Random-state pretraining of the classification head; absent features are
// never observed.
inline double pretrain_classifier(QNetwork& net, const Dataset& d, const ClassifierOptions& opt, Rng& rng) {
  MaskFn mask = [&d](std::size_t sample, Rng& r) {
    auto m = sample_pretrain_mask(d.n_features(), r);
    for (int j = 0; j < d.n_features(); ++j)
      if (!d.present(static_cast<Eigen::Index>(sample), j)) m[static_cast<std::size_t>(j)] = 0;
    return m;
  };
  return train_classifier(net, d, mask, opt, rng);
}

}  // namespace cwcf

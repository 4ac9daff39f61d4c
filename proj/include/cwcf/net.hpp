#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "cwcf/common.hpp"
#include "cwcf/io.hpp"

namespace cwcf {

// Dueling Q-network: three ReLU layers of equal width over the 2n-wide
// observation encoding, then a scalar value head and an |A|-wide advantage
// head combined as Q = V + A - mean(A).
struct NetShape {
  int inputs = 0;
  int hidden = 0;
  int actions = 0;

  bool operator==(const NetShape&) const = default;
};

// Offsets of each weight block inside the flat parameter vector. Weight
// matrices are row-major [out x in].
struct ParamLayout {
  struct Block {
    std::size_t offset, rows, cols;
    std::size_t size() const { return rows * cols; }
  };
  Block w1, b1, w2, b2, w3, b3, wv, bv, wa, ba;
  std::size_t total = 0;

  explicit ParamLayout(const NetShape& s) {
    const auto in = static_cast<std::size_t>(s.inputs), h = static_cast<std::size_t>(s.hidden),
               k = static_cast<std::size_t>(s.actions);
    auto next = [this](std::size_t rows, std::size_t cols) {
      Block b{total, rows, cols};
      total += rows * cols;
      return b;
    };
    w1 = next(h, in);
    b1 = next(h, 1);
    w2 = next(h, h);
    b2 = next(h, 1);
    w3 = next(h, h);
    b3 = next(h, 1);
    wv = next(1, h);
    bv = next(1, 1);
    wa = next(k, h);
    ba = next(k, 1);
  }
};

using ConstMatMap = Eigen::Map<const Matrix>;
using MatMap = Eigen::Map<Matrix>;
using ConstRowMap = Eigen::Map<const Eigen::RowVectorXd>;
using RowMap = Eigen::Map<Eigen::RowVectorXd>;

inline ConstMatMap view(const std::vector<double>& p, const ParamLayout::Block& b) {
  return {p.data() + b.offset, static_cast<Eigen::Index>(b.rows), static_cast<Eigen::Index>(b.cols)};
}
inline MatMap view(std::vector<double>& p, const ParamLayout::Block& b) {
  return {p.data() + b.offset, static_cast<Eigen::Index>(b.rows), static_cast<Eigen::Index>(b.cols)};
}
inline ConstRowMap row_view(const std::vector<double>& p, const ParamLayout::Block& b) {
  return {p.data() + b.offset, static_cast<Eigen::Index>(b.size())};
}
inline RowMap row_view(std::vector<double>& p, const ParamLayout::Block& b) {
  return {p.data() + b.offset, static_cast<Eigen::Index>(b.size())};
}

// Y = X W^T + b
template <typename W, typename B>
Matrix affine_forward(const Matrix& x, const W& w, const B& b) {
  Matrix y = x * w.transpose();
  y.rowwise() += b;
  return y;
}

// Accumulates dW += dY^T X, db += colsum(dY); returns dX = dY W.
template <typename W, typename DW, typename DB>
Matrix affine_backward(const Matrix& x, const W& w, const Matrix& dy, DW&& dw, DB&& db) {
  dw.noalias() += dy.transpose() * x;
  db += dy.colwise().sum();
  return dy * w;
}

inline void relu_inplace(Matrix& m) { m = m.cwiseMax(0.0); }

struct ForwardCache {
  Matrix h1, h2, h3;  // post-activation
  Matrix q;
};

struct QNetwork {
  NetShape shape;
  std::vector<double> params;

  QNetwork() = default;
  explicit QNetwork(const NetShape& s) : shape(s), params(ParamLayout(s).total, 0.0) {}

  ParamLayout layout() const { return ParamLayout(shape); }
  std::size_t n_params() const { return params.size(); }

  // Glorot-uniform trunk; heads are additionally scaled by head_scale so that
  // freshly initialized Q-values sit close to zero.
  void init(Rng& rng, double head_scale = 0.01) {
    const auto l = layout();
    auto fill = [&](const ParamLayout::Block& b, double scale) {
      const double limit = scale * std::sqrt(6.0 / static_cast<double>(b.rows + b.cols));
      std::uniform_real_distribution<double> u(-limit, limit);
      for (std::size_t i = 0; i < b.size(); ++i) params[b.offset + i] = u(rng);
    };
    std::fill(params.begin(), params.end(), 0.0);
    fill(l.w1, 1.0);
    fill(l.w2, 1.0);
    fill(l.w3, 1.0);
    fill(l.wv, head_scale);
    fill(l.wa, head_scale);
  }
};

// Returns the trunk output and the raw value/advantage heads.
struct HeadOutputs {
  Vector value;
  Matrix advantage;
};

inline Matrix trunk_forward(const QNetwork& net, const Matrix& obs, ForwardCache& c) {
  if (obs.cols() != net.shape.inputs)
    throw ShapeError("observation width " + std::to_string(obs.cols()) + " != network input " +
                     std::to_string(net.shape.inputs));
  const auto l = net.layout();
  const auto& p = net.params;
  c.h1 = affine_forward(obs, view(p, l.w1), row_view(p, l.b1));
  relu_inplace(c.h1);
  c.h2 = affine_forward(c.h1, view(p, l.w2), row_view(p, l.b2));
  relu_inplace(c.h2);
  c.h3 = affine_forward(c.h2, view(p, l.w3), row_view(p, l.b3));
  relu_inplace(c.h3);
  return c.h3;
}

inline HeadOutputs heads_forward(const QNetwork& net, const Matrix& h3) {
  const auto l = net.layout();
  const auto& p = net.params;
  HeadOutputs out;
  out.value = (h3 * row_view(p, l.wv).transpose()).array() + p[l.bv.offset];
  out.advantage = affine_forward(h3, view(p, l.wa), row_view(p, l.ba));
  return out;
}

inline Matrix combine_dueling(const Vector& value, const Matrix& advantage) {
  Matrix q = advantage;
  const Vector mean = advantage.rowwise().mean();
  q.colwise() += value - mean;
  return q;
}

inline Matrix forward(const QNetwork& net, const Matrix& obs, ForwardCache* cache = nullptr) {
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  trunk_forward(net, obs, c);
  const auto heads = heads_forward(net, c.h3);
  c.q = combine_dueling(heads.value, heads.advantage);
  return c.q;
}

// Gradient of an arbitrary scalar loss given dLoss/dQ for every output.
inline std::vector<double> backward(const QNetwork& net, const Matrix& obs, const ForwardCache& c,
                                    const Matrix& dq) {
  if (dq.rows() != obs.rows() || dq.cols() != net.shape.actions) throw ShapeError("dQ shape mismatch");
  const auto l = net.layout();
  const auto& p = net.params;
  std::vector<double> g(p.size(), 0.0);

  const double k = static_cast<double>(net.shape.actions);
  const Vector dv = dq.rowwise().sum();
  Matrix da = dq;
  da.colwise() -= dv / k;

  row_view(g, l.wv).noalias() += dv.transpose() * c.h3;
  g[l.bv.offset] += dv.sum();
  Matrix dh3 = affine_backward(c.h3, view(p, l.wa), da, view(g, l.wa), row_view(g, l.ba));
  dh3.noalias() += dv * row_view(p, l.wv);

  Matrix dz3 = dh3.cwiseProduct((c.h3.array() > 0.0).cast<double>().matrix());
  Matrix dh2 = affine_backward(c.h2, view(p, l.w3), dz3, view(g, l.w3), row_view(g, l.b3));
  Matrix dz2 = dh2.cwiseProduct((c.h2.array() > 0.0).cast<double>().matrix());
  Matrix dh1 = affine_backward(c.h1, view(p, l.w2), dz2, view(g, l.w2), row_view(g, l.b2));
  Matrix dz1 = dh1.cwiseProduct((c.h1.array() > 0.0).cast<double>().matrix());
  affine_backward(obs, view(p, l.w1), dz1, view(g, l.w1), row_view(g, l.b1));
  return g;
}

// Summed squared error sum_i (q_i - Q(s_i, a_i))^2 with the targets held
// constant. Returns the loss; writes the gradient.
inline double squared_error_gradient(const QNetwork& net, const Matrix& obs, const std::vector<int>& actions,
                                     const std::vector<double>& targets, std::vector<double>& grad) {
  if (actions.size() != static_cast<std::size_t>(obs.rows()) || targets.size() != actions.size())
    throw ShapeError("one action and one target per observation required");
  ForwardCache c;
  forward(net, obs, &c);
  Matrix dq = Matrix::Zero(obs.rows(), net.shape.actions);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < obs.rows(); ++i) {
    const auto a = actions[static_cast<std::size_t>(i)];
    if (a < 0 || a >= net.shape.actions) throw ShapeError("action index out of range");
    const double r = c.q(i, a) - targets[static_cast<std::size_t>(i)];
    loss += r * r;
    dq(i, a) = 2.0 * r;
  }
  grad = backward(net, obs, c, dq);
  return loss;
}

// ---------------------------------------------------------------------------
// Optimization

struct AdamState {
  std::vector<double> m, v;
  std::uint64_t step = 0;
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t n, double learning_rate = 5e-4) : m(n, 0.0), v(n, 0.0), lr(learning_rate) {}
};

inline double l2_norm(const std::vector<double>& g) {
  double s = 0.0;
  for (double x : g) s += x * x;
  return std::sqrt(s);
}

// Rescales g to max_norm when its norm exceeds it, then applies one Adam
// update. Returns the norm before clipping.
inline double clip_and_step(AdamState& adam, std::vector<double>& params, std::vector<double> grad,
                            double max_norm = 1.0) {
  if (!(max_norm > 0.0)) throw ValidationError("max_norm must be positive");
  if (grad.size() != params.size() || adam.m.size() != params.size()) throw ShapeError("optimizer shape mismatch");
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!std::isfinite(grad[i]))
      throw DivergenceError("non-finite gradient at parameter " + std::to_string(i) + " (optimizer step " +
                            std::to_string(adam.step) + ")");
  const double norm = l2_norm(grad);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& x : grad) x *= scale;
  }
  ++adam.step;
  const double t = static_cast<double>(adam.step);
  const double c1 = 1.0 - std::pow(adam.beta1, t);
  const double c2 = 1.0 - std::pow(adam.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    adam.m[i] = adam.beta1 * adam.m[i] + (1.0 - adam.beta1) * grad[i];
    adam.v[i] = adam.beta2 * adam.v[i] + (1.0 - adam.beta2) * grad[i] * grad[i];
    params[i] -= adam.lr * (adam.m[i] / c1) / (std::sqrt(adam.v[i] / c2) + adam.eps);
  }
  return norm;
}

// phi := (1 - rho) phi + rho theta
inline void soft_update(std::vector<double>& target, const std::vector<double>& online, double rho) {
  if (target.size() != online.size()) throw ShapeError("target/online parameter shape mismatch");
  if (!(rho > 0.0 && rho <= 1.0)) throw ValidationError("rho must lie in (0, 1]");
  if (rho == 1.0) {
    target = online;
    return;
  }
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = (1.0 - rho) * target[i] + rho * online[i];
}

struct LrSchedule {
  double start = 5e-4;
  double min = 5e-7;
  double scale = 0.5;
  std::uint64_t period = 1000;
};

inline double lr_schedule(std::uint64_t step, const LrSchedule& s) {
  if (s.period == 0) throw ValidationError("learning-rate period must be positive");
  const double decays = static_cast<double>(step / s.period);
  return std::max(s.min, s.start * std::pow(s.scale, decays));
}

// ---------------------------------------------------------------------------
// Checkpoint: io container with magic "CWCFCKPT". The JSON header holds the
// architecture, optimizer scalars and any caller metadata (schedule counters,
// RNG state, controller state); the payload is theta, phi, adam.m, adam.v.

inline constexpr io::Magic kCheckpointMagic{'C', 'W', 'C', 'F', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  QNetwork online;
  std::vector<double> target;
  AdamState adam;
  nlohmann::json meta = nlohmann::json::object();
};

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const auto n = ck.online.n_params();
  if (ck.target.size() != n || ck.adam.m.size() != n || ck.adam.v.size() != n)
    throw ShapeError("checkpoint blocks disagree in size");
  nlohmann::json header{{"inputs", ck.online.shape.inputs},
                        {"hidden", ck.online.shape.hidden},
                        {"actions", ck.online.shape.actions},
                        {"n_params", n},
                        {"adam",
                         {{"step", ck.adam.step},
                          {"lr", ck.adam.lr},
                          {"beta1", ck.adam.beta1},
                          {"beta2", ck.adam.beta2},
                          {"eps", ck.adam.eps}}},
                        {"meta", ck.meta}};
  io::Writer w(path);
  w.header(kCheckpointMagic, kCheckpointVersion, header);
  w.block(ck.online.params);
  w.block(ck.target);
  w.block(ck.adam.m);
  w.block(ck.adam.v);
  w.close();
}

inline Checkpoint load_checkpoint(const std::string& path) {
  io::Reader r(path);
  const auto h = r.header(kCheckpointMagic, kCheckpointVersion);
  Checkpoint ck;
  ck.online = QNetwork(NetShape{h.at("inputs").get<int>(), h.at("hidden").get<int>(), h.at("actions").get<int>()});
  const auto n = h.at("n_params").get<std::size_t>();
  if (n != ck.online.n_params()) throw ParseError(path + ": parameter count does not match architecture");
  r.block(ck.online.params.data(), n);
  ck.target = r.block<double>(n);
  ck.adam.m = r.block<double>(n);
  ck.adam.v = r.block<double>(n);
  const auto& a = h.at("adam");
  ck.adam.step = a.at("step").get<std::uint64_t>();
  ck.adam.lr = a.at("lr").get<double>();
  ck.adam.beta1 = a.at("beta1").get<double>();
  ck.adam.beta2 = a.at("beta2").get<double>();
  ck.adam.eps = a.at("eps").get<double>();
  ck.meta = h.at("meta");
  return ck;
}

inline std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline void restore_rng(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw ParseError("corrupt RNG state");
}

}  // namespace cwcf

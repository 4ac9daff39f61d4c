#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"

using namespace cwcf;
using testing_util::random_net;

namespace {

Matrix random_obs(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

// Plain reference forward pass, written without the flat layout helpers.
Matrix reference_q(const QNetwork& net, const Matrix& obs) {
  const auto l = net.layout();
  auto block = [&](const ParamLayout::Block& b) {
    Matrix m(b.rows, b.cols);
    for (std::size_t i = 0; i < b.size(); ++i) m.data()[i] = net.params[b.offset + i];
    return m;
  };
  auto layer = [&](const Matrix& x, const ParamLayout::Block& w, const ParamLayout::Block& b) {
    Matrix y = x * block(w).transpose();
    for (Eigen::Index i = 0; i < y.rows(); ++i) y.row(i) += block(b).transpose();
    return y;
  };
  Matrix h = layer(obs, l.w1, l.b1).cwiseMax(0.0);
  h = layer(h, l.w2, l.b2).cwiseMax(0.0);
  h = layer(h, l.w3, l.b3).cwiseMax(0.0);
  const Matrix v = layer(h, l.wv, l.bv);
  const Matrix a = layer(h, l.wa, l.ba);
  Matrix q(obs.rows(), a.cols());
  for (Eigen::Index i = 0; i < q.rows(); ++i)
    for (Eigen::Index k = 0; k < q.cols(); ++k) q(i, k) = v(i, 0) + a(i, k) - a.row(i).mean();
  return q;
}

}  // namespace

TEST(Forward, MatchesReferenceAndDuelingIdentity) {
  const auto net = random_net(6, 8, 5, 1);
  const auto obs = random_obs(7, 6, 2);
  const Matrix q = forward(net, obs);
  EXPECT_LT((q - reference_q(net, obs)).cwiseAbs().maxCoeff(), 1e-12);
  // mean over actions equals the value head
  ForwardCache c;
  forward(net, obs, &c);
  const auto heads = heads_forward(net, c.h3);
  for (Eigen::Index i = 0; i < q.rows(); ++i) EXPECT_NEAR(q.row(i).mean(), heads.value[i], 1e-12);
}

TEST(Forward, RejectsWrongWidth) {
  const auto net = random_net(6, 8, 5, 1);
  EXPECT_THROW(forward(net, Matrix::Zero(2, 5)), ShapeError);
}

TEST(Backward, MatchesCentralDifferences) {
  auto net = random_net(4, 6, 3, 3);
  const auto obs = random_obs(5, 4, 4);
  const Matrix w = random_obs(5, 3, 5);  // loss = sum(w .* Q)
  ForwardCache c;
  forward(net, obs, &c);
  const auto g = backward(net, obs, c, w);
  const double h = 1e-5;
  for (std::size_t i = 0; i < net.params.size(); ++i) {
    const double keep = net.params[i];
    net.params[i] = keep + h;
    const double up = forward(net, obs).cwiseProduct(w).sum();
    net.params[i] = keep - h;
    const double down = forward(net, obs).cwiseProduct(w).sum();
    net.params[i] = keep;
    const double fd = (up - down) / (2 * h);
    EXPECT_NEAR(g[i], fd, 1e-6 * std::max(1.0, std::abs(fd))) << "param " << i;
  }
}

TEST(SquaredError, GradientOnlyThroughChosenActions) {
  const auto net = random_net(4, 5, 3, 8);
  const auto obs = random_obs(3, 4, 9);
  std::vector<double> g;
  const std::vector<int> actions{0, 2, 1};
  const std::vector<double> targets{0.5, -1.0, 0.0};
  const double loss = squared_error_gradient(net, obs, actions, targets, g);
  const Matrix q = forward(net, obs);
  double expect = 0.0;
  Matrix dq = Matrix::Zero(3, 3);
  for (int i = 0; i < 3; ++i) {
    const double r = q(i, actions[i]) - targets[i];
    expect += r * r;
    dq(i, actions[i]) = 2 * r;
  }
  EXPECT_NEAR(loss, expect, 1e-12);
  ForwardCache c;
  forward(net, obs, &c);
  const auto ref = backward(net, obs, c, dq);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_DOUBLE_EQ(g[i], ref[i]);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> p{1.0, -2.0, 0.0};
  AdamState adam(3, 0.1);
  clip_and_step(adam, p, {0.5, -0.25, 0.0}, 10.0);
  // bias-corrected first step is lr * sign(g) (up to eps)
  EXPECT_NEAR(p[0], 0.9, 1e-6);
  EXPECT_NEAR(p[1], -1.9, 1e-6);
  EXPECT_DOUBLE_EQ(p[2], 0.0);
  EXPECT_EQ(adam.step, 1u);
}

TEST(Adam, SecondStepMatchesHandComputation) {
  std::vector<double> p{0.0};
  AdamState adam(1, 0.01);
  clip_and_step(adam, p, {1.0}, 100.0);
  clip_and_step(adam, p, {-2.0}, 100.0);
  const double m = 0.9 * 0.1 + 0.1 * -2.0;
  const double v = 0.999 * 0.001 + 0.001 * 4.0;
  const double step2 = 0.01 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  EXPECT_NEAR(p[0], -0.01 * 1.0 / (1.0 + 1e-8) - step2, 1e-12);
}

TEST(Adam, ClipsToMaxNormAndReportsPreClipNorm) {
  std::vector<double> p{0.0, 0.0}, q{0.0, 0.0};
  AdamState a(2, 1.0), b(2, 1.0);
  const double norm = clip_and_step(a, p, {30.0, 40.0}, 1.0);
  EXPECT_DOUBLE_EQ(norm, 50.0);
  clip_and_step(b, q, {0.6, 0.8}, 1.0);
  EXPECT_NEAR(p[0], q[0], 1e-12);
  EXPECT_NEAR(a.v[1], b.v[1], 1e-15);
}

TEST(Adam, NonFiniteGradientIsReported) {
  std::vector<double> p{0.0, 0.0};
  AdamState a(2);
  try {
    clip_and_step(a, p, {0.0, std::nan("")});
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("parameter 1"), std::string::npos);
  }
}

TEST(SoftUpdate, BlendsAndValidates) {
  std::vector<double> t{0.0, 10.0};
  soft_update(t, {10.0, 0.0}, 0.1);
  EXPECT_DOUBLE_EQ(t[0], 1.0);
  EXPECT_DOUBLE_EQ(t[1], 9.0);
  soft_update(t, {3.0, 4.0}, 1.0);
  EXPECT_EQ(t, (std::vector<double>{3.0, 4.0}));
  EXPECT_THROW(soft_update(t, {1.0, 2.0}, 0.0), ValidationError);
}

TEST(LrSchedule, StepDecayWithFloor) {
  LrSchedule s{5e-4, 5e-7, 0.5, 1000};
  EXPECT_DOUBLE_EQ(lr_schedule(0, s), 5e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(999, s), 5e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(1000, s), 2.5e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(3500, s), 5e-4 / 8);
  EXPECT_DOUBLE_EQ(lr_schedule(100000, s), 5e-7);
}

TEST(Init, SmallHeadsGiveNearZeroQ) {
  QNetwork net(NetShape{20, 128, 12});
  Rng rng(3);
  net.init(rng, 0.01);
  const Matrix q = forward(net, random_obs(64, 20, 4));
  EXPECT_LT(q.cwiseAbs().maxCoeff(), 0.1);
}

TEST(Checkpoint, RoundTripsAndRejectsCorruption) {
  testing_util::TempDir dir;
  Checkpoint ck;
  ck.online = random_net(4, 3, 2, 1);
  ck.target = random_net(4, 3, 2, 2).params;
  ck.adam = AdamState(ck.online.n_params(), 1e-3);
  ck.adam.m[0] = 0.25;
  ck.adam.step = 17;
  ck.meta = {{"step", 17}};
  const auto path = (dir / "a.ckpt").string();
  save_checkpoint(ck, path);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.online.params, ck.online.params);
  EXPECT_EQ(back.online.shape, ck.online.shape);
  EXPECT_EQ(back.target, ck.target);
  EXPECT_EQ(back.adam.m, ck.adam.m);
  EXPECT_EQ(back.adam.step, 17u);
  EXPECT_EQ(back.meta["step"], 17);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  EXPECT_THROW(load_checkpoint(path), Error);
}

TEST(RngState, RestoresStream) {
  Rng a(5);
  a();
  const auto s = rng_state(a);
  const auto x = a();
  Rng b;
  restore_rng(b, s);
  EXPECT_EQ(b(), x);
}

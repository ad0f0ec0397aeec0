#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "fixtures.hpp"
#include "hybrid/linear.hpp"
#include "hybrid/probability.hpp"

using namespace hybrid;

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4}); }

double loss_of(const LinearModel& m, const Matrix& x, const Matrix& y) {
  Matrix p(x.rows, m.k);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const auto pi = softmax(linear_forward(m, x.row(i)));
    std::copy(pi.begin(), pi.end(), p.row(i).begin());
  }
  return cross_entropy(p, y);
}

}  // namespace

TEST(LinearForward, Examples) {
  LinearModel zero(4, 3);
  zero.bias = {1, 2, 3};
  const std::vector<double> z4{9, -3, 0.5, 2};
  EXPECT_EQ(linear_forward(zero, std::span<const double>(z4)), (std::vector<double>{1, 2, 3}));

  LinearModel id(2, 2);
  id.w(0, 0) = id.w(1, 1) = 1;
  const std::vector<double> z2{0.5, -1};
  EXPECT_EQ(linear_forward(id, std::span<const double>(z2)), (std::vector<double>{0.5, -1}));

  LinearModel m(2, 2);
  m.weights = {1, 2, 3, 4};
  m.bias = {0.1, -0.1};
  const std::vector<double> ones{1, 1};
  const auto u = linear_forward(m, std::span<const double>(ones));
  EXPECT_NEAR(u[0], 4.1, 1e-12);
  EXPECT_NEAR(u[1], 5.9, 1e-12);

  EXPECT_THROW(linear_forward(m, std::span<const double>(z4)), InvalidInput);
}

TEST(Softmax, Examples) {
  const std::vector<double> flat{0, 0, 0};
  for (double p : softmax(flat)) EXPECT_NEAR(p, 1.0 / 3, 1e-15);

  const double c = 17.3;
  const std::vector<double> ratio{c, c + std::numbers::ln2};
  const auto p = softmax(ratio);
  EXPECT_NEAR(p[0], 1.0 / 3, 1e-12);
  EXPECT_NEAR(p[1], 2.0 / 3, 1e-12);

  const std::vector<double> big{1000, 0};
  const auto q = softmax(big);
  // extended-precision oracle: p1 = 1 / (1 + e^1000) computed in long double
  const long double tail = std::exp(-1000.0L) / (1.0L + std::exp(-1000.0L));
  EXPECT_EQ(q[0], 1.0);
  EXPECT_NEAR(q[1], static_cast<double>(tail), 1e-300);
  EXPECT_TRUE(std::isfinite(q[0]) && std::isfinite(q[1]));

  const std::vector<double> nan{0, std::numeric_limits<double>::quiet_NaN()};
  EXPECT_THROW(softmax(nan), InvalidInput);
}

TEST(Softmax, ShiftInvariantAndArgmaxPreserving) {
  Rng rng(8);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> u(1 + rng.below(8));
    for (auto& v : u) v = rng.uniform(-50, 50);
    const double c = rng.uniform(-100, 100);
    std::vector<double> shifted(u);
    for (auto& v : shifted) v += c;
    const auto p = softmax(u), q = softmax(shifted);
    for (std::size_t i = 0; i < u.size(); ++i) ASSERT_NEAR(p[i], q[i], 1e-12);
    ASSERT_EQ(argmax(p), argmax(u));
    ASSERT_TRUE(is_distribution(p));
  }
}

TEST(CrossEntropy, Examples) {
  Matrix onehot(2, 3);
  onehot(0, 1) = onehot(1, 2) = 1;
  EXPECT_EQ(cross_entropy(onehot, onehot), 0.0);

  Matrix uniform(2, 3, 1.0 / 3);
  EXPECT_NEAR(cross_entropy(uniform, onehot), std::log(3.0), 1e-12);

  Matrix p(2, 2), y(2, 2);
  p(0, 0) = 0.5, p(0, 1) = 0.5, y(0, 0) = 1;
  p(1, 0) = 0.75, p(1, 1) = 0.25, y(1, 1) = 1;
  EXPECT_NEAR(cross_entropy(p, y), (std::log(2.0) + std::log(4.0)) / 2, 1e-12);

  Matrix wrong(1, 2), target(1, 2);
  wrong(0, 0) = 1.0;
  target(0, 1) = 1.0;
  EXPECT_NEAR(cross_entropy(wrong, target), -std::log(kLogFloor), 1e-9);
  EXPECT_THROW(cross_entropy(Matrix(2, 2), Matrix(2, 3)), InvalidInput);
}

TEST(HeadGradient, ZeroAtOptimumAndZeroInput) {
  LinearModel m(3, 2);
  Matrix x(1, 3), y(1, 2);
  y(0, 0) = 1;
  auto g = head_gradient(m, x, y);
  for (double v : g.weights) EXPECT_EQ(v, 0.0);
  EXPECT_NEAR(g.bias[0], -0.5, 1e-15);
  EXPECT_NEAR(g.bias[1], 0.5, 1e-15);

  // K = 1: the softmax is identically 1 and so matches any one-hot target.
  LinearModel single(2, 1);
  Matrix xs(2, 2, 3.0), ys(2, 1, 1.0);
  g = head_gradient(single, xs, ys);
  for (double v : g.weights) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(g.bias[0], 0.0);
}

TEST(HeadGradient, MatchesCentralDifferences) {
  Rng rng(31);
  const double h = 1e-5;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = t == 0 ? 5 : 1 + rng.below(6), d = t == 0 ? 4 : 1 + rng.below(5), k = 2 + rng.below(3);
    LinearModel m(d, k);
    for (auto& w : m.weights) w = rng.uniform(-1, 1);
    for (auto& b : m.bias) b = rng.uniform(-1, 1);
    Matrix x(n, d), y(n, k);
    for (auto& v : x.data) v = rng.uniform(-2, 2);
    for (std::size_t i = 0; i < n; ++i) y(i, rng.below(k)) = 1;
    const auto g = head_gradient(m, x, y);
    EXPECT_NEAR(g.loss, loss_of(m, x, y), 1e-12);
    for (std::size_t p = 0; p < m.weights.size() + k; ++p) {
      double& theta = p < m.weights.size() ? m.weights[p] : m.bias[p - m.weights.size()];
      const double saved = theta;
      theta = saved + h;
      const double up = loss_of(m, x, y);
      theta = saved - h;
      const double down = loss_of(m, x, y);
      theta = saved;
      const double fd = (up - down) / (2 * h);
      const double an = p < m.weights.size() ? g.weights[p] : g.bias[p - m.weights.size()];
      ASSERT_LT(rel_err(an, fd), 1e-6) << "trial " << t << " param " << p;
    }
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  AdamState s(3);
  std::vector<double> theta{1, -2, 3};
  const std::vector<double> g(3, 0.0);
  for (int i = 0; i < 5; ++i) adam_step(s, theta, g);
  EXPECT_EQ(theta, (std::vector<double>{1, -2, 3}));
  EXPECT_EQ(s.t, 5u);
}

TEST(Adam, FirstStepHandEvaluated) {
  AdamState s(1);
  std::vector<double> theta{0};
  const std::vector<double> g{1};
  adam_step(s, theta, g);
  EXPECT_EQ(s.t, 1u);
  EXPECT_NEAR(s.m[0] / (1 - 0.9), 1.0, 1e-15);
  EXPECT_NEAR(s.v[0] / (1 - 0.999), 1.0, 1e-12);
  EXPECT_NEAR(theta[0], -1e-3 / (1 + 1e-8), 1e-18);
}

TEST(Adam, MatchesScalarReference) {
  // Independent scalar recurrence.
  double m = 0, v = 0, th = 0;
  const double b1 = 0.9, b2 = 0.999, eta = 1e-3, eps = 1e-8;
  AdamState s(1);
  std::vector<double> theta{0};
  Rng rng(1);
  for (int t = 1; t <= 50; ++t) {
    const double g = t <= 2 ? 1.0 : rng.uniform(-1, 1);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    th -= eta * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    adam_step(s, theta, std::vector<double>{g});
    ASSERT_NEAR(theta[0], th, 1e-15);
    if (t == 2) EXPECT_NEAR(theta[0], -2 * eta, 1e-9);
  }
}

TEST(TrainHead, SeparableBlobs) {
  // Each class mean sits 5 sigma from the common centre (5*sqrt(2) apart).
  const double separation = 5.0 * std::numbers::sqrt2;
  double mean_acc = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto ds = fixtures::make_rotated_blobs(300, 16, 3, separation, seed);
    TrainConfig cfg;
    cfg.seed = seed;
    const auto model = train_softmax_head(ds, cfg);
    ASSERT_EQ(model.loss_history.size(), 30u);
    const double acc =
        fixtures::training_accuracy(ds, [&](FeatureVector x) { return argmax(predict_proba(model, x)); });
    if (seed == 0) EXPECT_GE(acc, 0.99);
    mean_acc += acc / 20.0;
  }
  EXPECT_GE(mean_acc, 0.99);
}

TEST(TrainHead, FirstEpochBeatsUniformLoss) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto ds = fixtures::make_rotated_blobs(300, 1280, 3, 5.0 * std::numbers::sqrt2, seed);
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.epochs = 1;
    EXPECT_LT(train_softmax_head(ds, cfg).loss_history.front(), std::log(3.0)) << "seed " << seed;
  }
}

TEST(TrainHead, DeterministicAndValidated) {
  const auto ds = fixtures::make_blobs(90, 4, 3, 3.0, 2);
  TrainConfig cfg;
  cfg.seed = 10;
  cfg.epochs = 5;
  cfg.batch_size = 7;  // leaves a partial batch
  const auto a = train_softmax_head(ds, cfg), b = train_softmax_head(ds, cfg);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.bias, b.bias);
  EXPECT_EQ(a.loss_history, b.loss_history);
  cfg.epochs = 0;
  EXPECT_THROW(train_softmax_head(ds, cfg), InvalidInput);
  cfg.epochs = 1;
  EXPECT_THROW(train_softmax_head(Dataset(4, {}, {}, {"a"}), cfg), InvalidInput);
}

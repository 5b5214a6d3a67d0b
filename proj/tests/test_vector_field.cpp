#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fd.hpp"
#include "grassflow/error.hpp"
#include "grassflow/vector_field.hpp"

using namespace grassflow;

namespace {

std::vector<int> small_widths(int d, int k) { return {d * k, 16, 16, 1}; }

}  // namespace

TEST(VectorField, ZeroParams) {
  VectorFieldParams p = field::zeros_like(field::init(3, 1, {3, 8, 1}, 1));
  Rng rng(1);
  const StiefelPoint y = geom::random_stiefel(3, 1, rng);
  const FieldEval e = field::forward(p, 0.3, y);
  EXPECT_EQ(e.potential, 0.0);
  EXPECT_EQ(e.value.matrix().norm(), 0.0);
}

TEST(VectorField, EquivarianceAndHorizontality) {
  Rng rng(2);
  for (auto [d, k] : {std::pair{3, 1}, std::pair{4, 2}, std::pair{13, 3}}) {
    const VectorFieldParams p = field::init(d, k, small_widths(d, k), 7);
    double worst = 0.0, worst_h = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const StiefelPoint y = geom::random_stiefel(d, k, rng);
      const MatrixXd q = geom::random_orthogonal(k, rng).matrix();
      const double t = rng.uniform();
      const MatrixXd v = field::forward(p, t, y).value.matrix();
      const MatrixXd vq = field::forward(p, t, StiefelPoint(y.matrix() * q)).value.matrix();
      worst = std::max(worst, (vq - v * q).norm());
      worst_h = std::max(worst_h, (y.matrix().transpose() * v).norm());
    }
    EXPECT_LT(worst, 1e-9);
    EXPECT_LT(worst_h, 1e-9);
  }
}

TEST(VectorField, PotentialGradientMatchesFiniteDifferences) {
  Rng rng(3);
  for (auto [d, k] : {std::pair{3, 1}, std::pair{5, 2}}) {
    const VectorFieldParams p = field::init(d, k, small_widths(d, k), 8);
    const MatrixXd y0 = geom::random_stiefel(d, k, rng).matrix();
    auto pot = [&](const MatrixXd& y) {
      ad::Tape t;
      const auto b = field::bind(t, p, false);
      return field::potential(b, t.constant(y), t.scalar(0.4)).scalar();
    };
    ad::Tape t;
    const auto b = field::bind(t, p, false);
    const ad::Var yv = t.leaf(y0);
    const ad::Var v = field::potential(b, yv, t.scalar(0.4));
    const MatrixXd g = t.backward(v)[yv].data;
    EXPECT_LT(fdcheck::rel_err(g, fdcheck::gradient(pot, y0)), 1e-6);
  }
}

TEST(VectorField, HorPInvariance) {
  Rng rng(4);
  const MatrixXd w = Eigen::MatrixXd::Random(6, 2);
  const MatrixXd y = geom::random_stiefel(6, 2, rng).matrix();
  const MatrixXd q = geom::random_orthogonal(2, rng).matrix();
  const MatrixXd yq = y * q;
  EXPECT_LT(((w - y * (y.transpose() * w)) - (w - yq * (yq.transpose() * w))).norm(), 1e-14);
}

TEST(VectorField, BatchedMatchesSingle) {
  Rng rng(5);
  const VectorFieldParams p = field::init(4, 2, small_widths(4, 2), 9);
  std::vector<MatrixXd> ys;
  for (int i = 0; i < 5; ++i) ys.push_back(geom::random_stiefel(4, 2, rng).matrix());
  ad::Tape t;
  const auto b = field::bind(t, p, false);
  const ad::Var out = field::evaluate(b, t.constant(BatchMatrix::stack(ys)), t.scalar(0.7));
  for (int i = 0; i < 5; ++i) {
    const MatrixXd single = field::forward(p, 0.7, StiefelPoint(ys[i])).value.matrix();
    EXPECT_LT((out.value().block(i) - single).norm(), 1e-13);
  }
}

TEST(VectorField, NonFiniteActivationNamesLayer) {
  VectorFieldParams p = field::init(3, 1, {3, 8, 8, 1}, 1);
  p.layers[1].b(0) = std::numeric_limits<double>::quiet_NaN();
  try {
    field::forward(p, 0.1, StiefelPoint(MatrixXd::Identity(3, 1)));
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos);
  }
}

TEST(ConcatSquash, Limits) {
  ConcatSquashLayer l;
  l.w = MatrixXd::Random(3, 2);
  l.b = VectorXd::Random(3);
  l.gate_w = VectorXd::Ones(3);
  l.gate_b = VectorXd::Zero(3);
  l.bias_w = VectorXd::Zero(3);
  const VectorXd x = VectorXd::Random(2);
  EXPECT_LT((field::concatsquash(l, x, 50.0) - (l.w * x + l.b)).norm(), 1e-12);
  l.w.setZero();
  l.b.setZero();
  l.bias_w = VectorXd::Random(3);
  EXPECT_EQ(field::concatsquash(l, x, 0.3), l.bias_w * 0.3);
  EXPECT_THROW(field::concatsquash(l, VectorXd::Zero(3), 0.1), ShapeError);
}

TEST(ConcatSquash, GradientsMatchFiniteDifferences) {
  const VectorFieldParams p = field::init(3, 1, {3, 4, 1}, 3);
  const ConcatSquashLayer& l = p.layers[0];
  // Pack (x, t, w, b, gate_w, gate_b, bias_w) into one vector.
  const int n = 3 + 1 + 12 + 4 * 4;
  VectorXd z(n);
  z << VectorXd::Random(3), 0.4, l.w.reshaped(), l.b, l.gate_w, l.gate_b, l.bias_w;
  const VectorXd wsum = VectorXd::LinSpaced(4, 0.5, 2.0);
  auto build = [&](ad::Tape& t, const ad::Var& zv) {
    field::Bound::Layer bl{ad::reshape(ad::slice(zv, 4, 0, 12, 1), 4, 3), ad::slice(zv, 16, 0, 4, 1),
                           ad::slice(zv, 20, 0, 4, 1), ad::slice(zv, 24, 0, 4, 1), ad::slice(zv, 28, 0, 4, 1)};
    const ad::Var y = field::concatsquash(bl, ad::slice(zv, 0, 0, 3, 1), ad::slice(zv, 3, 0, 1, 1));
    return ad::matmul(t.constant(MatrixXd(wsum.transpose())), y);
  };
  ad::Tape t;
  const ad::Var zv = t.leaf(MatrixXd(z));
  const ad::Var out = build(t, zv);
  const VectorXd direct = field::concatsquash(l, z.head(3), 0.4);
  EXPECT_NEAR(out.scalar(), wsum.dot(direct), 1e-14);
  const MatrixXd g = t.backward(out)[zv].data;
  const MatrixXd fd = fdcheck::gradient(
      [&](const MatrixXd& zz) {
        ad::Tape tt;
        return build(tt, tt.leaf(zz)).scalar();
      },
      MatrixXd(z));
  EXPECT_LT(fdcheck::rel_err(g, fd), 1e-6);
}

TEST(VectorFieldInit, DeterministicAndShaped) {
  VectorFieldParams a = field::init(3, 1, {3, 64, 64, 1}, 42);
  VectorFieldParams b = field::init(3, 1, {3, 64, 64, 1}, 42);
  const auto ea = a.entries(), eb = b.entries();
  ASSERT_EQ(ea.size(), eb.size());
  for (std::size_t i = 0; i < ea.size(); ++i) {
    EXPECT_EQ(Eigen::Map<VectorXd>(ea[i].data, ea[i].size), Eigen::Map<VectorXd>(eb[i].data, eb[i].size));
  }
  ASSERT_EQ(a.layers.size(), 3u);
  EXPECT_EQ(a.layers[0].w.rows(), 64);
  EXPECT_EQ(a.layers[0].w.cols(), 3);
  EXPECT_EQ(a.layers[2].w.rows(), 1);
  for (const auto& l : a.layers) EXPECT_EQ(l.gate_b, VectorXd::Zero(l.gate_b.size()));
  EXPECT_THROW(field::init(3, 1, {3}, 1), ConfigError);
  EXPECT_THROW(field::init(3, 1, {4, 1}, 1), ConfigError);
  EXPECT_THROW(field::init(3, 1, {3, 2}, 1), ConfigError);
}

TEST(VectorFieldInit, FanInScaling) {
  // Pre-activation of the first layer at t = 0 is (W x + b) / 2; with entries uniform(+-a),
  // a = 1/sqrt(fan_in), its variance is (|x|^2 + 1) a^2 / 3 / 4.
  double s2 = 0.0;
  int count = 0;
  const int fan_in = 39;
  VectorXd x = VectorXd::Ones(fan_in) / std::sqrt(double(fan_in));
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const VectorFieldParams p = field::init(13, 3, {39, 32, 1}, seed);
    const VectorXd y = field::concatsquash(p.layers[0], x, 0.0);
    s2 += y.squaredNorm();
    count += int(y.size());
  }
  const double expected = std::sqrt(2.0 / (3.0 * fan_in) / 4.0);
  const double got = std::sqrt(s2 / count);
  EXPECT_GT(got, 0.3 * expected);
  EXPECT_LT(got, 3.0 * expected);
}

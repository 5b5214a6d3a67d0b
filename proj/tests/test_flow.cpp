#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include <unsupported/Eigen/MatrixFunctions>

#include "fd.hpp"
#include "grassflow/error.hpp"
#include "grassflow/flow.hpp"
#include "sphere.hpp"

using namespace grassflow;

namespace {

SolverConfig tight() {
  SolverConfig c;
  c.atol = 1e-9;
  c.rtol = 1e-9;
  return c;
}

SolverConfig rk4(double dt) {
  SolverConfig c;
  c.method = SolverMethod::kRk4;
  c.fixed_dt = dt;
  return c;
}

// Horizontal part of y -> A y for skew A; its flow is y -> exp(tA) y on subspaces.
FieldFactory rotation(const MatrixXd& a) {
  return [a](ad::Tape& t) {
    const ad::Var av = t.constant(a);
    return [av](const ad::Var& y, const ad::Var&) {
      const ad::Var ay = ad::matmul(av, y);
      return ay - ad::matmul(y, ad::matmul(y, ay, true, false));
    };
  };
}

MatrixXd skew(int d, Rng& rng) {
  MatrixXd g(d, d);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  return g - g.transpose();
}

double subspace_dist(const MatrixXd& a, const MatrixXd& b) {
  return (a * a.transpose() - b * b.transpose()).norm();
}

}  // namespace

TEST(Flow, VelocityAtAnchorIsFieldCoordinates) {
  Rng rng(1);
  const VectorFieldParams p = field::init(5, 2, {10, 12, 1}, 3);
  const StiefelPoint y = geom::random_stiefel(5, 2, rng);
  const HorizontalVector zero(MatrixXd::Zero(5, 2), y);
  const MatrixXd perp = geom::complement_basis(y);
  const VectorXd expect = (perp.transpose() * field::forward(p, 0.4, y).value.matrix()).reshaped();
  EXPECT_LT((flow::chart_velocity(p, 0.4, y, zero) - expect).norm(), 1e-12);
}

TEST(Flow, ZeroParamsGiveZeroDynamics) {
  Rng rng(2);
  const VectorFieldParams p = field::zeros_like(field::init(4, 2, {8, 6, 1}, 1));
  const StiefelPoint y = geom::random_stiefel(4, 2, rng);
  const HorizontalVector eps = geom::random_horizontal(y, 0.3, rng);
  EXPECT_EQ(flow::chart_velocity(p, 0.2, y, eps).norm(), 0.0);
  EXPECT_EQ(flow::divergence(p, 0.2, y, eps), 0.0);
}

TEST(Flow, DivergenceOfLinearMapIsTrace) {
  Rng rng(3);
  MatrixXd a(6, 6);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  const VectorXd c = VectorXd::Random(6);
  const double div = flow::divergence([&](const ad::Var& cv) { return ad::matmul(cv.tape().constant(a), cv); }, c);
  EXPECT_NEAR(div, a.trace(), 1e-12);
}

TEST(Flow, DivergenceMatchesFiniteDifferences) {
  Rng rng(4);
  for (auto [d, k] : {std::pair{3, 1}, std::pair{5, 2}}) {
    const VectorFieldParams p = field::init(d, k, {d * k, 10, 10, 1}, 9);
    const StiefelPoint y = geom::random_stiefel(d, k, rng);
    const MatrixXd perp = geom::complement_basis(y);
    const HorizontalVector eps = geom::random_horizontal(y, 0.4, rng);
    const VectorXd c0 = (perp.transpose() * eps.matrix()).reshaped();
    auto vel = [&](const VectorXd& c) {
      return flow::chart_velocity(p, 0.7, y, HorizontalVector(perp * c.reshaped(d - k, k), y));
    };
    const MatrixXd j = fdcheck::jacobian(vel, c0);
    EXPECT_NEAR(flow::divergence(p, 0.7, y, eps), j.trace(), 1e-6 * (1.0 + std::abs(j.trace())));
  }
}

TEST(Flow, RotationMatchesMatrixExponential) {
  Rng rng(5);
  for (auto [d, k] : {std::pair{2, 1}, std::pair{4, 2}}) {
    const MatrixXd a = skew(d, rng);
    const StiefelPoint y0 = geom::random_stiefel(d, k, rng);
    const flow::BatchFlow r = flow::integrate(rotation(a), {y0.matrix()}, tight());
    const MatrixXd exact = (a * 1.0).exp() * y0.matrix();
    EXPECT_LT(subspace_dist(r.points[0], exact), 1e-6) << d << "," << k;
    // Rotations preserve the invariant measure.
    EXPECT_LT(std::abs(r.delta_logp(0)), 1e-6);
  }
}

TEST(Flow, ForwardThenReverseReturns) {
  Rng rng(6);
  const VectorFieldParams p = field::init(4, 2, {8, 16, 16, 1}, 5);
  std::vector<MatrixXd> pts;
  for (int i = 0; i < 8; ++i) pts.push_back(geom::random_stiefel(4, 2, rng).matrix());
  SolverConfig fwd;
  const flow::BatchFlow a = flow::integrate(flow::network(p), pts, fwd);
  SolverConfig rev = fwd;
  std::swap(rev.t0, rev.t1);
  const flow::BatchFlow b = flow::integrate(flow::network(p), a.points, rev);
  double moved = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    moved = std::max(moved, subspace_dist(a.points[i], pts[i]));
    EXPECT_LT(subspace_dist(b.points[i], pts[i]), 1e-5);
    EXPECT_NEAR(a.delta_logp(Eigen::Index(i)), -b.delta_logp(Eigen::Index(i)), 1e-5);
  }
  EXPECT_GT(moved, 1e-2);
}

TEST(Flow, BatchedMatchesSingle) {
  Rng rng(7);
  const VectorFieldParams p = field::init(3, 1, {3, 8, 1}, 2);
  std::vector<MatrixXd> pts;
  for (int i = 0; i < 5; ++i) pts.push_back(geom::random_stiefel(3, 1, rng).matrix());
  const SolverConfig cfg = rk4(0.1);
  const flow::BatchFlow all = flow::integrate(flow::network(p), pts, cfg);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const flow::BatchFlow one = flow::integrate(flow::network(p), {pts[i]}, cfg);
    EXPECT_LT((one.points[0] - all.points[i]).norm(), 1e-12);
    EXPECT_NEAR(one.delta_logp(0), all.delta_logp(Eigen::Index(i)), 1e-12);
  }
}

TEST(Flow, IdentityFlowKeepsPriorDensity) {
  Rng rng(8);
  const VectorFieldParams p = field::zeros_like(field::init(4, 2, {8, 6, 1}, 1));
  const auto prior = GrassmannGaussianPrior::isotropic(4, 2, 0.5);
  for (int i = 0; i < 5; ++i) {
    const MatrixXd y = geom::random_stiefel(4, 2, rng).matrix();
    EXPECT_NEAR(flow::log_prob(p, prior, y, SolverConfig{}), prior.log_density(y), 1e-12);
  }
}

TEST(Flow, LogProbInvariantUnderRepresentative) {
  Rng rng(9);
  const VectorFieldParams p = field::init(4, 2, {8, 12, 1}, 4);
  const auto prior = GrassmannGaussianPrior::isotropic(4, 2, 0.7);
  for (int i = 0; i < 4; ++i) {
    const MatrixXd y = geom::random_stiefel(4, 2, rng).matrix();
    const MatrixXd q = geom::random_orthogonal(2, rng).matrix();
    EXPECT_NEAR(flow::log_prob(p, prior, y, tight()), flow::log_prob(p, prior, MatrixXd(y * q), tight()), 1e-4);
  }
}

TEST(Flow, SphereDensityIsAntipodal) {
  Rng rng(10);
  const VectorFieldParams p = field::init(3, 1, {3, 12, 1}, 6);
  const auto prior = GrassmannGaussianPrior::isotropic(3, 1, 0.5);
  const MatrixXd y = geom::random_stiefel(3, 1, rng).matrix();
  EXPECT_NEAR(flow::log_prob(p, prior, y, tight()), flow::log_prob(p, prior, MatrixXd(-y), tight()), 1e-6);
}

TEST(Flow, ModelDensityNormalizesOnSphere) {
  VectorFieldParams p = field::init(3, 1, {3, 16, 16, 1}, 11);
  p.time_scale = 2.0;
  const auto prior = GrassmannGaussianPrior::isotropic(3, 1, 0.4);
  std::vector<MatrixXd> grid;
  const int n_phi = 48, n_theta = 24;
  for (int i = 0; i < n_theta; ++i) {
    for (int j = 0; j < n_phi; ++j) {
      grid.push_back(sphere::point((i + 0.5) * std::numbers::pi / n_theta, (j + 0.5) * 2.0 * std::numbers::pi / n_phi));
    }
  }
  const VectorXd lp = flow::log_prob(p, prior, grid, SolverConfig{});
  std::size_t idx = 0;
  const double total = sphere::integrate([&](const MatrixXd&) { return lp(Eigen::Index(idx++)); }, n_phi, n_theta);
  EXPECT_NEAR(total, 1.0, 0.02);
  // The flow should move mass noticeably, otherwise the check is vacuous.
  std::size_t k = 0;
  double diff = 0.0;
  for (const auto& y : grid) diff = std::max(diff, std::abs(lp(Eigen::Index(k++)) - prior.log_density(y)));
  EXPECT_GT(diff, 0.1);
}

TEST(Flow, ChangeOfVariablesMatchesFlowMapJacobian) {
  Rng rng(12);
  for (auto [d, k] : {std::pair{2, 1}, std::pair{3, 1}, std::pair{4, 2}}) {
    VectorFieldParams p = field::init(d, k, {d * k, 12, 12, 1}, 21);
    p.time_scale = 1.5;
    const auto prior = GrassmannGaussianPrior::isotropic(d, k, 0.6);
    const SolverConfig cfg = rk4(0.01);
    const MatrixXd y0 = prior.sample(rng).matrix();
    const flow::Samples s = flow::push_forward(p, prior, {y0}, cfg);
    const MatrixXd y1 = s.points[0];
    const MatrixXd perp0 = geom::complement_basis(StiefelPoint(y0));
    const MatrixXd perp1 = geom::complement_basis(StiefelPoint(y1));
    // Retraction at y0 and inverse retraction at y1 both have identity differential at the origin.
    auto map = [&](const VectorXd& u) {
      const MatrixXd start = geom::retract(y0, perp0 * u.reshaped(d - k, k));
      const MatrixXd end = flow::integrate(flow::network(p), {start}, cfg).points[0];
      return VectorXd((perp1.transpose() * geom::inverse_retract(y1, end)).reshaped());
    };
    const MatrixXd j = fdcheck::jacobian(map, VectorXd::Zero((d - k) * k), 1e-5);
    const double expect = prior.log_density(y0) - std::log(std::abs(j.determinant()));
    EXPECT_NEAR(s.log_prob(0), expect, 1e-3) << d << "," << k;
    EXPECT_GT(std::abs(std::log(std::abs(j.determinant()))), 1e-2);
  }
}

TEST(Flow, TapeRk4MatchesNumeric) {
  Rng rng(13);
  const VectorFieldParams p = field::init(4, 2, {8, 10, 1}, 8);
  std::vector<MatrixXd> pts;
  BatchMatrix start(4, 2, 3);
  for (int b = 0; b < 3; ++b) {
    pts.push_back(geom::random_stiefel(4, 2, rng).matrix());
    start.block(b) = pts.back();
  }
  SolverConfig cfg = rk4(0.25);
  cfg.t0 = 1.0;
  cfg.t1 = 0.0;
  const flow::BatchFlow num = flow::integrate(flow::network(p), pts, cfg);
  ad::Tape t;
  const flow::TapeFlow tf = flow::integrate_rk4(flow::network(field::bind(t, p, false)), t.constant(start), 1.0, 0.0, 0.25);
  for (int b = 0; b < 3; ++b) {
    EXPECT_LT((tf.points.value().block(b) - num.points[std::size_t(b)]).norm(), 1e-10);
    EXPECT_NEAR(tf.delta_logp.value().block(b)(0, 0), num.delta_logp(b), 1e-10);
  }
}

TEST(Flow, TapeRk4ParameterGradientMatchesFiniteDifferences) {
  Rng rng(14);
  VectorFieldParams p = field::init(3, 1, {3, 6, 1}, 8);
  const MatrixXd y = geom::random_stiefel(3, 1, rng).matrix();
  const MatrixXd w = MatrixXd::Random(3, 1);
  SolverConfig cfg = rk4(0.5);
  cfg.t0 = 1.0;
  cfg.t1 = 0.0;
  // Objective: <w, Y0> - delta, the shape used by the trainer.
  auto objective = [&](const VectorFieldParams& q) {
    const flow::BatchFlow r = flow::integrate(flow::network(q), {y}, cfg);
    return (w.array() * r.points[0].array()).sum() - r.delta_logp(0);
  };
  ad::Tape t;
  const field::Bound bound = field::bind(t, p, true);
  const flow::TapeFlow tf = flow::integrate_rk4(flow::network(bound), t.constant(y), 1.0, 0.0, 0.5);
  const ad::Var obj = ad::sum(ad::hadamard(tf.points, t.constant(w))) - tf.delta_logp;
  const std::vector<ad::Var> wrt = {bound.w_in, bound.layers[0].w, bound.time_scale};
  const auto grads = t.grad(obj, wrt);

  auto fd = [&](double* slot, Eigen::Index i) {
    const double keep = slot[i];
    const double h = 1e-6;
    slot[i] = keep + h;
    const double fp = objective(p);
    slot[i] = keep - h;
    const double fm = objective(p);
    slot[i] = keep;
    return (fp - fm) / (2 * h);
  };
  for (Eigen::Index i = 0; i < p.w_in.size(); ++i) {
    EXPECT_NEAR(grads[0].value().data(i), fd(p.w_in.data(), i), 1e-6);
  }
  for (Eigen::Index i = 0; i < p.layers[0].w.size(); ++i) {
    EXPECT_NEAR(grads[1].value().data.data()[i], fd(p.layers[0].w.data(), i), 1e-6);
  }
  EXPECT_NEAR(grads[2].scalar(), fd(&p.time_scale, 0), 1e-6);
}

TEST(Flow, RejectsBadConfig) {
  SolverConfig c;
  c.atol = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_solver("euler"), ConfigError);
  EXPECT_EQ(parse_solver("rk4"), SolverMethod::kRk4);
  SolverConfig s;
  s.max_steps = 1;
  s.atol = s.rtol = 1e-12;
  const VectorFieldParams p = field::init(3, 1, {3, 8, 1}, 2);
  Rng rng(1);
  EXPECT_THROW(flow::integrate(flow::network(p), {geom::random_stiefel(3, 1, rng).matrix()}, s), SolverError);
}

TEST(Flow, ConstantFieldOnCircleMatchesFineReference) {
  const VectorXd a = (VectorXd(2) << 0.8, -0.3).finished();
  FieldFactory f = [a](ad::Tape& t) {
    const ad::Var av = t.constant(MatrixXd(a));
    return [av](const ad::Var& y, const ad::Var&) { return av - ad::matmul(y, ad::matmul(y, av, true, false)); };
  };
  const MatrixXd y0 = (MatrixXd(2, 1) << std::cos(2.0), std::sin(2.0)).finished();
  // Midpoint rule with renormalization, dt = 1e-5.
  VectorXd y = y0.col(0);
  auto vel = [&](const VectorXd& v) { return VectorXd(a - v * v.dot(a)); };
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const VectorXd mid = (y + 0.5e-5 * vel(y)).normalized();
    y = (y + 1e-5 * vel(mid)).normalized();
  }
  const flow::BatchFlow r = flow::integrate(f, {y0}, tight());
  EXPECT_LT(subspace_dist(r.points[0], MatrixXd(y)), 1e-6);
}

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "grassflow/error.hpp"
#include "grassflow/prior.hpp"
#include "sphere.hpp"

using namespace grassflow;

namespace {

constexpr double kPi = std::numbers::pi;

double log_sphere_surface(int d) { return std::log(2.0) + 0.5 * d * std::log(kPi) - std::lgamma(0.5 * d); }

}  // namespace

TEST(Volumes, Examples) {
  for (int d = 1; d <= 9; ++d) EXPECT_NEAR(log_volume_stiefel(1, d), log_sphere_surface(d), 1e-13);
  EXPECT_NEAR(log_volume_stiefel(1, 2), std::log(2.0 * kPi), 1e-14);
  EXPECT_NEAR(log_volume_stiefel(1, 1), std::log(2.0), 1e-14);
  EXPECT_NEAR(log_volume_grassmann(1, 3), std::log(2.0 * kPi), 1e-14);
  EXPECT_NEAR(log_volume_grassmann(2, 3), std::log(2.0 * kPi), 1e-14);
  EXPECT_NEAR(log_volume_grassmann(1, 2), std::log(kPi), 1e-14);
  EXPECT_THROW(log_volume_stiefel(3, 2), DomainError);
  EXPECT_THROW(log_volume_grassmann(2, 2), DomainError);
}

TEST(Volumes, Identities) {
  for (int d = 2; d <= 8; ++d) {
    for (int k = 1; k < d; ++k) {
      const VolumeTable v = volume_table(k, d);
      EXPECT_NEAR(v.log_grassmann, v.log_stiefel - v.log_orthogonal, 1e-12);
      EXPECT_NEAR(log_volume_grassmann(k, d), log_volume_grassmann(d - k, d), 1e-12);
      // Closed form pi^{k(D-k)/2} Gamma_k(k/2) / Gamma_k(D/2).
      const double closed = 0.5 * k * (d - k) * std::log(kPi) + log_multivariate_gamma(k, 0.5 * k) -
                            log_multivariate_gamma(k, 0.5 * d);
      EXPECT_NEAR(log_volume_grassmann(k, d), closed, 1e-12);
    }
  }
}

TEST(Prior, RejectsBadCovariances) {
  const StiefelPoint m(MatrixXd::Identity(3, 1));
  MatrixXd u = MatrixXd::Identity(3, 3);
  u(0, 1) = 2.0;
  EXPECT_THROW(GrassmannGaussianPrior(m, u, MatrixXd::Identity(1, 1)), DomainError);
  EXPECT_THROW(GrassmannGaussianPrior(m, -MatrixXd::Identity(3, 3), MatrixXd::Identity(1, 1)), DomainError);
  EXPECT_THROW(GrassmannGaussianPrior(m, MatrixXd::Identity(2, 2), MatrixXd::Identity(1, 1)), ShapeError);
}

TEST(Prior, DegenerateSamplesMean) {
  const GrassmannGaussianPrior p = GrassmannGaussianPrior::isotropic(4, 2, 0.0);
  Rng rng(1);
  EXPECT_EQ(p.sample(rng).matrix(), MatrixXd::Identity(4, 2));
  EXPECT_THROW(p.log_density(MatrixXd::Identity(4, 2)), DomainError);
}

TEST(Prior, SamplesConcentrateSymmetricallyAroundMean) {
  const GrassmannGaussianPrior p = GrassmannGaussianPrior::isotropic(3, 1, 0.3);
  Rng rng(2);
  double angle = 0.0;
  Eigen::Vector2d offset = Eigen::Vector2d::Zero();
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const StiefelPoint y = p.sample(rng);
    EXPECT_LT(y.orthonormality_error(), 1e-10);
    angle += geom::principal_angles(y.matrix(), p.mean().matrix())(0);
    const double s = y.matrix()(0) < 0 ? -1.0 : 1.0;
    offset += s * y.matrix().bottomRows(2).col(0);
  }
  EXPECT_LT(angle / n, 0.5);
  EXPECT_LT((offset / n).norm(), 0.01);
}

TEST(Prior, DensityAtMean) {
  for (auto [d, k] : {std::pair{3, 1}, std::pair{4, 2}, std::pair{6, 3}}) {
    const double sigma = 0.3;
    const GrassmannGaussianPrior p = GrassmannGaussianPrior::isotropic(d, k, sigma);
    const double expect = log_volume_grassmann(k, d) - 0.5 * (d - k) * k * std::log(2.0 * kPi * sigma * sigma);
    EXPECT_NEAR(p.log_density(p.mean()), expect, 1e-12);
  }
  const GrassmannGaussianPrior p = GrassmannGaussianPrior::isotropic(3, 1, 0.3);
  EXPECT_NEAR(-p.log_density(p.mean()), -std::log(1.0 / 0.09), 1e-12);
}

TEST(Prior, RepresentativeInvariance) {
  Rng rng(3);
  const GrassmannGaussianPrior p13 = GrassmannGaussianPrior::isotropic(3, 1, 0.3);
  for (int i = 0; i < 50; ++i) {
    const MatrixXd y = p13.sample(rng).matrix();
    EXPECT_NEAR(p13.log_density(y), p13.log_density(MatrixXd(-y)), 1e-9);
  }
  MatrixXd u = MatrixXd::Identity(5, 5) * 0.2;
  u(0, 3) = u(3, 0) = 0.05;
  MatrixXd v(2, 2);
  v << 0.5, 0.1, 0.1, 0.3;
  const GrassmannGaussianPrior p52(geom::random_stiefel(5, 2, rng), u, v);
  for (int i = 0; i < 50; ++i) {
    const MatrixXd y = geom::random_stiefel(5, 2, rng).matrix();
    const MatrixXd q = geom::random_orthogonal(2, rng).matrix();
    EXPECT_NEAR(p52.log_density(y), p52.log_density(MatrixXd(y * q)), 1e-9);
  }
}

TEST(Prior, NormalizesOnSphere) {
  for (double sigma : {0.3, 1.0}) {
    const GrassmannGaussianPrior p = GrassmannGaussianPrior::isotropic(3, 1, sigma);
    const double mass = sphere::integrate([&](const MatrixXd& y) { return p.log_density(y); });
    EXPECT_NEAR(mass, 1.0, 0.01) << sigma;
  }
}

TEST(Prior, NormalizesOnCircle) {
  const GrassmannGaussianPrior p = GrassmannGaussianPrior::isotropic(2, 1, 0.3);
  const int n = 4000;
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    const double a = 2.0 * kPi * (i + 0.5) / n;
    MatrixXd y(2, 1);
    y << std::cos(a), std::sin(a);
    s += std::exp(p.log_density(y));
  }
  EXPECT_NEAR(s / n, 1.0, 0.01);
}

TEST(Prior, NormalizesOnGr24ByMonteCarlo) {
  // E over uniform Y of the density against the normalized invariant measure is 1.
  Rng rng(4);
  MatrixXd v(2, 2);
  v << 1.0, 0.2, 0.2, 0.6;
  const GrassmannGaussianPrior p(StiefelPoint(MatrixXd::Identity(4, 2)), 0.5 * MatrixXd::Identity(4, 4), v);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = std::exp(p.log_density(geom::random_stiefel(4, 2, rng).matrix()));
    s += w;
    s2 += w * w;
  }
  const double mean = s / n;
  const double se = std::sqrt((s2 / n - mean * mean) / n);
  EXPECT_NEAR(mean, 1.0, std::max(4.0 * se, 0.01));
}

TEST(Prior, AngleHistogramMatchesDensity) {
  const GrassmannGaussianPrior p = GrassmannGaussianPrior::isotropic(3, 1, 0.3);
  const int bins = 60;
  const double width = 0.5 * kPi / bins;
  std::vector<double> analytic(bins, 0.0);
  const int sub = 20, nphi = 16;
  double total = 0.0;
  for (int b = 0; b < bins; ++b) {
    for (int s = 0; s < sub; ++s) {
      const double th = (b + (s + 0.5) / sub) * width;
      for (int j = 0; j < nphi; ++j) {
        const double ph = 2.0 * kPi * (j + 0.5) / nphi;
        analytic[b] += std::exp(p.log_density(sphere::point(th, ph))) * std::sin(th);
      }
    }
    total += analytic[b];
  }
  std::vector<double> hist(bins, 0.0);
  Rng rng(5);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double a = geom::principal_angles(p.sample(rng).matrix(), p.mean().matrix())(0);
    hist[std::min(bins - 1, int(a / width))] += 1.0;
  }
  double tv = 0.0;
  for (int b = 0; b < bins; ++b) tv += std::abs(hist[b] / n - analytic[b] / total);
  EXPECT_LT(0.5 * tv, 0.02);
}

TEST(Prior, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  MatrixXd v(2, 2);
  v << 0.5, 0.1, 0.1, 0.3;
  for (auto [d, k] : {std::pair{3, 1}, std::pair{4, 2}, std::pair{5, 2}}) {
    const MatrixXd vv = v.topLeftCorner(k, k);
    const GrassmannGaussianPrior p(geom::random_stiefel(d, k, rng), 0.4 * MatrixXd::Identity(d, d), vv);
    for (int trial = 0; trial < 5; ++trial) {
      const MatrixXd y = p.sample(rng).matrix();
      const MatrixXd g = p.log_density_gradient(y);
      EXPECT_LT((y.transpose() * g).norm(), 1e-10);
      const StiefelPoint ys(y);
      for (int dir = 0; dir < 3; ++dir) {
        const MatrixXd e = geom::random_horizontal(ys, 1.0, rng).matrix();
        const double h = 1e-5;
        const double fd = (p.log_density(geom::retract(y, h * e)) - p.log_density(geom::retract(y, -h * e))) / (2 * h);
        const double an = (g.array() * e.array()).sum();
        EXPECT_NEAR(an, fd, 1e-6 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

#include "grassflow/prior.hpp"

#include <cmath>
#include <numbers>

#include <unsupported/Eigen/KroneckerProduct>

#include "grassflow/error.hpp"

namespace grassflow {

namespace {

constexpr double kLogPi = 1.1447298858494002;

double logsumexp(const std::vector<double>& v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

MatrixXd cholesky_or_throw(const MatrixXd& a, const char* what) {
  if (a.rows() != a.cols()) throw ShapeError(std::string(what) + " must be square");
  if (!a.isApprox(a.transpose(), 1e-12)) throw DomainError(std::string(what) + " must be symmetric");
  Eigen::LLT<MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) throw DomainError(std::string(what) + " must be positive definite");
  return llt.matrixL();
}

}  // namespace

double log_multivariate_gamma(int k, double a) {
  double s = 0.25 * k * (k - 1) * kLogPi;
  for (int j = 1; j <= k; ++j) s += std::lgamma(a - 0.5 * (j - 1));
  return s;
}

double log_volume_stiefel(int k, int d) {
  if (k < 1 || k > d) throw DomainError("log_volume_stiefel needs 1 <= k <= D");
  return k * std::numbers::ln2 + 0.5 * d * k * kLogPi - log_multivariate_gamma(k, 0.5 * d);
}

double log_volume_grassmann(int k, int d) {
  if (k < 1 || k >= d) throw DomainError("log_volume_grassmann needs 1 <= k < D");
  return log_volume_stiefel(k, d) - log_volume_stiefel(k, k);
}

VolumeTable volume_table(int k, int d) {
  VolumeTable v;
  v.log_stiefel = log_volume_stiefel(k, d);
  v.log_orthogonal = log_volume_stiefel(k, k);
  v.log_grassmann = v.log_stiefel - v.log_orthogonal;
  return v;
}

GrassmannGaussianPrior::GrassmannGaussianPrior(StiefelPoint mean, MatrixXd row_cov, MatrixXd col_cov)
    : mean_(std::move(mean)), row_cov_(std::move(row_cov)), col_cov_(std::move(col_cov)) {
  const int d = mean_.dim();
  const int k = mean_.rank();
  if (row_cov_.rows() != d || col_cov_.rows() != k) throw ShapeError("prior covariances do not match M");
  col_chol_ = cholesky_or_throw(col_cov_, "column covariance V");
  if (row_cov_.isZero(0.0)) {
    degenerate_ = true;
    row_chol_ = MatrixXd::Zero(d, d);
  } else {
    row_chol_ = cholesky_or_throw(row_cov_, "row covariance U");
  }
  volumes_ = volume_table(k, d);
  mean_perp_ = geom::complement_basis(mean_);
  basis_ = geom::horizontal_basis(mean_perp_, k);
  if (!degenerate_) {
    const MatrixXd cov = basis_.transpose() * Eigen::kroneckerProduct(col_cov_, row_cov_).eval() * basis_;
    chart_cov_.compute(cov);
    if (chart_cov_.info() != Eigen::Success) throw DomainError("projected prior covariance is singular");
    const double logdet = 2.0 * chart_cov_.matrixLLT().diagonal().array().log().sum();
    chart_log_norm_ = -0.5 * (cov.rows() * std::log(2.0 * std::numbers::pi) + logdet);
  }
}

GrassmannGaussianPrior GrassmannGaussianPrior::isotropic(int d, int k, double sigma_u, double sigma_v) {
  return GrassmannGaussianPrior(StiefelPoint(MatrixXd::Identity(d, k)), sigma_u * sigma_u * MatrixXd::Identity(d, d),
                                sigma_v * sigma_v * MatrixXd::Identity(k, k));
}

MatrixXd GrassmannGaussianPrior::sample_horizontal(Rng& rng) const {
  const int d = dim();
  const int k = rank();
  MatrixXd e(d, k);
  for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = rng.normal();
  const MatrixXd z = row_chol_ * e * col_chol_.transpose();
  const MatrixXd& m = mean_.matrix();
  return z - m * (m.transpose() * z);
}

StiefelPoint GrassmannGaussianPrior::sample(Rng& rng) const {
  return StiefelPoint(geom::retract(mean_.matrix(), sample_horizontal(rng)));
}

void GrassmannGaussianPrior::require_density() const {
  if (degenerate_) throw DomainError("prior with zero row covariance has no density");
}

double GrassmannGaussianPrior::log_normal_chart(const VectorXd& c) const {
  require_density();
  return chart_log_norm_ - 0.5 * c.dot(chart_cov_.solve(c));
}

double GrassmannGaussianPrior::log_density(const MatrixXd& y) const {
  require_density();
  const auto pre = geom::chart_preimages(mean_.matrix(), y);
  if (pre.empty()) throw ChartSingularityError("point has no chart preimage at the prior mean");
  std::vector<double> terms;
  terms.reserve(pre.size());
  for (const auto& p : pre) {
    const VectorXd c = basis_.transpose() * p.xi.reshaped();
    terms.push_back(log_normal_chart(c) - geom::quotient_jacobian_logdet(mean_.matrix(), mean_perp_, p.xi));
  }
  return volumes_.log_grassmann + logsumexp(terms);
}

MatrixXd GrassmannGaussianPrior::log_density_gradient(const MatrixXd& y) const {
  require_density();
  const int d = dim();
  const int k = rank();
  const int r = d - k;
  const int m = chart_dim();
  const auto pre = geom::chart_preimages(mean_.matrix(), y);
  if (pre.empty()) throw ChartSingularityError("point has no chart preimage at the prior mean");

  // Gradient of log J in chart coordinates, all branches in one batched tape.
  std::vector<MatrixXd> coords;
  for (const auto& p : pre) coords.push_back(basis_.transpose() * p.xi.reshaped());
  ad::Tape t;
  const ad::Var cvar = t.leaf(BatchMatrix::stack(coords));
  const ad::Var xi = ad::matmul(t.constant(mean_perp_), ad::reshape(cvar, r, k));
  std::vector<ad::Var> dirs;
  for (int j = 0; j < m; ++j) dirs.push_back(t.constant(MatrixXd(basis_.col(j).reshaped(d, k))));
  const ad::Var lj = geom::tape::quotient_jacobian_logdet(t.constant(mean_.matrix()), xi, dirs);
  const BatchMatrix dlj = t.backward(lj)[cvar];

  std::vector<double> terms;
  std::vector<MatrixXd> grads;
  for (std::size_t b = 0; b < pre.size(); ++b) {
    const VectorXd& c = coords[b];
    terms.push_back(log_normal_chart(c) - lj.value().data(0, Eigen::Index(b)));
    const VectorXd dh = -chart_cov_.solve(c) - dlj.block(int(b));
    // Chart Jacobian onto the horizontal space at X = R_M(xi); its left inverse maps
    // horizontal motion of [Y] (lifted to X) back to chart coordinates.
    const MatrixXd x = geom::retract(mean_.matrix(), pre[b].xi);
    MatrixXd jac(d * k, m);
    for (int j = 0; j < m; ++j) {
      MatrixXd dx = geom::retraction_differential(mean_.matrix(), pre[b].xi, basis_.col(j).reshaped(d, k));
      dx -= x * (x.transpose() * dx);
      jac.col(j) = dx.reshaped();
    }
    const VectorXd a = jac * (jac.transpose() * jac).ldlt().solve(dh);
    grads.push_back(a.reshaped(d, k) * pre[b].q.transpose());
  }
  const double lse = logsumexp(terms);
  MatrixXd g = MatrixXd::Zero(d, k);
  for (std::size_t b = 0; b < pre.size(); ++b) g += std::exp(terms[b] - lse) * grads[b];
  return g - y * (y.transpose() * g);
}

}  // namespace grassflow

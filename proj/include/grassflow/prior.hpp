#pragma once

#include <vector>

#include <Eigen/Dense>

#include "grassflow/geometry.hpp"
#include "grassflow/rng.hpp"

namespace grassflow {

/// log Gamma_k(a), the multivariate gamma function.
double log_multivariate_gamma(int k, double a);
/// log of 2^k pi^{Dk/2} / Gamma_k(D/2).
double log_volume_stiefel(int k, int d);
/// log V_St(k, D) - log V_St(k, k).
double log_volume_grassmann(int k, int d);

struct VolumeTable {
  double log_stiefel = 0.0;
  double log_orthogonal = 0.0;
  double log_grassmann = 0.0;
};
VolumeTable volume_table(int k, int d);

/// Matrix-variate Gaussian on the horizontal space at M, pushed onto Gr(k, D) by the
/// Cayley retraction. Densities are with respect to the normalized invariant measure.
class GrassmannGaussianPrior {
 public:
  GrassmannGaussianPrior() = default;
  /// U: D x D row covariance, V: k x k column covariance. U = 0 gives a point mass at M
  /// that can be sampled but has no density.
  GrassmannGaussianPrior(StiefelPoint mean, MatrixXd row_cov, MatrixXd col_cov);
  /// M = first k columns of I_D, U = sigma_u^2 I, V = sigma_v^2 I.
  static GrassmannGaussianPrior isotropic(int d, int k, double sigma_u, double sigma_v = 1.0);

  const StiefelPoint& mean() const { return mean_; }
  const MatrixXd& row_cov() const { return row_cov_; }
  const MatrixXd& col_cov() const { return col_cov_; }
  int dim() const { return mean_.dim(); }
  int rank() const { return mean_.rank(); }
  int chart_dim() const { return (dim() - rank()) * rank(); }
  const VolumeTable& volumes() const { return volumes_; }
  const MatrixXd& mean_complement() const { return mean_perp_; }
  bool degenerate() const { return degenerate_; }

  StiefelPoint sample(Rng& rng) const;
  /// Horizontal noise at M drawn as in sample(), before retraction.
  MatrixXd sample_horizontal(Rng& rng) const;

  double log_density(const StiefelPoint& y) const { return log_density(y.matrix()); }
  double log_density(const MatrixXd& y) const;
  /// Euclidean gradient of log_density at y; horizontal at y because the density is O(k)-invariant.
  MatrixXd log_density_gradient(const MatrixXd& y) const;

  /// Log-density of chart coordinates c (horizontal basis at M) under the projected Gaussian.
  double log_normal_chart(const VectorXd& c) const;

 private:
  void require_density() const;

  StiefelPoint mean_;
  MatrixXd row_cov_;
  MatrixXd col_cov_;
  MatrixXd row_chol_;
  MatrixXd col_chol_;
  MatrixXd mean_perp_;
  MatrixXd basis_;
  Eigen::LLT<MatrixXd> chart_cov_;
  double chart_log_norm_ = 0.0;
  VolumeTable volumes_;
  bool degenerate_ = false;
};

}  // namespace grassflow

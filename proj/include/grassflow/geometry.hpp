#pragma once

#include <vector>

#include <Eigen/Dense>

#include "grassflow/rng.hpp"
#include "grassflow/tape.hpp"

namespace grassflow {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// D x k matrix with orthonormal columns, 1 <= k < D.
class StiefelPoint {
 public:
  StiefelPoint() = default;
  /// Validates orthonormality to `tol`; throws DomainError otherwise.
  explicit StiefelPoint(MatrixXd m, double tol = 1e-10);

  const MatrixXd& matrix() const { return m_; }
  int dim() const { return int(m_.rows()); }
  int rank() const { return int(m_.cols()); }
  double orthonormality_error() const;

 private:
  MatrixXd m_;
};

/// D x k matrix with Y^T xi = 0 for its base Y.
class HorizontalVector {
 public:
  HorizontalVector() = default;
  /// Validates horizontality to `tol`; throws DomainError otherwise.
  HorizontalVector(MatrixXd m, StiefelPoint base, double tol = 1e-9);

  const MatrixXd& matrix() const { return m_; }
  const StiefelPoint& base() const { return base_; }

 private:
  MatrixXd m_;
  StiefelPoint base_;
};

class OrthogonalMatrix {
 public:
  OrthogonalMatrix() = default;
  explicit OrthogonalMatrix(MatrixXd q, double tol = 1e-10);
  const MatrixXd& matrix() const { return q_; }

 private:
  MatrixXd q_;
};

namespace geom {

/// Z - Y sym(Y^T Z): projection onto the Stiefel tangent space.
MatrixXd tangent_project(const StiefelPoint& y, const MatrixXd& z);
/// Z - Y (Y^T Z).
HorizontalVector horizontal_project(const StiefelPoint& y, const MatrixXd& z);
/// Orthonormal completion Y_perp (D x (D-k)), deterministic via Householder QR.
MatrixXd complement_basis(const StiefelPoint& y);
/// Orthonormal basis of the horizontal space as a Dk x (D-k)k matrix;
/// column i + (D-k) j is vec(Y_perp e_i e_j^T).
MatrixXd horizontal_basis(const MatrixXd& y_perp, int k);

/// Economy Cayley retraction of t * xi at the base of xi.
StiefelPoint horizontal_retract(const HorizontalVector& xi, double t = 1.0);
/// Same, on raw matrices (no validation).
MatrixXd retract(const MatrixXd& y, const MatrixXd& xi);
/// 2 (X - Y Y^T X)(I + Y^T X)^{-1}; throws ChartSingularityError when cond(I + Y^T X) > 1e12.
HorizontalVector inverse_retract(const StiefelPoint& y, const StiefelPoint& x);
MatrixXd inverse_retract(const MatrixXd& y, const MatrixXd& x);

/// K with K vec(A) = vec(A^T) for A of size rows x cols.
MatrixXd commutation_matrix(int rows, int cols);
/// Full Dk x Dk derivative of vec R_M(E) with respect to vec E.
MatrixXd retraction_jacobian(const MatrixXd& m, const MatrixXd& xi);
/// Directional derivative of R_M at xi along dxi.
MatrixXd retraction_differential(const MatrixXd& m, const MatrixXd& xi, const MatrixXd& dxi);
/// log |det(B^T B)|^{1/2}, B = DR_M(xi) H with H the horizontal basis at M.
double retraction_jacobian_logdet(const StiefelPoint& m, const HorizontalVector& xi);
/// Same Gram determinant after projecting DR_M(xi) H onto the horizontal space at
/// X = R_M(xi): the volume change of the chart xi -> [R_M(xi)] onto the Grassmannian.
double quotient_jacobian_logdet(const MatrixXd& m, const MatrixXd& m_perp, const MatrixXd& xi);

/// Dk x Dk derivative of vec R^{-1}_Y(X) with respect to vec X.
MatrixXd inverse_retraction_derivative(const StiefelPoint& y, const StiefelPoint& x);
/// 2 P (Z - X N^{-1} Y^T Z) N^{-1} with P = I - Y Y^T, N = I + Y^T X.
MatrixXd inverse_retraction_differential(const MatrixXd& y, const MatrixXd& x, const MatrixXd& z);
/// Chart velocity at y of a subspace moving through x with horizontal velocity z. For k > 1 the
/// vertical part of the representative's velocity is chosen so the path stays in the image of
/// the retraction (Y^T X symmetric); for k = 1 this equals inverse_retraction_differential.
MatrixXd chart_differential(const MatrixXd& y, const MatrixXd& x, const MatrixXd& z);

/// Classical Gram-Schmidt with one re-orthogonalization pass.
StiefelPoint gram_schmidt(const MatrixXd& p);

/// Haar-distributed element of O(k).
OrthogonalMatrix random_orthogonal(int k, Rng& rng);
/// Uniform point of St(k, D).
StiefelPoint random_stiefel(int d, int k, Rng& rng);
/// Random horizontal vector at y with iid N(0, scale^2) entries before projection.
HorizontalVector random_horizontal(const StiefelPoint& y, double scale, Rng& rng);
/// Principal angles between span(A) and span(B), ascending.
VectorXd principal_angles(const MatrixXd& a, const MatrixXd& b);

/// All chart points xi with [R_M(xi)] = [Y]: xi_d = R^{-1}_M(Y Q_d), Q_d = W diag(d) U^T for the
/// SVD M^T Y = U S W^T and d in {+1,-1}^k. Sign patterns with a singular chart are skipped.
struct ChartPreimage {
  MatrixXd xi;
  MatrixXd q;
};
std::vector<ChartPreimage> chart_preimages(const MatrixXd& m, const MatrixXd& y);

}  // namespace geom

namespace geom::tape {

// Batched tape versions (Y, xi are D x k per batch element).
ad::Var horizontal_project(const ad::Var& y, const ad::Var& z);
ad::Var retract(const ad::Var& y, const ad::Var& xi);
ad::Var retraction_differential(const ad::Var& y, const ad::Var& xi, const ad::Var& dxi);
ad::Var inverse_retraction_differential(const ad::Var& y, const ad::Var& x, const ad::Var& z);
ad::Var chart_differential(const ad::Var& y, const ad::Var& x, const ad::Var& z);
/// Quotient Jacobian log-determinant of the chart at y, given an orthonormal horizontal
/// basis at y as a list of D x k directions.
ad::Var quotient_jacobian_logdet(const ad::Var& y, const ad::Var& xi, const std::vector<ad::Var>& directions);

}  // namespace geom::tape

}  // namespace grassflow

#include "grassflow/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <unsupported/Eigen/KroneckerProduct>

#include "grassflow/error.hpp"

namespace grassflow {

namespace {

void check_shape(const char* op, const MatrixXd& a, const MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

double condition_number(const MatrixXd& a) {
  Eigen::JacobiSVD<MatrixXd> svd(a);
  const auto& s = svd.singularValues();
  const double smin = s(s.size() - 1);
  return smin > 0.0 ? s(0) / smin : std::numeric_limits<double>::infinity();
}

MatrixXd sym(const MatrixXd& a) { return 0.5 * (a + a.transpose()); }

}  // namespace

StiefelPoint::StiefelPoint(MatrixXd m, double tol) : m_(std::move(m)) {
  if (m_.cols() < 1 || m_.cols() >= m_.rows()) {
    throw DomainError("Stiefel point needs 1 <= k < D, got " + std::to_string(m_.rows()) + "x" +
                      std::to_string(m_.cols()));
  }
  const double err = orthonormality_error();
  if (!(err <= tol)) throw DomainError("matrix is not orthonormal (|Y^T Y - I| = " + std::to_string(err) + ")");
}

double StiefelPoint::orthonormality_error() const {
  return (m_.transpose() * m_ - MatrixXd::Identity(m_.cols(), m_.cols())).norm();
}

HorizontalVector::HorizontalVector(MatrixXd m, StiefelPoint base, double tol) : m_(std::move(m)), base_(std::move(base)) {
  check_shape("horizontal vector", m_, base_.matrix());
  const double err = (base_.matrix().transpose() * m_).norm();
  if (!(err <= tol)) throw DomainError("vector is not horizontal (|Y^T xi| = " + std::to_string(err) + ")");
}

OrthogonalMatrix::OrthogonalMatrix(MatrixXd q, double tol) : q_(std::move(q)) {
  if (q_.rows() != q_.cols()) throw ShapeError("orthogonal matrix must be square");
  const double err = (q_.transpose() * q_ - MatrixXd::Identity(q_.rows(), q_.cols())).norm();
  if (!(err <= tol)) throw DomainError("matrix is not orthogonal");
}

namespace geom {

MatrixXd tangent_project(const StiefelPoint& y, const MatrixXd& z) {
  check_shape("tangent_project", y.matrix(), z);
  const MatrixXd& ym = y.matrix();
  return z - ym * sym(ym.transpose() * z);
}

HorizontalVector horizontal_project(const StiefelPoint& y, const MatrixXd& z) {
  check_shape("horizontal_project", y.matrix(), z);
  const MatrixXd& ym = y.matrix();
  MatrixXd h = z - ym * (ym.transpose() * z);
  // One more pass removes the roundoff left by the first.
  h -= ym * (ym.transpose() * h);
  return HorizontalVector(std::move(h), y);
}

MatrixXd complement_basis(const StiefelPoint& y) {
  const int d = y.dim();
  const int k = y.rank();
  Eigen::HouseholderQR<MatrixXd> qr(y.matrix());
  const MatrixXd q = qr.householderQ() * MatrixXd::Identity(d, d);
  return q.rightCols(d - k);
}

MatrixXd horizontal_basis(const MatrixXd& y_perp, int k) {
  return Eigen::kroneckerProduct(MatrixXd::Identity(k, k), y_perp).eval();
}

MatrixXd retract(const MatrixXd& y, const MatrixXd& xi) {
  check_shape("retract", y, xi);
  const int k = int(y.cols());
  const MatrixXd h = xi.transpose() * xi;
  const MatrixXd g = (MatrixXd::Identity(k, k) + 0.25 * h).inverse();
  return y + xi - (0.5 * y + 0.25 * xi) * (g * h);
}

StiefelPoint horizontal_retract(const HorizontalVector& xi, double t) {
  return StiefelPoint(retract(xi.base().matrix(), t * xi.matrix()));
}

MatrixXd inverse_retract(const MatrixXd& y, const MatrixXd& x) {
  check_shape("inverse_retract", y, x);
  const int k = int(y.cols());
  const MatrixXd n = MatrixXd::Identity(k, k) + y.transpose() * x;
  const double c = condition_number(n);
  if (!(c <= 1e12)) throw ChartSingularityError("inverse_retract: cond(I + Y^T X) = " + std::to_string(c));
  const MatrixXd w = x - y * (y.transpose() * x);
  return 2.0 * n.transpose().partialPivLu().solve(w.transpose()).transpose();
}

HorizontalVector inverse_retract(const StiefelPoint& y, const StiefelPoint& x) {
  return HorizontalVector(inverse_retract(y.matrix(), x.matrix()), y);
}

MatrixXd commutation_matrix(int rows, int cols) {
  const int n = rows * cols;
  MatrixXd kmat = MatrixXd::Zero(n, n);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) kmat(j + cols * i, i + rows * j) = 1.0;
  }
  return kmat;
}

MatrixXd retraction_jacobian(const MatrixXd& m, const MatrixXd& xi) {
  check_shape("retraction_jacobian", m, xi);
  using Eigen::kroneckerProduct;
  const int d = int(m.rows());
  const int k = int(m.cols());
  const MatrixXd ik = MatrixXd::Identity(k, k);
  const MatrixXd h = xi.transpose() * xi;
  const MatrixXd g = (ik + 0.25 * h).inverse();
  const MatrixXd f = 0.5 * m + 0.25 * xi;
  // X = M + E - F G H with F = M/2 + E/4, H = E^T E, G = (I + H/4)^{-1}.
  const MatrixXd dh = (MatrixXd::Identity(k * k, k * k) + commutation_matrix(k, k)) *
                      kroneckerProduct(ik, xi.transpose()).eval();
  const MatrixXd dg = -0.25 * kroneckerProduct(g.transpose(), g).eval() * dh;
  const MatrixXd df = 0.25 * MatrixXd::Identity(d * k, d * k);
  MatrixXd dx = MatrixXd::Identity(d * k, d * k);
  dx -= kroneckerProduct((g * h).transpose(), MatrixXd::Identity(d, d)).eval() * df;
  dx -= kroneckerProduct(h.transpose(), f).eval() * dg;
  dx -= kroneckerProduct(ik, f * g).eval() * dh;
  return dx;
}

MatrixXd retraction_differential(const MatrixXd& m, const MatrixXd& xi, const MatrixXd& dxi) {
  const int k = int(m.cols());
  const MatrixXd h = xi.transpose() * xi;
  const MatrixXd g = (MatrixXd::Identity(k, k) + 0.25 * h).inverse();
  const MatrixXd f = 0.5 * m + 0.25 * xi;
  const MatrixXd dh = dxi.transpose() * xi + xi.transpose() * dxi;
  const MatrixXd dg = -0.25 * g * dh * g;
  return dxi - 0.25 * dxi * (g * h) - f * (dg * h) - (f * g) * dh;
}

double retraction_jacobian_logdet(const StiefelPoint& m, const HorizontalVector& xi) {
  const MatrixXd basis = horizontal_basis(complement_basis(m), m.rank());
  const MatrixXd b = retraction_jacobian(m.matrix(), xi.matrix()) * basis;
  return 0.5 * std::log((b.transpose() * b).determinant());
}

double quotient_jacobian_logdet(const MatrixXd& m, const MatrixXd& m_perp, const MatrixXd& xi) {
  const int d = int(m.rows());
  const int k = int(m.cols());
  const int r = d - k;
  const MatrixXd x = retract(m, xi);
  MatrixXd b(d * k, r * k);
  MatrixXd dir = MatrixXd::Zero(d, k);
  for (int j = 0; j < k; ++j) {
    for (int i = 0; i < r; ++i) {
      dir.col(j) = m_perp.col(i);
      MatrixXd dx = retraction_differential(m, xi, dir);
      dx -= x * (x.transpose() * dx);
      b.col(i + r * j) = dx.reshaped();
      dir.col(j).setZero();
    }
  }
  const Eigen::HouseholderQR<MatrixXd> qr(b);
  const double logdet = qr.matrixQR().diagonal().array().abs().log().sum();
  if (!std::isfinite(logdet)) throw NumericError("quotient Jacobian is singular");
  return logdet;
}

MatrixXd inverse_retraction_derivative(const StiefelPoint& y, const StiefelPoint& x) {
  using Eigen::kroneckerProduct;
  const MatrixXd& ym = y.matrix();
  const MatrixXd& xm = x.matrix();
  const int d = y.dim();
  const int k = y.rank();
  const MatrixXd n = MatrixXd::Identity(k, k) + ym.transpose() * xm;
  const double c = condition_number(n);
  if (!(c <= 1e12)) throw ChartSingularityError("inverse_retraction_derivative: cond(I + Y^T X) = " + std::to_string(c));
  const MatrixXd ninv = n.inverse();
  const MatrixXd p = MatrixXd::Identity(d, d) - ym * ym.transpose();
  // d[2 P X N^{-1}] = 2 P dX N^{-1} - 2 P X N^{-1} Y^T dX N^{-1}
  return 2.0 * kroneckerProduct(ninv.transpose(), p).eval() -
         2.0 * kroneckerProduct(ninv.transpose(), (p * xm * ninv * ym.transpose()).eval()).eval();
}

MatrixXd inverse_retraction_differential(const MatrixXd& y, const MatrixXd& x, const MatrixXd& z) {
  const int k = int(y.cols());
  const MatrixXd ninv = (MatrixXd::Identity(k, k) + y.transpose() * x).inverse();
  MatrixXd w = z - x * (ninv * (y.transpose() * z));
  w -= y * (y.transpose() * w);
  return 2.0 * w * ninv;
}

namespace {

// Skew solution of P W + W P = G^T - G for symmetric positive P.
MatrixXd vertical_rate(const MatrixXd& p, const MatrixXd& g) {
  const Eigen::Index k = p.rows();
  const MatrixXd eye = MatrixXd::Identity(k, k);
  const MatrixXd l = Eigen::kroneckerProduct(eye, p).eval() + Eigen::kroneckerProduct(p, eye).eval();
  const Eigen::FullPivLU<MatrixXd> lu(l);
  if (!lu.isInvertible()) throw ChartSingularityError("chart differential: singular vertical system");
  return lu.solve(MatrixXd(g.transpose() - g).reshaped()).reshaped(k, k);
}

}  // namespace

MatrixXd chart_differential(const MatrixXd& y, const MatrixXd& x, const MatrixXd& z) {
  MatrixXd zh = z - x * (x.transpose() * z);
  if (y.cols() > 1) zh += x * vertical_rate(y.transpose() * x, y.transpose() * zh);
  return inverse_retraction_differential(y, x, zh);
}

StiefelPoint gram_schmidt(const MatrixXd& p) {
  const Eigen::Index d = p.rows();
  const Eigen::Index k = p.cols();
  if (k < 1 || k >= d) throw DomainError("gram_schmidt needs 1 <= k < D");
  MatrixXd q(d, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    VectorXd v = p.col(j);
    for (int pass = 0; pass < 2; ++pass) {
      if (j > 0) v -= q.leftCols(j) * (q.leftCols(j).transpose() * v);
    }
    const double nrm = v.norm();
    if (nrm < 1e-12) throw RankDeficiencyError("gram_schmidt: column " + std::to_string(j) + " is linearly dependent");
    q.col(j) = v / nrm;
  }
  return StiefelPoint(std::move(q));
}

OrthogonalMatrix random_orthogonal(int k, Rng& rng) {
  MatrixXd a(k, k);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  Eigen::HouseholderQR<MatrixXd> qr(a);
  MatrixXd q = qr.householderQ();
  const MatrixXd r = qr.matrixQR();
  for (int j = 0; j < k; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  return OrthogonalMatrix(std::move(q));
}

StiefelPoint random_stiefel(int d, int k, Rng& rng) {
  MatrixXd a(d, k);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  Eigen::HouseholderQR<MatrixXd> qr(a);
  MatrixXd q = qr.householderQ() * MatrixXd::Identity(d, k);
  const MatrixXd r = qr.matrixQR();
  for (int j = 0; j < k; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  return StiefelPoint(std::move(q));
}

HorizontalVector random_horizontal(const StiefelPoint& y, double scale, Rng& rng) {
  MatrixXd z(y.dim(), y.rank());
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = scale * rng.normal();
  return horizontal_project(y, z);
}

VectorXd principal_angles(const MatrixXd& a, const MatrixXd& b) {
  check_shape("principal_angles", a, b);
  // Cosines from A^T B lose accuracy near 0; take sines from the residual there.
  Eigen::JacobiSVD<MatrixXd> cs(a.transpose() * b);
  Eigen::JacobiSVD<MatrixXd> sn(b - a * (a.transpose() * b));
  const VectorXd c = cs.singularValues();
  const VectorXd s = sn.singularValues();
  const Eigen::Index k = c.size();
  VectorXd ang(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double ci = std::clamp(c(i), 0.0, 1.0);
    ang(i) = ci > 0.7 ? std::asin(std::clamp(s(k - 1 - i), 0.0, 1.0)) : std::acos(ci);
  }
  return ang;
}

std::vector<ChartPreimage> chart_preimages(const MatrixXd& m, const MatrixXd& y) {
  check_shape("chart_preimages", m, y);
  const int k = int(m.cols());
  Eigen::JacobiSVD<MatrixXd> svd(m.transpose() * y, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const MatrixXd& u = svd.matrixU();
  const MatrixXd& w = svd.matrixV();
  const VectorXd& s = svd.singularValues();
  std::vector<ChartPreimage> out;
  for (unsigned pattern = 0; pattern < (1u << k); ++pattern) {
    VectorXd sign(k);
    double smin = std::numeric_limits<double>::infinity();
    double smax = 0.0;
    for (int j = 0; j < k; ++j) {
      sign(j) = (pattern >> j) & 1u ? -1.0 : 1.0;
      // M^T Y Q = U diag(s d) U^T, so I + M^T Y Q has eigenvalues 1 + s_j d_j.
      const double e = std::abs(1.0 + s(j) * sign(j));
      smin = std::min(smin, e);
      smax = std::max(smax, e);
    }
    if (!(smin > 0.0) || smax / smin > 1e12) continue;
    ChartPreimage p;
    p.q = w * sign.asDiagonal() * u.transpose();
    p.xi = inverse_retract(m, y * p.q);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace geom

namespace geom::tape {

namespace {

ad::Var identity_like(const ad::Var& v, int k) { return v.tape().constant(MatrixXd::Identity(k, k)); }

}  // namespace

ad::Var horizontal_project(const ad::Var& y, const ad::Var& z) {
  return z - ad::matmul(y, ad::matmul(y, z, true, false));
}

ad::Var retract(const ad::Var& y, const ad::Var& xi) {
  const int k = y.cols();
  const ad::Var h = ad::matmul(xi, xi, true, false);
  const ad::Var g = ad::inverse(ad::affine(h, 0.25, 0.0) + identity_like(y, k));
  const ad::Var f = ad::affine(y, 0.5, 0.0) + ad::affine(xi, 0.25, 0.0);
  return y + xi - ad::matmul(f, ad::matmul(g, h));
}

ad::Var retraction_differential(const ad::Var& y, const ad::Var& xi, const ad::Var& dxi) {
  const int k = y.cols();
  const ad::Var h = ad::matmul(xi, xi, true, false);
  const ad::Var g = ad::inverse(ad::affine(h, 0.25, 0.0) + identity_like(y, k));
  const ad::Var f = ad::affine(y, 0.5, 0.0) + ad::affine(xi, 0.25, 0.0);
  const ad::Var gh = ad::matmul(g, h);
  const ad::Var dh = ad::matmul(dxi, xi, true, false) + ad::matmul(xi, dxi, true, false);
  const ad::Var dg = ad::affine(ad::matmul(g, ad::matmul(dh, g)), -0.25, 0.0);
  return dxi - ad::affine(ad::matmul(dxi, gh), 0.25, 0.0) - ad::matmul(f, ad::matmul(dg, h)) -
         ad::matmul(ad::matmul(f, g), dh);
}

ad::Var inverse_retraction_differential(const ad::Var& y, const ad::Var& x, const ad::Var& z) {
  const int k = y.cols();
  const ad::Var ninv = ad::inverse(ad::matmul(y, x, true, false) + identity_like(y, k));
  const ad::Var w = z - ad::matmul(x, ad::matmul(ninv, ad::matmul(y, z, true, false)));
  return ad::affine(ad::matmul(horizontal_project(y, w), ninv), 2.0, 0.0);
}

ad::Var chart_differential(const ad::Var& y, const ad::Var& x, const ad::Var& z) {
  const int k = y.cols();
  ad::Var zh = z - ad::matmul(x, ad::matmul(x, z, true, false));
  if (k > 1) {
    const ad::Var p = ad::matmul(y, x, true, false);
    const ad::Var g = ad::matmul(y, zh, true, false);
    ad::Var blocks;
    for (int i = 0; i < k; ++i) {
      const ad::Var b = ad::pad(p, k * k, k * k, i * k, i * k);
      blocks = i == 0 ? b : blocks + b;
    }
    const ad::Var perm = y.tape().constant(commutation_matrix(k, k));
    const ad::Var l = blocks + ad::matmul(perm, ad::matmul(blocks, perm));
    const ad::Var w = ad::reshape(ad::matmul(ad::inverse(l), ad::vec(ad::transpose(g) - g)), k, k);
    zh = zh + ad::matmul(x, w);
  }
  return inverse_retraction_differential(y, x, zh);
}

ad::Var quotient_jacobian_logdet(const ad::Var& y, const ad::Var& xi, const std::vector<ad::Var>& directions) {
  const int d = y.rows();
  const int k = y.cols();
  const int m = int(directions.size());
  const ad::Var x = retract(y, xi);
  ad::Var b;
  for (int j = 0; j < m; ++j) {
    const ad::Var dx = retraction_differential(y, xi, directions[std::size_t(j)]);
    const ad::Var col = ad::pad(ad::vec(horizontal_project(x, dx)), d * k, m, 0, j);
    b = j == 0 ? col : b + col;
  }
  return ad::affine(ad::logdet(ad::matmul(b, b, true, false)), 0.5, 0.0);
}

}  // namespace geom::tape

}  // namespace grassflow

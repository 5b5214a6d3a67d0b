#pragma once

#include <cmath>
#include <functional>
#include <numbers>

#include <Eigen/Dense>

namespace sphere {

inline Eigen::MatrixXd point(double theta, double phi) {
  Eigen::MatrixXd y(3, 1);
  y << std::cos(theta), std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi);
  return y;
}

/// Midpoint lat-long quadrature of exp(logp) against the normalized invariant measure
/// dA / (4 pi) on the whole sphere. theta is measured from e1.
inline double integrate(const std::function<double(const Eigen::MatrixXd&)>& logp, int n_phi = 400,
                        int n_theta = 200) {
  const double dt = std::numbers::pi / n_theta;
  const double dp = 2.0 * std::numbers::pi / n_phi;
  double s = 0.0;
  for (int i = 0; i < n_theta; ++i) {
    const double th = (i + 0.5) * dt;
    for (int j = 0; j < n_phi; ++j) {
      const double ph = (j + 0.5) * dp;
      s += std::exp(logp(point(th, ph))) * std::sin(th) * dt * dp;
    }
  }
  return s / (4.0 * std::numbers::pi);
}

}  // namespace sphere

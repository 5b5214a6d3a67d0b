#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "grassflow/geometry.hpp"
#include "grassflow/prior.hpp"
#include "grassflow/tape.hpp"
#include "grassflow/vector_field.hpp"

namespace grassflow {

enum class SolverMethod { kDopri5, kRk4 };

SolverMethod parse_solver(const std::string& name);
const char* solver_name(SolverMethod m);

struct SolverConfig {
  SolverMethod method = SolverMethod::kDopri5;
  double atol = 1e-5;
  double rtol = 1e-5;
  double t0 = 0.0;
  double t1 = 1.0;
  int max_steps = 10000;
  double fixed_dt = 0.05;
  int chunk = 512;  // batch elements integrated together (they share adaptive steps)

  void validate() const;
};

struct FlowState {
  MatrixXd point;
  double delta_logp = 0.0;
  double t = 0.0;
};

/// Ambient field on the tape: (y: D x k per batch element, s: 1x1 time) -> D x k horizontal.
using FieldFn = std::function<ad::Var(const ad::Var& y, const ad::Var& s)>;
/// Builds a FieldFn whose parameters live on the given tape.
using FieldFactory = std::function<FieldFn(ad::Tape&)>;

namespace flow {

/// T * X(T s, y) for the network, parameters as constants.
FieldFactory network(const VectorFieldParams& params);
/// Same with parameters already bound on a tape (for training).
FieldFn network(const field::Bound& bound);

struct ChartDynamics {
  ad::Var velocity;    // (D-k)k x 1 chart coordinates
  ad::Var divergence;  // 1 x 1
};

/// Velocity of the chart ODE at coordinates c around `anchor`, whose horizontal space is
/// spanned by the orthonormal columns of `perp` (D x (D-k)). Coordinates index the directions
/// perp e_i e_j^T in column-major order.
ad::Var chart_velocity(const FieldFn& f, const ad::Var& anchor, const ad::Var& perp, const ad::Var& c,
                       const ad::Var& s);
/// Exact trace of d velocity / d c, one recorded reverse pass per coordinate.
ad::Var divergence(const ad::Var& velocity, const ad::Var& c);
ChartDynamics chart_dynamics(const FieldFn& f, const ad::Var& anchor, const ad::Var& perp, const ad::Var& c,
                             const ad::Var& s);

/// Chart coordinates of the velocity at base + eps for the network field.
VectorXd chart_velocity(const VectorFieldParams& params, double t, const StiefelPoint& base, const HorizontalVector& eps);
double divergence(const VectorFieldParams& params, double t, const StiefelPoint& base, const HorizontalVector& eps);
/// Divergence of an arbitrary tape function of chart coordinates (test hook).
double divergence(const std::function<ad::Var(const ad::Var&)>& velocity, const VectorXd& c);

struct BatchFlow {
  std::vector<MatrixXd> points;
  VectorXd delta_logp;
  int steps = 0;
  int rejected = 0;
};

/// Integrates every point from cfg.t0 to cfg.t1 (reverse when t1 < t0), re-anchoring the chart
/// at each step. delta_logp satisfies log p_t1(Y(t1)) = log p_t0(Y(t0)) + delta_logp.
BatchFlow integrate(const FieldFactory& field, const std::vector<MatrixXd>& points, const SolverConfig& cfg);
FlowState integrate(const VectorFieldParams& params, const FlowState& state0, const SolverConfig& cfg);

/// log p(Y1) = log p_prior(F^{-1}(Y1)) - delta_logp of the reverse integration.
double log_prob(const VectorFieldParams& params, const GrassmannGaussianPrior& prior, const MatrixXd& y1,
                const SolverConfig& cfg);
VectorXd log_prob(const VectorFieldParams& params, const GrassmannGaussianPrior& prior,
                  const std::vector<MatrixXd>& y1, const SolverConfig& cfg);
VectorXd log_prob(const FieldFactory& field, const GrassmannGaussianPrior& prior, const std::vector<MatrixXd>& y1,
                  const SolverConfig& cfg);

struct Samples {
  std::vector<MatrixXd> points;
  VectorXd log_prob;
};
/// Prior samples pushed forward from t0 to t1, with their model log-densities.
Samples sample_flow(const VectorFieldParams& params, const GrassmannGaussianPrior& prior, Rng& rng, int n,
                    const SolverConfig& cfg);
/// Pushes given starting points forward; log_prob uses the prior density at the start.
Samples push_forward(const VectorFieldParams& params, const GrassmannGaussianPrior& prior,
                     const std::vector<MatrixXd>& starts, const SolverConfig& cfg);

/// Differentiable fixed-step rk4 integration recorded on the tape of `start`.
struct TapeFlow {
  ad::Var points;  // D x k per batch element
  ad::Var delta_logp;
};
TapeFlow integrate_rk4(const FieldFn& f, const ad::Var& start, double t_from, double t_to, double dt);

}  // namespace flow

}  // namespace grassflow

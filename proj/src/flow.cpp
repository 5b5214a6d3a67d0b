#include "grassflow/flow.hpp"

#include <algorithm>
#include <cmath>

#include "grassflow/error.hpp"

namespace grassflow {

SolverMethod parse_solver(const std::string& name) {
  if (name == "dopri5") return SolverMethod::kDopri5;
  if (name == "rk4") return SolverMethod::kRk4;
  throw ConfigError("unknown solver '" + name + "' (expected dopri5 or rk4)");
}

const char* solver_name(SolverMethod m) { return m == SolverMethod::kDopri5 ? "dopri5" : "rk4"; }

void SolverConfig::validate() const {
  if (!(atol > 0.0) || !(rtol > 0.0)) throw ConfigError("solver tolerances must be positive");
  if (t0 == t1) throw ConfigError("solver needs t1 != t0");
  if (max_steps < 1) throw ConfigError("solver max_steps must be positive");
  if (method == SolverMethod::kRk4 && !(fixed_dt > 0.0)) throw ConfigError("rk4 needs fixed_dt > 0");
  if (chunk < 1) throw ConfigError("solver chunk must be positive");
}

namespace flow {

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double kC[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
constexpr double kA[7][6] = {
    {0, 0, 0, 0, 0, 0},
    {1.0 / 5, 0, 0, 0, 0, 0},
    {3.0 / 40, 9.0 / 40, 0, 0, 0, 0},
    {44.0 / 45, -56.0 / 15, 32.0 / 9, 0, 0, 0},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0, 0},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656, 0},
    {35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
};
constexpr double kB5[7] = {35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84, 0};
constexpr double kB4[7] = {5179.0 / 57600, 0, 7571.0 / 16695, 393.0 / 640, -92097.0 / 339200, 187.0 / 2100, 1.0 / 40};

struct StageValues {
  MatrixXd v;             // m x B
  Eigen::RowVectorXd l;   // d ell / ds = -div, 1 x B
};

BatchMatrix to_batch(const MatrixXd& cols, int rows) {
  BatchMatrix b(rows, 1, int(cols.cols()));
  b.data = cols;
  return b;
}

StageValues eval_stage(const FieldFactory& make, const BatchMatrix& anchors, const BatchMatrix& perps, const MatrixXd& c,
                       double s) {
  ad::Tape t;
  const FieldFn f = make(t);
  const ad::Var a = t.constant(anchors);
  const ad::Var p = t.constant(perps);
  const ad::Var cv = t.constant(to_batch(c, int(c.rows())));
  const ChartDynamics dyn = chart_dynamics(f, a, p, cv, t.scalar(s));
  StageValues out;
  out.v = dyn.velocity.value().data;
  if (dyn.velocity.batch() != int(c.cols())) out.v = out.v.replicate(1, c.cols());
  out.l = -dyn.divergence.value().data.row(0);
  if (out.l.size() != c.cols()) out.l = Eigen::RowVectorXd::Constant(c.cols(), out.l(0));
  return out;
}

class ChunkIntegrator {
 public:
  ChunkIntegrator(const FieldFactory& make, std::vector<MatrixXd> points, const SolverConfig& cfg)
      : make_(make), cfg_(cfg), y_(std::move(points)) {
    batch_ = int(y_.size());
    d_ = int(y_[0].rows());
    k_ = int(y_[0].cols());
    r_ = d_ - k_;
    m_ = r_ * k_;
    delta_ = VectorXd::Zero(batch_);
  }

  BatchFlow run() {
    const double span = std::abs(cfg_.t1 - cfg_.t0);
    const double dir = cfg_.t1 > cfg_.t0 ? 1.0 : -1.0;
    double s = cfg_.t0;
    if (cfg_.method == SolverMethod::kRk4) {
      const int n = std::max(1, int(std::ceil(span / cfg_.fixed_dt - 1e-9)));
      if (n > cfg_.max_steps) throw SolverError("rk4 would need more than max_steps steps");
      const double h = (cfg_.t1 - cfg_.t0) / n;
      for (int i = 0; i < n; ++i) {
        rk4_step(s, h);
        s = cfg_.t0 + (i + 1) * h;
      }
    } else {
      double h = dir * std::min(span, 0.05 * span + 0.05);
      while (dir * (cfg_.t1 - s) > 1e-14 * std::max(1.0, std::abs(cfg_.t1))) {
        if (steps_ >= cfg_.max_steps) throw SolverError("dopri5 exceeded max_steps");
        if (dir * (s + h - cfg_.t1) > 0.0) h = cfg_.t1 - s;
        h = dopri5_step(s, h);
        s = last_end_;
      }
    }
    BatchFlow out;
    out.points = std::move(y_);
    out.delta_logp = delta_;
    out.steps = steps_;
    out.rejected = rejected_;
    return out;
  }

 private:
  void anchor() {
    anchors_ = BatchMatrix(d_, k_, batch_);
    perps_ = BatchMatrix(d_, r_, batch_);
    perp_list_.resize(std::size_t(batch_));
    for (int b = 0; b < batch_; ++b) {
      anchors_.block(b) = y_[std::size_t(b)];
      perp_list_[std::size_t(b)] = geom::complement_basis(StiefelPoint(y_[std::size_t(b)], 1e-8));
      perps_.block(b) = perp_list_[std::size_t(b)];
    }
  }

  StageValues stage(const MatrixXd& c, double s) { return eval_stage(make_, anchors_, perps_, c, s); }

  void advance(const MatrixXd& c, const Eigen::RowVectorXd& l) {
    for (int b = 0; b < batch_; ++b) {
      const MatrixXd& perp = perp_list_[std::size_t(b)];
      const MatrixXd eps = perp * c.col(b).reshaped(r_, k_);
      MatrixXd next = geom::retract(y_[std::size_t(b)], eps);
      const double drift = (next.transpose() * next - MatrixXd::Identity(k_, k_)).norm();
      if (!(drift < 1e-8)) throw NumericError("flow left the manifold (orthonormality error " + std::to_string(drift) + ")");
      delta_(b) += l(b) - geom::quotient_jacobian_logdet(y_[std::size_t(b)], perp, eps);
      y_[std::size_t(b)] = std::move(next);
    }
    ++steps_;
  }

  void rk4_step(double s, double h) {
    anchor();
    const MatrixXd zero = MatrixXd::Zero(m_, batch_);
    const StageValues k1 = stage(zero, s);
    const StageValues k2 = stage(0.5 * h * k1.v, s + 0.5 * h);
    const StageValues k3 = stage(0.5 * h * k2.v, s + 0.5 * h);
    const StageValues k4 = stage(h * k3.v, s + h);
    advance(h / 6.0 * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v), h / 6.0 * (k1.l + 2.0 * k2.l + 2.0 * k3.l + k4.l));
  }

  // Attempts steps from s until one is accepted; returns the proposed next step size.
  double dopri5_step(double s, double h) {
    anchor();
    std::vector<StageValues> k(7);
    k[0] = stage(MatrixXd::Zero(m_, batch_), s);
    for (;;) {
      if (std::abs(h) < 1e-12) throw SolverError("dopri5 step size underflow");
      for (int i = 1; i < 7; ++i) {
        MatrixXd c = MatrixXd::Zero(m_, batch_);
        for (int j = 0; j < i; ++j) {
          if (kA[i][j] != 0.0) c += (h * kA[i][j]) * k[std::size_t(j)].v;
        }
        k[std::size_t(i)] = stage(c, s + kC[i] * h);
      }
      MatrixXd c5 = MatrixXd::Zero(m_, batch_), ce = MatrixXd::Zero(m_, batch_);
      Eigen::RowVectorXd l5 = Eigen::RowVectorXd::Zero(batch_), le = Eigen::RowVectorXd::Zero(batch_);
      for (int i = 0; i < 7; ++i) {
        const auto& ki = k[std::size_t(i)];
        c5 += (h * kB5[i]) * ki.v;
        l5 += (h * kB5[i]) * ki.l;
        ce += (h * (kB5[i] - kB4[i])) * ki.v;
        le += (h * (kB5[i] - kB4[i])) * ki.l;
      }
      double err = 0.0;
      for (int b = 0; b < batch_; ++b) {
        double acc = 0.0;
        for (int i = 0; i < m_; ++i) {
          const double sc = cfg_.atol + cfg_.rtol * std::abs(c5(i, b));
          acc += (ce(i, b) / sc) * (ce(i, b) / sc);
        }
        const double sl = cfg_.atol + cfg_.rtol * std::max(std::abs(delta_(b)), std::abs(delta_(b) + l5(b)));
        acc += (le(b) / sl) * (le(b) / sl);
        err = std::max(err, std::sqrt(acc / (m_ + 1)));
      }
      if (!std::isfinite(err)) throw NumericError("non-finite error estimate in dopri5");
      if (err <= 1.0) {
        advance(c5, l5);
        last_end_ = s + h;
        const double factor = err == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
        return h * factor;
      }
      ++rejected_;
      h *= std::clamp(0.9 * std::pow(err, -0.2), 0.2, 1.0);
    }
  }

  const FieldFactory& make_;
  const SolverConfig& cfg_;
  std::vector<MatrixXd> y_;
  int batch_ = 0, d_ = 0, k_ = 0, r_ = 0, m_ = 0;
  VectorXd delta_;
  BatchMatrix anchors_, perps_;
  std::vector<MatrixXd> perp_list_;
  int steps_ = 0;
  int rejected_ = 0;
  double last_end_ = 0.0;
};

}  // namespace

FieldFn network(const field::Bound& bound) {
  return [bound](const ad::Var& y, const ad::Var& s) {
    const ad::Var ts = ad::matmul(bound.time_scale, s);
    return ad::scale_by(field::evaluate(bound, y, ts), bound.time_scale);
  };
}

FieldFactory network(const VectorFieldParams& params) {
  return [&params](ad::Tape& t) { return network(field::bind(t, params, false)); };
}

ad::Var chart_velocity(const FieldFn& f, const ad::Var& anchor, const ad::Var& perp, const ad::Var& c,
                       const ad::Var& s) {
  const int r = perp.cols();
  const int k = anchor.cols();
  const ad::Var eps = ad::matmul(perp, ad::reshape(c, r, k));
  const ad::Var x = geom::tape::retract(anchor, eps);
  const ad::Var z = f(x, s);
  const ad::Var w = geom::tape::chart_differential(anchor, x, z);
  return ad::vec(ad::matmul(perp, w, true, false));
}

ad::Var divergence(const ad::Var& velocity, const ad::Var& c) {
  ad::Tape& t = velocity.tape();
  const int m = velocity.rows();
  ad::Var total;
  for (int i = 0; i < m; ++i) {
    const ad::Var gi = t.grad(ad::slice(velocity, i, 0, 1, 1), std::span<const ad::Var>(&c, 1))[0];
    const ad::Var term = ad::slice(gi, i, 0, 1, 1);
    total = i == 0 ? term : total + term;
  }
  return total;
}

ChartDynamics chart_dynamics(const FieldFn& f, const ad::Var& anchor, const ad::Var& perp, const ad::Var& c,
                             const ad::Var& s) {
  ChartDynamics d;
  d.velocity = chart_velocity(f, anchor, perp, c, s);
  d.divergence = divergence(d.velocity, c);
  return d;
}

VectorXd chart_velocity(const VectorFieldParams& params, double t, const StiefelPoint& base, const HorizontalVector& eps) {
  const MatrixXd perp = geom::complement_basis(base);
  const MatrixXd c = (perp.transpose() * eps.matrix()).reshaped();
  ad::Tape tape;
  const FieldFn f = network(field::bind(tape, params, false));
  const ad::Var v = chart_velocity(f, tape.constant(base.matrix()), tape.constant(perp), tape.constant(c), tape.scalar(t));
  return v.value().data;
}

double divergence(const VectorFieldParams& params, double t, const StiefelPoint& base, const HorizontalVector& eps) {
  const MatrixXd perp = geom::complement_basis(base);
  const MatrixXd c = (perp.transpose() * eps.matrix()).reshaped();
  ad::Tape tape;
  const FieldFn f = network(field::bind(tape, params, false));
  const ad::Var cv = tape.constant(c);
  const ad::Var v = chart_velocity(f, tape.constant(base.matrix()), tape.constant(perp), cv, tape.scalar(t));
  return divergence(v, cv).scalar();
}

double divergence(const std::function<ad::Var(const ad::Var&)>& velocity, const VectorXd& c) {
  ad::Tape tape;
  const ad::Var cv = tape.constant(MatrixXd(c));
  return divergence(velocity(cv), cv).scalar();
}

BatchFlow integrate(const FieldFactory& field, const std::vector<MatrixXd>& points, const SolverConfig& cfg) {
  cfg.validate();
  BatchFlow out;
  out.delta_logp = VectorXd::Zero(Eigen::Index(points.size()));
  for (std::size_t lo = 0; lo < points.size(); lo += std::size_t(cfg.chunk)) {
    const std::size_t hi = std::min(points.size(), lo + std::size_t(cfg.chunk));
    std::vector<MatrixXd> chunk(points.begin() + std::ptrdiff_t(lo), points.begin() + std::ptrdiff_t(hi));
    BatchFlow part = ChunkIntegrator(field, std::move(chunk), cfg).run();
    for (auto& p : part.points) out.points.push_back(std::move(p));
    out.delta_logp.segment(Eigen::Index(lo), Eigen::Index(hi - lo)) = part.delta_logp;
    out.steps += part.steps;
    out.rejected += part.rejected;
  }
  return out;
}

FlowState integrate(const VectorFieldParams& params, const FlowState& state0, const SolverConfig& cfg) {
  SolverConfig c = cfg;
  c.t0 = state0.t;
  const BatchFlow r = integrate(network(params), {state0.point}, c);
  FlowState out;
  out.point = r.points[0];
  out.delta_logp = state0.delta_logp + r.delta_logp(0);
  out.t = c.t1;
  return out;
}

VectorXd log_prob(const FieldFactory& field, const GrassmannGaussianPrior& prior, const std::vector<MatrixXd>& y1,
                  const SolverConfig& cfg) {
  SolverConfig rev = cfg;
  std::swap(rev.t0, rev.t1);
  const BatchFlow r = integrate(field, y1, rev);
  VectorXd out(Eigen::Index(y1.size()));
  for (std::size_t i = 0; i < y1.size(); ++i) {
    out(Eigen::Index(i)) = prior.log_density(r.points[i]) - r.delta_logp(Eigen::Index(i));
  }
  return out;
}

VectorXd log_prob(const VectorFieldParams& params, const GrassmannGaussianPrior& prior,
                  const std::vector<MatrixXd>& y1, const SolverConfig& cfg) {
  return log_prob(network(params), prior, y1, cfg);
}

double log_prob(const VectorFieldParams& params, const GrassmannGaussianPrior& prior, const MatrixXd& y1,
                const SolverConfig& cfg) {
  return log_prob(params, prior, std::vector<MatrixXd>{y1}, cfg)(0);
}

Samples push_forward(const VectorFieldParams& params, const GrassmannGaussianPrior& prior,
                     const std::vector<MatrixXd>& starts, const SolverConfig& cfg) {
  Samples out;
  if (starts.empty()) return out;
  const BatchFlow r = integrate(network(params), starts, cfg);
  out.points = r.points;
  out.log_prob.resize(Eigen::Index(starts.size()));
  for (std::size_t i = 0; i < starts.size(); ++i) {
    out.log_prob(Eigen::Index(i)) = prior.log_density(starts[i]) + r.delta_logp(Eigen::Index(i));
  }
  return out;
}

Samples sample_flow(const VectorFieldParams& params, const GrassmannGaussianPrior& prior, Rng& rng, int n,
                    const SolverConfig& cfg) {
  std::vector<MatrixXd> starts;
  starts.reserve(std::size_t(std::max(n, 0)));
  for (int i = 0; i < n; ++i) starts.push_back(prior.sample(rng).matrix());
  return push_forward(params, prior, starts, cfg);
}

TapeFlow integrate_rk4(const FieldFn& f, const ad::Var& start, double t_from, double t_to, double dt) {
  ad::Tape& t = start.tape();
  const int batch = start.batch();
  const int d = start.rows();
  const int k = start.cols();
  const int r = d - k;
  const int m = r * k;
  const int n = std::max(1, int(std::ceil(std::abs(t_to - t_from) / dt - 1e-9)));
  const double h = (t_to - t_from) / n;

  std::vector<ad::Var> units;
  for (int j = 0; j < k; ++j) {
    for (int i = 0; i < r; ++i) {
      MatrixXd e = MatrixXd::Zero(r, k);
      e(i, j) = 1.0;
      units.push_back(t.constant(e));
    }
  }

  ad::Var y = start;
  ad::Var delta = t.constant(BatchMatrix(1, 1, batch));
  for (int step = 0; step < n; ++step) {
    const double s = t_from + step * h;
    BatchMatrix perps(d, r, batch);
    for (int b = 0; b < batch; ++b) perps.block(b) = geom::complement_basis(StiefelPoint(y.value().block(b), 1e-8));
    // Projecting the fixed complement at the recorded point keeps first derivatives exact
    // without differentiating the QR completion.
    const ad::Var basis = geom::tape::horizontal_project(y, t.constant(perps));
    const ad::Var c0 = t.constant(BatchMatrix(m, 1, batch));
    const ChartDynamics k1 = chart_dynamics(f, y, basis, c0, t.scalar(s));
    const ChartDynamics k2 = chart_dynamics(f, y, basis, ad::affine(k1.velocity, 0.5 * h, 0.0), t.scalar(s + 0.5 * h));
    const ChartDynamics k3 = chart_dynamics(f, y, basis, ad::affine(k2.velocity, 0.5 * h, 0.0), t.scalar(s + 0.5 * h));
    const ChartDynamics k4 = chart_dynamics(f, y, basis, ad::affine(k3.velocity, h, 0.0), t.scalar(s + h));
    const ad::Var c_end =
        ad::affine(k1.velocity + ad::affine(k2.velocity + k3.velocity, 2.0, 0.0) + k4.velocity, h / 6.0, 0.0);
    const ad::Var l_end = ad::affine(k1.divergence + ad::affine(k2.divergence + k3.divergence, 2.0, 0.0) + k4.divergence,
                                     -h / 6.0, 0.0);
    const ad::Var eps = ad::matmul(basis, ad::reshape(c_end, r, k));
    std::vector<ad::Var> dirs;
    dirs.reserve(units.size());
    for (const auto& u : units) dirs.push_back(ad::matmul(basis, u));
    const ad::Var lj = geom::tape::quotient_jacobian_logdet(y, eps, dirs);
    delta = delta + l_end - lj;
    y = geom::tape::retract(y, eps);
  }
  return {y, delta};
}

}  // namespace flow

}  // namespace grassflow

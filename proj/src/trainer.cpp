#include "grassflow/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "grassflow/error.hpp"
#include "grassflow/kernels.hpp"
#include "grassflow/log.hpp"

namespace grassflow {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("Adam betas must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be non-negative");
  if (epochs < 0) throw ConfigError("train.epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (lr_step_epoch < 0 || !(lr_step_factor > 0.0)) throw ConfigError("invalid learning-rate step");
  if (!(train_dt > 0.0)) throw ConfigError("train.dt must be positive");
  if (chunk < 1) throw ConfigError("train.chunk must be positive");
  if (!(prior_sigma > 0.0) || !(prior_sigma_v > 0.0)) throw ConfigError("prior scales must be positive");
  if (time_init < train::kMinTime || time_init > train::kMaxTime) throw ConfigError("integration time out of [0.1, 10]");
  if (eval_every < 1) throw ConfigError("train.eval_every must be positive");
  if (rank < 1 || rank >= dim) throw ConfigError("need 1 <= k < D");
  solver.validate();
}

namespace train {

GrassmannGaussianPrior make_prior(const TrainConfig& cfg) {
  return GrassmannGaussianPrior::isotropic(cfg.dim, cfg.rank, cfg.prior_sigma, cfg.prior_sigma_v);
}

VectorFieldParams init_params(const TrainConfig& cfg) {
  VectorFieldParams p = field::init(cfg.dim, cfg.rank, cfg.widths, cfg.seed);
  p.time_scale = cfg.time_init;
  p.train_time = cfg.train_time;
  return p;
}

VectorXd flatten(const VectorFieldParams& p) {
  VectorFieldParams& q = const_cast<VectorFieldParams&>(p);
  VectorXd out(Eigen::Index(q.parameter_count()));
  Eigen::Index at = 0;
  for (const auto& e : q.entries()) {
    out.segment(at, e.size) = Eigen::Map<const VectorXd>(e.data, e.size);
    at += e.size;
  }
  return out;
}

void unflatten(const VectorXd& flat, VectorFieldParams& p) {
  if (flat.size() != Eigen::Index(p.parameter_count())) throw ShapeError("unflatten: size mismatch");
  Eigen::Index at = 0;
  for (const auto& e : p.entries()) {
    Eigen::Map<VectorXd>(e.data, e.size) = flat.segment(at, e.size);
    at += e.size;
  }
}

double loss_nll(const VectorFieldParams& params, const GrassmannGaussianPrior& prior,
                const std::vector<MatrixXd>& batch, const SolverConfig& solver) {
  if (batch.empty()) throw DomainError("loss_nll: empty batch");
  const VectorXd lp = flow::log_prob(params, prior, batch, solver);
  for (Eigen::Index i = 0; i < lp.size(); ++i) {
    if (!std::isfinite(lp(i))) throw NumericError("non-finite log-likelihood at sample " + std::to_string(i));
  }
  return -lp.mean();
}

namespace {

std::vector<ad::Var> trainable(const field::Bound& b, bool train_time) {
  std::vector<ad::Var> v = {b.w_in};
  for (const auto& l : b.layers) {
    for (const auto& x : {l.w, l.b, l.gate_w, l.gate_b, l.bias_w}) v.push_back(x);
  }
  if (train_time) v.push_back(b.time_scale);
  return v;
}

struct ChunkResult {
  double loss_sum = 0.0;
  VectorXd grad_sum;
  std::string error;
};

ChunkResult chunk_gradient(const VectorFieldParams& params, const GrassmannGaussianPrior& prior,
                           const std::vector<MatrixXd>& batch, std::size_t lo, std::size_t hi, double dt) {
  ChunkResult out;
  const std::vector<MatrixXd> pts(batch.begin() + std::ptrdiff_t(lo), batch.begin() + std::ptrdiff_t(hi));
  ad::Tape t;
  const field::Bound bound = field::bind(t, params, true);
  const ad::Var start = t.constant(BatchMatrix::stack(pts));
  const flow::TapeFlow tf = flow::integrate_rk4(flow::network(bound), start, 1.0, 0.0, dt);

  const BatchMatrix& y0 = tf.points.value();
  BatchMatrix g(y0.rows, y0.cols, y0.batch);
  for (int b = 0; b < y0.batch; ++b) {
    const MatrixXd y = y0.block(b);
    const double lp = prior.log_density(y) - tf.delta_logp.value().block(b)(0, 0);
    if (!std::isfinite(lp)) {
      out.error = "non-finite log-likelihood at sample " + std::to_string(lo + std::size_t(b));
      return out;
    }
    out.loss_sum -= lp;
    g.block(b) = prior.log_density_gradient(y);
  }
  // d log p / d theta = <grad prior, d Y0 / d theta> - d delta / d theta
  const ad::Var surrogate = ad::sum(ad::hadamard(tf.points, t.constant(g))) - tf.delta_logp;
  const std::vector<ad::Var> leaves = trainable(bound, params.train_time);
  const std::vector<ad::Var> grads = t.grad(surrogate, leaves);
  out.grad_sum.resize(Eigen::Index(params.parameter_count()));
  Eigen::Index at = 0;
  for (const auto& gv : grads) {
    const auto& d = gv.value().data;
    out.grad_sum.segment(at, d.size()) = -d.reshaped();
    at += d.size();
  }
  return out;
}

}  // namespace

LossGrad loss_and_gradient(const VectorFieldParams& params, const GrassmannGaussianPrior& prior,
                           const std::vector<MatrixXd>& batch, double dt, int chunk) {
  if (batch.empty()) throw DomainError("loss_and_gradient: empty batch");
  const std::size_t n = batch.size();
  const std::size_t n_chunks = (n + std::size_t(chunk) - 1) / std::size_t(chunk);
  std::vector<ChunkResult> parts(n_chunks);
#pragma omp parallel for schedule(dynamic) if (num_threads() > 1 && n_chunks > 1)
  for (std::ptrdiff_t c = 0; c < std::ptrdiff_t(n_chunks); ++c) {
    const std::size_t lo = std::size_t(c) * std::size_t(chunk);
    try {
      parts[std::size_t(c)] = chunk_gradient(params, prior, batch, lo, std::min(n, lo + std::size_t(chunk)), dt);
    } catch (const std::exception& e) {
      parts[std::size_t(c)].error = e.what();
    }
  }
  LossGrad out;
  out.grad = VectorXd::Zero(Eigen::Index(params.parameter_count()));
  for (const auto& p : parts) {
    if (!p.error.empty()) throw NumericError(p.error);
    out.loss += p.loss_sum;
    out.grad += p.grad_sum;
  }
  out.loss /= double(n);
  out.grad /= double(n);
  return out;
}

void adam_step(VectorFieldParams& params, const VectorXd& grad, AdamState& state, const TrainConfig& cfg, double lr) {
  const auto n = Eigen::Index(params.parameter_count());
  if (grad.size() != n) throw ShapeError("adam_step: gradient size mismatch");
  if (state.m.size() != n) {
    state.m = VectorXd::Zero(n);
    state.v = VectorXd::Zero(n);
    state.step = 0;
  }
  ++state.step;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  Eigen::Index at = 0;
  for (const auto& e : params.entries()) {
    Eigen::Map<VectorXd> p(e.data, e.size);
    if (e.decay && cfg.weight_decay > 0.0) p *= 1.0 - lr * cfg.weight_decay;
    const auto m = state.m.segment(at, e.size).array() / c1;
    const auto v = state.v.segment(at, e.size).array() / c2;
    p.array() -= lr * m / (v.sqrt() + cfg.adam_eps);
    at += e.size;
  }
  params.time_scale = std::clamp(params.time_scale, kMinTime, kMaxTime);
}

double learning_rate(const TrainConfig& cfg, int epoch) {
  if (cfg.lr_step_epoch <= 0) return cfg.lr;
  return cfg.lr * std::pow(cfg.lr_step_factor, double(epoch / cfg.lr_step_epoch));
}

std::map<std::string, std::string> snapshot(const TrainConfig& cfg) {
  auto num = [](double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
  };
  std::string widths;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) widths += (i ? "," : "") + std::to_string(cfg.widths[i]);
  return {
      {"model.dim", std::to_string(cfg.dim)},
      {"model.rank", std::to_string(cfg.rank)},
      {"model.widths", widths},
      {"model.train_time", cfg.train_time ? "true" : "false"},
      {"model.time_init", num(cfg.time_init)},
      {"prior.sigma", num(cfg.prior_sigma)},
      {"prior.sigma_v", num(cfg.prior_sigma_v)},
      {"train.lr", num(cfg.lr)},
      {"train.beta1", num(cfg.beta1)},
      {"train.beta2", num(cfg.beta2)},
      {"train.weight_decay", num(cfg.weight_decay)},
      {"train.epochs", std::to_string(cfg.epochs)},
      {"train.batch_size", std::to_string(cfg.batch_size)},
      {"train.lr_step_epoch", std::to_string(cfg.lr_step_epoch)},
      {"train.lr_step_factor", num(cfg.lr_step_factor)},
      {"train.seed", std::to_string(cfg.seed)},
      {"train.dt", num(cfg.train_dt)},
      {"train.chunk", std::to_string(cfg.chunk)},
      {"train.eval_every", std::to_string(cfg.eval_every)},
      {"solver.method", solver_name(cfg.solver.method)},
      {"solver.atol", num(cfg.solver.atol)},
      {"solver.rtol", num(cfg.solver.rtol)},
  };
}

namespace {

class MetricsFile {
 public:
  explicit MetricsFile(const std::string& dir) {
    if (dir.empty()) return;
    const auto path = std::filesystem::path(dir) / "metrics.csv";
    const bool fresh = !std::filesystem::exists(path);
    out_.open(path, std::ios::app);
    if (!out_) throw IoError("cannot write '" + path.string() + "'");
    if (fresh) out_ << "epoch,train_nll,val_nll,lr,wall_seconds\n";
  }
  void write(const EpochMetrics& m) {
    if (!out_.is_open()) return;
    out_.precision(10);
    out_ << m.epoch << "," << m.train_nll << ",";
    if (std::isfinite(m.val_nll)) out_ << m.val_nll;
    out_ << "," << m.lr << "," << m.wall_seconds << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

std::vector<MatrixXd> first(const SampleBatch& b, int limit) {
  const std::size_t n = limit > 0 ? std::min(b.size(), std::size_t(limit)) : b.size();
  return {b.points.begin(), b.points.begin() + std::ptrdiff_t(n)};
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const TrainData& data, const EpochCallback& on_epoch) {
  cfg.validate();
  const bool stream = !data.texture.empty();
  if (!stream && data.train.empty()) throw ConfigError("training set is empty");
  if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);

  const GrassmannGaussianPrior prior = make_prior(cfg);
  VectorFieldParams params = init_params(cfg);
  Rng rng(cfg.seed, 0x7a19);
  AdamState adam;
  MetricsFile metrics(cfg.out_dir);
  const std::vector<MatrixXd> val = first(data.val, cfg.val_limit);

  TrainResult result;
  auto make_checkpoint = [&](int epoch) {
    Checkpoint c;
    c.params = params;
    c.set_prior(prior);
    c.config = snapshot(cfg);
    c.epoch = epoch;
    c.rng = rng;
    c.best_val = result.best.best_val;
    return c;
  };
  result.best = make_checkpoint(0);
  result.best.best_val = std::numeric_limits<double>::infinity();

  const auto t_start = std::chrono::steady_clock::now();
  double initial_nll = std::numeric_limits<double>::quiet_NaN();
  int blowups = 0;
  std::vector<std::size_t> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = learning_rate(cfg, epoch - 1);
    double loss_sum = 0.0;
    int batches = 0;
    if (stream) {
      const SampleBatch b = data::generate_texture(data.texture, cfg.batch_size, rng);
      const LossGrad lg = loss_and_gradient(params, prior, b.points, cfg.train_dt, cfg.chunk);
      adam_step(params, lg.grad, adam, cfg, lr);
      loss_sum += lg.loss;
      ++batches;
    } else {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t lo = 0; lo < order.size(); lo += std::size_t(cfg.batch_size)) {
        std::vector<MatrixXd> b;
        for (std::size_t i = lo; i < std::min(order.size(), lo + std::size_t(cfg.batch_size)); ++i) {
          b.push_back(data.train.points[order[i]]);
        }
        const LossGrad lg = loss_and_gradient(params, prior, b, cfg.train_dt, cfg.chunk);
        adam_step(params, lg.grad, adam, cfg, lr);
        loss_sum += lg.loss;
        ++batches;
      }
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_nll = loss_sum / batches;
    m.lr = lr;
    m.val_nll = std::numeric_limits<double>::quiet_NaN();
    if (!val.empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
      m.val_nll = loss_nll(params, prior, val, cfg.solver);
    }
    m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    metrics.write(m);
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);
    log::debug("epoch " + std::to_string(epoch) + " train " + std::to_string(m.train_nll));

    if (epoch == 1) initial_nll = m.train_nll;
    if (!std::isfinite(m.train_nll)) throw NumericError("training loss became non-finite at epoch " + std::to_string(epoch));
    // Losses can be negative, so "10x worse" is measured relative to the magnitude.
    blowups = m.train_nll > initial_nll + 10.0 * std::max(1.0, std::abs(initial_nll)) ? blowups + 1 : 0;
    if (blowups >= 3) throw NumericError("training diverged at epoch " + std::to_string(epoch));

    if (std::isfinite(m.val_nll) && m.val_nll < result.best.best_val) {
      result.best = make_checkpoint(epoch);
      result.best.best_val = m.val_nll;
      if (!cfg.out_dir.empty()) checkpoint::save((std::filesystem::path(cfg.out_dir) / "best.json").string(), result.best);
    }
  }
  result.last = make_checkpoint(cfg.epochs);
  result.last.best_val = result.best.best_val;
  if (!cfg.out_dir.empty()) {
    checkpoint::save((std::filesystem::path(cfg.out_dir) / "last.json").string(), result.last);
    if (!std::isfinite(result.best.best_val)) {
      checkpoint::save((std::filesystem::path(cfg.out_dir) / "best.json").string(), result.last);
    }
  }
  if (!std::isfinite(result.best.best_val)) result.best = result.last;
  return result;
}

}  // namespace train

}  // namespace grassflow

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "grassflow/checkpoint.hpp"
#include "grassflow/datasets.hpp"
#include "grassflow/flow.hpp"
#include "grassflow/prior.hpp"
#include "grassflow/vector_field.hpp"

namespace grassflow {

struct TrainConfig {
  int dim = 3;
  int rank = 1;
  std::vector<int> widths = {3, 64, 64, 1};

  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  int epochs = 100;
  int batch_size = 500;
  int lr_step_epoch = 0;  // 0 disables the step schedule
  double lr_step_factor = 0.1;
  std::uint64_t seed = 0;

  SolverConfig solver;    // evaluation (validation NLL)
  double train_dt = 0.25; // fixed rk4 step used for gradients
  int chunk = 100;        // samples recorded on one tape

  double prior_sigma = 0.3;
  double prior_sigma_v = 1.0;
  bool train_time = true;
  double time_init = 1.0;

  int eval_every = 10;
  int val_limit = 0;  // evaluate on at most this many validation samples (0 = all)
  std::string out_dir;  // metrics.csv, best.json, last.json; empty writes nothing

  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double train_nll = 0.0;
  double val_nll = 0.0;  // NaN when not evaluated this epoch
  double lr = 0.0;
  double wall_seconds = 0.0;
};

namespace train {

constexpr double kMinTime = 0.1;
constexpr double kMaxTime = 10.0;

GrassmannGaussianPrior make_prior(const TrainConfig& cfg);
VectorFieldParams init_params(const TrainConfig& cfg);

VectorXd flatten(const VectorFieldParams& p);
void unflatten(const VectorXd& flat, VectorFieldParams& p);

/// Mean of -log_prob over the batch, evaluated with the given solver.
double loss_nll(const VectorFieldParams& params, const GrassmannGaussianPrior& prior,
                const std::vector<MatrixXd>& batch, const SolverConfig& solver);

struct LossGrad {
  double loss = 0.0;  // mean -log p under the fixed-step discretization
  VectorXd grad;      // d loss / d flatten(params)
};
/// Exact gradient of the discretized loss: the data are integrated back to the prior with
/// fixed-step rk4 on the tape and the prior's gradient is injected at the start point.
LossGrad loss_and_gradient(const VectorFieldParams& params, const GrassmannGaussianPrior& prior,
                           const std::vector<MatrixXd>& batch, double dt, int chunk);

struct AdamState {
  VectorXd m;
  VectorXd v;
  long step = 0;
};
/// Adam with bias correction and decoupled weight decay (entries flagged for decay only).
/// Clamps the integration time to [kMinTime, kMaxTime].
void adam_step(VectorFieldParams& params, const VectorXd& grad, AdamState& state, const TrainConfig& cfg, double lr);

double learning_rate(const TrainConfig& cfg, int epoch);

struct TrainData {
  std::string texture;  // non-empty: draw a fresh training batch from this texture every epoch
  SampleBatch train;    // used when texture is empty
  SampleBatch val;
};

struct TrainResult {
  Checkpoint last;
  Checkpoint best;
  std::vector<EpochMetrics> history;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// One epoch is one optimizer step for texture data and one pass over the training set
/// otherwise. Writes metrics and checkpoints into cfg.out_dir when set.
TrainResult train(const TrainConfig& cfg, const TrainData& data, const EpochCallback& on_epoch = {});

/// Config snapshot stored in checkpoints.
std::map<std::string, std::string> snapshot(const TrainConfig& cfg);

}  // namespace train

}  // namespace grassflow

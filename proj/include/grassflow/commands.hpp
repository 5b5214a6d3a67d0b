#pragma once

#include <string>

#include <Eigen/Dense>

#include "grassflow/checkpoint.hpp"
#include "grassflow/config.hpp"

namespace grassflow::cmd {

/// Writes the dataset described by cfg.data to `path` plus a `path.meta.json` sidecar.
SampleBatch gen_data(const RunConfig& cfg, const std::string& path);

/// Trains into cfg.out (metrics.csv, best.json, last.json, config.txt, test.csv for csv data).
train::TrainResult train(const RunConfig& cfg);

/// n samples from the checkpoint's model, written as CSV with a sidecar.
flow::Samples sample(const Checkpoint& ckpt, int n, std::uint64_t seed, const SolverConfig& solver,
                     const std::string& path);

/// Lat-long grid on the sphere: rows are polar angles theta (cell centres, resolution of them),
/// columns longitudes phi (2 * resolution of them).
struct DensityGrid {
  VectorXd theta;
  VectorXd phi;
  MatrixXd logp;     // theta x phi
  MatrixXd weights;  // normalized cell areas, summing to 1

  double integral() const;
  /// Unit vector of a grid cell.
  static Eigen::Vector3d direction(double theta, double phi);
};

DensityGrid density_grid(const Checkpoint& ckpt, int resolution, const SolverConfig& solver);
void write_grid_csv(const std::string& path, const DensityGrid& grid);
/// Binary grayscale PPM, brighter where the density is higher.
void write_ppm(const std::string& path, const DensityGrid& grid);

struct EvalResult {
  double mean_nll = 0.0;
  double std_nll = 0.0;
  int n = 0;
};
EvalResult eval(const Checkpoint& ckpt, const SampleBatch& batch, const SolverConfig& solver);

/// Writes a small JSON object next to an output file.
void write_sidecar(const std::string& path, const std::map<std::string, std::string>& fields);

}  // namespace grassflow::cmd

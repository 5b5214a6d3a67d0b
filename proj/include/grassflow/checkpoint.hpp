#pragma once

#include <limits>
#include <map>
#include <string>

#include "grassflow/prior.hpp"
#include "grassflow/rng.hpp"
#include "grassflow/vector_field.hpp"

namespace grassflow {

struct Checkpoint {
  static constexpr const char* kVersion = "grassflow-checkpoint/1";

  VectorFieldParams params;
  MatrixXd prior_mean;
  MatrixXd prior_row_cov;
  MatrixXd prior_col_cov;
  std::map<std::string, std::string> config;  // snapshot of the run settings
  int epoch = 0;
  Rng rng;
  double best_val = std::numeric_limits<double>::infinity();
  bool decay_all_weights = true;  // weight decay covers every array except gate biases and T

  GrassmannGaussianPrior prior() const;
  void set_prior(const GrassmannGaussianPrior& p);
};

namespace checkpoint {

/// Versioned JSON with named float64 arrays (column-major data plus shape).
void save(const std::string& path, const Checkpoint& c);
Checkpoint load(const std::string& path);

std::string to_json(const Checkpoint& c);
Checkpoint from_json(const std::string& text);

}  // namespace checkpoint

}  // namespace grassflow

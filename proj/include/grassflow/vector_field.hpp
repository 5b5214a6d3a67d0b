#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "grassflow/geometry.hpp"
#include "grassflow/tape.hpp"

namespace grassflow {

struct ConcatSquashLayer {
  MatrixXd w;       // out x in
  VectorXd b;       // out
  VectorXd gate_w;  // out
  VectorXd gate_b;  // out
  VectorXd bias_w;  // out
};

struct VectorFieldParams {
  int dim = 0;
  int rank = 0;
  std::vector<int> widths;  // widths.front() == dim * rank, widths.back() == 1
  MatrixXd w_in;            // dim x rank
  std::vector<ConcatSquashLayer> layers;
  double time_scale = 1.0;  // integration time T
  bool train_time = true;

  /// Named views of every trainable array, in a fixed order. T is a 1x1 entry named "time_scale".
  struct Entry {
    std::string name;
    double* data;
    Eigen::Index size;
    bool decay;  // subject to weight decay
  };
  std::vector<Entry> entries();
  std::size_t parameter_count() const;
};

struct FieldEval {
  HorizontalVector value;
  double potential = 0.0;
};

namespace field {

/// Uniform(+-1/sqrt(fan_in)) weights, zero gate biases; W_in uniform(+-1).
VectorFieldParams init(int dim, int rank, const std::vector<int>& widths, std::uint64_t seed);
VectorFieldParams zeros_like(const VectorFieldParams& p);

/// Single-point evaluation of X(t, Y).
FieldEval forward(const VectorFieldParams& params, double t, const StiefelPoint& y);

/// y = (W x + b) * sigmoid(gate_w t + gate_b) + bias_w t.
VectorXd concatsquash(const ConcatSquashLayer& layer, const VectorXd& x, double t);

/// Parameters bound as tape variables.
struct Bound {
  ad::Var w_in;
  struct Layer {
    ad::Var w, b, gate_w, gate_b, bias_w;
  };
  std::vector<Layer> layers;
  ad::Var time_scale;
};
/// requires_grad selects whether the parameters are differentiable leaves.
Bound bind(ad::Tape& tape, const VectorFieldParams& params, bool requires_grad);

ad::Var concatsquash(const Bound::Layer& layer, const ad::Var& x, const ad::Var& t);
/// Scalar potential per batch element; t is 1x1 (shared or batched).
ad::Var potential(const Bound& p, const ad::Var& y, const ad::Var& t);
/// Tangent projection of the potential's gradient with respect to y (recorded, differentiable).
ad::Var evaluate(const Bound& p, const ad::Var& y, const ad::Var& t);

}  // namespace field

}  // namespace grassflow

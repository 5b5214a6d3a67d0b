#include "grassflow/vector_field.hpp"

#include <cmath>

#include "grassflow/error.hpp"
#include "grassflow/rng.hpp"

namespace grassflow {

std::vector<VectorFieldParams::Entry> VectorFieldParams::entries() {
  std::vector<Entry> e;
  e.push_back({"w_in", w_in.data(), w_in.size(), true});
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    e.push_back({p + "w", l.w.data(), l.w.size(), true});
    e.push_back({p + "b", l.b.data(), l.b.size(), true});
    e.push_back({p + "gate_w", l.gate_w.data(), l.gate_w.size(), true});
    e.push_back({p + "gate_b", l.gate_b.data(), l.gate_b.size(), false});
    e.push_back({p + "bias_w", l.bias_w.data(), l.bias_w.size(), true});
  }
  if (train_time) e.push_back({"time_scale", &time_scale, 1, false});
  return e;
}

std::size_t VectorFieldParams::parameter_count() const {
  std::size_t n = std::size_t(w_in.size()) + (train_time ? 1 : 0);
  for (const auto& l : layers) n += std::size_t(l.w.size() + l.b.size() + l.gate_w.size() + l.gate_b.size() + l.bias_w.size());
  return n;
}

namespace field {

VectorFieldParams init(int dim, int rank, const std::vector<int>& widths, std::uint64_t seed) {
  if (widths.size() < 2) throw ConfigError("vector field needs at least an input and an output width");
  if (widths.front() != dim * rank) throw ConfigError("first width must equal D*k");
  if (widths.back() != 1) throw ConfigError("last width must be 1 (scalar potential)");
  Rng rng(seed, 0x5eed);
  auto uniform = [&](double a) { return a * (2.0 * rng.uniform() - 1.0); };
  VectorFieldParams p;
  p.dim = dim;
  p.rank = rank;
  p.widths = widths;
  p.w_in.resize(dim, rank);
  for (Eigen::Index i = 0; i < p.w_in.size(); ++i) p.w_in.data()[i] = uniform(1.0);
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const int in = widths[i];
    const int out = widths[i + 1];
    const double a = 1.0 / std::sqrt(double(in));
    ConcatSquashLayer l;
    l.w.resize(out, in);
    l.b.resize(out);
    l.gate_w.resize(out);
    l.bias_w.resize(out);
    l.gate_b = VectorXd::Zero(out);
    for (Eigen::Index j = 0; j < l.w.size(); ++j) l.w.data()[j] = uniform(a);
    for (int j = 0; j < out; ++j) l.b(j) = uniform(a);
    for (int j = 0; j < out; ++j) l.gate_w(j) = uniform(a);
    for (int j = 0; j < out; ++j) l.bias_w(j) = uniform(a);
    p.layers.push_back(std::move(l));
  }
  return p;
}

VectorFieldParams zeros_like(const VectorFieldParams& p) {
  VectorFieldParams z = p;
  for (auto& e : z.entries()) Eigen::Map<VectorXd>(e.data, e.size).setZero();
  z.time_scale = p.time_scale;
  return z;
}

VectorXd concatsquash(const ConcatSquashLayer& layer, const VectorXd& x, double t) {
  if (x.size() != layer.w.cols()) throw ShapeError("concatsquash: input width does not match layer");
  const VectorXd gate = (layer.gate_w * t + layer.gate_b).unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  return (layer.w * x + layer.b).cwiseProduct(gate) + layer.bias_w * t;
}

Bound bind(ad::Tape& tape, const VectorFieldParams& params, bool requires_grad) {
  Bound b;
  b.w_in = tape.leaf(params.w_in, requires_grad);
  for (const auto& l : params.layers) {
    b.layers.push_back({tape.leaf(l.w, requires_grad), tape.leaf(MatrixXd(l.b), requires_grad),
                        tape.leaf(MatrixXd(l.gate_w), requires_grad), tape.leaf(MatrixXd(l.gate_b), requires_grad),
                        tape.leaf(MatrixXd(l.bias_w), requires_grad)});
  }
  b.time_scale = tape.leaf(MatrixXd::Constant(1, 1, params.time_scale), requires_grad && params.train_time);
  return b;
}

ad::Var concatsquash(const Bound::Layer& layer, const ad::Var& x, const ad::Var& t) {
  const ad::Var gate = ad::sigmoid(ad::matmul(layer.gate_w, t) + layer.gate_b);
  return ad::hadamard(ad::matmul(layer.w, x) + layer.b, gate) + ad::matmul(layer.bias_w, t);
}

ad::Var potential(const Bound& p, const ad::Var& y, const ad::Var& t) {
  // HorP: invariant under y -> yQ.
  const ad::Var zeta = p.w_in - ad::matmul(y, ad::matmul(y, p.w_in, true, false));
  ad::Var x = ad::vec(ad::tanh(zeta));
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    x = ad::tanh(concatsquash(p.layers[i], x, t));
    if (!x.value().data.allFinite()) throw NumericError("non-finite activation in layer " + std::to_string(i));
  }
  return x;
}

ad::Var evaluate(const Bound& p, const ad::Var& y, const ad::Var& t) {
  const ad::Var v = potential(p, y, t);
  const ad::Var g = y.tape().grad(v, std::span<const ad::Var>(&y, 1))[0];
  const ad::Var yg = ad::matmul(y, g, true, false);
  return g - ad::matmul(y, ad::affine(yg + ad::transpose(yg), 0.5, 0.0));
}

FieldEval forward(const VectorFieldParams& params, double t, const StiefelPoint& y) {
  if (y.dim() != params.dim || y.rank() != params.rank) throw ShapeError("vector field: point has the wrong shape");
  ad::Tape tape;
  const Bound b = bind(tape, params, false);
  const ad::Var yv = tape.constant(y.matrix());
  const ad::Var tv = tape.scalar(t);
  const ad::Var v = potential(b, yv, tv);
  const ad::Var g = tape.grad(v, std::span<const ad::Var>(&yv, 1))[0];
  FieldEval out;
  out.potential = v.scalar();
  out.value = HorizontalVector(geom::tangent_project(y, g.value().data), y);
  return out;
}

}  // namespace field

}  // namespace grassflow

#include "grassflow/tape.hpp"

#include <algorithm>
#include <string>

#include "grassflow/error.hpp"

namespace grassflow::ad {

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kAffine: return "affine";
    case OpKind::kScaleBy: return "scale_by";
    case OpKind::kMul: return "mul";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kReshape: return "reshape";
    case OpKind::kSum: return "sum";
    case OpKind::kTrace: return "trace";
    case OpKind::kSlice: return "slice";
    case OpKind::kPad: return "pad";
    case OpKind::kBatchSum: return "batch_sum";
    case OpKind::kBatchBroadcast: return "batch_broadcast";
    case OpKind::kInverse: return "inverse";
    case OpKind::kLogDet: return "logdet";
  }
  return "?";
}

namespace {

int arity(OpKind op) {
  switch (op) {
    case OpKind::kLeaf: return 0;
    case OpKind::kMatmul:
    case OpKind::kAdd:
    case OpKind::kScaleBy:
    case OpKind::kMul: return 2;
    default: return 1;
  }
}

std::string shape_str(const BatchMatrix& m) {
  return std::to_string(m.rows) + "x" + std::to_string(m.cols) + (m.batch > 1 ? "[" + std::to_string(m.batch) + "]" : "");
}

}  // namespace

const BatchMatrix& Var::value() const { return tape_->nodes_[std::size_t(id_)].value; }

double Var::scalar() const {
  const auto& v = value();
  if (v.rows != 1 || v.cols != 1 || v.batch != 1) throw ShapeError("scalar(): node is not a single 1x1 value");
  return v.data(0, 0);
}

const BatchMatrix& Gradients::operator[](const Var& leaf) const {
  const auto it = std::lower_bound(leaf_ids_.begin(), leaf_ids_.end(), leaf.id());
  if (it == leaf_ids_.end() || *it != leaf.id()) throw Error("gradient requested for a node that is not a differentiable leaf");
  return grads_[std::size_t(it - leaf_ids_.begin())];
}

Var Tape::leaf(BatchMatrix value, bool requires_grad) {
  Node n;
  n.op = OpKind::kLeaf;
  n.requires_grad = requires_grad;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return handle(int(nodes_.size()) - 1);
}

BatchMatrix Tape::evaluate(OpKind op, const BatchMatrix* a, const BatchMatrix* b, const Payload& p) const {
  BatchMatrix out;
  switch (op) {
    case OpKind::kLeaf: throw Error("cannot evaluate a leaf");
    case OpKind::kMatmul: kernels::gemm(*a, p.trans_a, *b, p.trans_b, p.reduce, out); break;
    case OpKind::kAdd: kernels::add(*a, *b, out); break;
    case OpKind::kAffine: kernels::affine(*a, p.scale, p.shift, out); break;
    case OpKind::kScaleBy: kernels::scale_by(*a, *b, out); break;
    case OpKind::kMul: kernels::mul(*a, *b, out); break;
    case OpKind::kTanh: kernels::tanh(*a, out); break;
    case OpKind::kSigmoid: kernels::sigmoid(*a, out); break;
    case OpKind::kTranspose: kernels::transpose(*a, out); break;
    case OpKind::kReshape: kernels::reshape(*a, p.rows, p.cols, out); break;
    case OpKind::kSum: kernels::sum(*a, out); break;
    case OpKind::kTrace: kernels::trace(*a, out); break;
    case OpKind::kSlice: kernels::slice(*a, p.r0, p.c0, p.rows, p.cols, out); break;
    case OpKind::kPad: kernels::pad(*a, p.rows, p.cols, p.r0, p.c0, out); break;
    case OpKind::kBatchSum: kernels::batch_sum(*a, out); break;
    case OpKind::kBatchBroadcast: kernels::batch_broadcast(*a, p.batch, out); break;
    case OpKind::kInverse:
      if (!kernels::inverse(*a, out)) throw NumericError("inverse: singular block");
      break;
    case OpKind::kLogDet: kernels::logdet(*a, out); break;
  }
  return out;
}

Var Tape::record(OpKind op, std::span<const Var> inputs, const Payload& payload) {
  const int n = arity(op);
  if (int(inputs.size()) != n) throw ShapeError(std::string(op_name(op)) + ": wrong number of inputs");
  for (const auto& v : inputs) {
    if (v.tape_ != this) throw Error(std::string(op_name(op)) + ": operand belongs to another tape");
  }
  const BatchMatrix* a = n > 0 ? &nodes_[std::size_t(inputs[0].id_)].value : nullptr;
  const BatchMatrix* b = n > 1 ? &nodes_[std::size_t(inputs[1].id_)].value : nullptr;
  Node node;
  try {
    node.value = evaluate(op, a, b, payload);
  } catch (const ShapeError& e) {
    std::string shapes = a ? shape_str(*a) : "";
    if (b) shapes += ", " + shape_str(*b);
    throw ShapeError(std::string(e.what()) + " [op " + op_name(op) + " on " + shapes + "]");
  }
  node.op = op;
  node.payload = payload;
  if (n > 0) {
    node.in0 = inputs[0].id_;
    node.requires_grad = nodes_[std::size_t(node.in0)].requires_grad;
  }
  if (n > 1) {
    node.in1 = inputs[1].id_;
    node.requires_grad = node.requires_grad || nodes_[std::size_t(node.in1)].requires_grad;
  }
  nodes_.push_back(std::move(node));
  return handle(int(nodes_.size()) - 1);
}

void Tape::accumulate(int target, Var contribution, std::vector<int>& adj, int lo) {
  const BatchMatrix& tv = nodes_[std::size_t(target)].value;
  if (contribution.batch() != tv.batch) {
    contribution = tv.batch == 1 ? batch_sum(contribution) : batch_broadcast(contribution, tv.batch);
  }
  int& slot = adj[std::size_t(target - lo)];
  if (slot < 0) {
    slot = contribution.id();
  } else {
    slot = (handle(slot) + contribution).id();
  }
}

void Tape::vjp(int id, const Var& g, std::vector<int>& adj, const std::vector<char>& dep, int lo) {
  // Copy what we need: recording below may reallocate nodes_.
  const OpKind op = nodes_[std::size_t(id)].op;
  const int i0 = nodes_[std::size_t(id)].in0;
  const int i1 = nodes_[std::size_t(id)].in1;
  const Payload p = nodes_[std::size_t(id)].payload;
  const bool d0 = i0 >= lo && dep[std::size_t(i0 - lo)];
  const bool d1 = i1 >= lo && dep[std::size_t(i1 - lo)];
  if (!d0 && !d1) return;
  const Var a = i0 >= 0 ? handle(i0) : Var();
  const Var b = i1 >= 0 ? handle(i1) : Var();
  const Var y = handle(id);

  switch (op) {
    case OpKind::kLeaf: return;
    case OpKind::kMatmul: {
      // C = op(A) op(B); reduce targets that are shared.
      if (d0) {
        const bool red = a.batch() == 1;
        Var da = !p.trans_a ? (red ? matmul_reduce(g, b, false, !p.trans_b) : matmul(g, b, false, !p.trans_b))
                            : (red ? matmul_reduce(b, g, p.trans_b, true) : matmul(b, g, p.trans_b, true));
        accumulate(i0, da, adj, lo);
      }
      if (d1) {
        const bool red = b.batch() == 1;
        Var db = !p.trans_b ? (red ? matmul_reduce(a, g, !p.trans_a, false) : matmul(a, g, !p.trans_a, false))
                            : (red ? matmul_reduce(g, a, true, p.trans_a) : matmul(g, a, true, p.trans_a));
        accumulate(i1, db, adj, lo);
      }
      return;
    }
    case OpKind::kAdd:
      if (d0) accumulate(i0, g, adj, lo);
      if (d1) accumulate(i1, g, adj, lo);
      return;
    case OpKind::kAffine:
      accumulate(i0, affine(g, p.scale, 0.0), adj, lo);
      return;
    case OpKind::kScaleBy:
      if (d0) accumulate(i0, scale_by(g, b), adj, lo);
      if (d1) accumulate(i1, sum(hadamard(g, a)), adj, lo);
      return;
    case OpKind::kMul:
      if (d0) accumulate(i0, hadamard(g, b), adj, lo);
      if (d1) accumulate(i1, hadamard(g, a), adj, lo);
      return;
    case OpKind::kTanh:
      accumulate(i0, hadamard(g, affine(hadamard(y, y), -1.0, 1.0)), adj, lo);
      return;
    case OpKind::kSigmoid:
      accumulate(i0, hadamard(g, hadamard(y, affine(y, -1.0, 1.0))), adj, lo);
      return;
    case OpKind::kTranspose:
      accumulate(i0, transpose(g), adj, lo);
      return;
    case OpKind::kReshape:
      accumulate(i0, reshape(g, a.rows(), a.cols()), adj, lo);
      return;
    case OpKind::kSum:
      accumulate(i0, scale_by(constant(Eigen::MatrixXd::Ones(a.rows(), a.cols())), g), adj, lo);
      return;
    case OpKind::kTrace:
      accumulate(i0, scale_by(constant(Eigen::MatrixXd::Identity(a.rows(), a.cols())), g), adj, lo);
      return;
    case OpKind::kSlice:
      accumulate(i0, pad(g, a.rows(), a.cols(), p.r0, p.c0), adj, lo);
      return;
    case OpKind::kPad:
      accumulate(i0, slice(g, p.r0, p.c0, a.rows(), a.cols()), adj, lo);
      return;
    case OpKind::kBatchSum:
      accumulate(i0, batch_broadcast(g, a.batch()), adj, lo);
      return;
    case OpKind::kBatchBroadcast:
      accumulate(i0, batch_sum(g), adj, lo);
      return;
    case OpKind::kInverse:
      // d(A^-1) = -A^-1 dA A^-1  =>  dA = -Y^T G Y^T
      accumulate(i0, -matmul(matmul(y, g, true, false), y, false, true), adj, lo);
      return;
    case OpKind::kLogDet:
      accumulate(i0, scale_by(transpose(inverse(a)), g), adj, lo);
      return;
  }
}

std::vector<Var> Tape::grad(const Var& output, std::span<const Var> wrt) {
  if (output.tape_ != this) throw Error("grad: output belongs to another tape");
  if (output.rows() != 1 || output.cols() != 1) {
    throw ShapeError("grad: output must be scalar (1x1), got " + std::to_string(output.rows()) + "x" +
                     std::to_string(output.cols()));
  }
  const int hi = output.id();
  int lo = hi;
  for (const auto& w : wrt) {
    if (w.tape_ != this) throw Error("grad: wrt variable belongs to another tape");
    lo = std::min(lo, w.id());
  }
  // Nodes in [lo, hi] that depend on some wrt variable.
  std::vector<char> dep(std::size_t(hi - lo + 1), 0);
  for (const auto& w : wrt) {
    if (w.id() <= hi) dep[std::size_t(w.id() - lo)] = 1;
  }
  for (int i = lo; i <= hi; ++i) {
    const Node& n = nodes_[std::size_t(i)];
    if (dep[std::size_t(i - lo)]) continue;
    if ((n.in0 >= lo && dep[std::size_t(n.in0 - lo)]) || (n.in1 >= lo && dep[std::size_t(n.in1 - lo)])) {
      dep[std::size_t(i - lo)] = 1;
    }
  }

  std::vector<int> adj(std::size_t(hi - lo + 1), -1);
  if (dep[std::size_t(hi - lo)]) {
    BatchMatrix seed(1, 1, output.batch());
    seed.data.setOnes();
    adj[std::size_t(hi - lo)] = constant(std::move(seed)).id();
    for (int i = hi; i >= lo; --i) {
      const int a = adj[std::size_t(i - lo)];
      if (a < 0 || !dep[std::size_t(i - lo)]) continue;
      if (nodes_[std::size_t(i)].op == OpKind::kLeaf) continue;
      vjp(i, handle(a), adj, dep, lo);
    }
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    const int a = w.id() <= hi ? adj[std::size_t(w.id() - lo)] : -1;
    if (a >= 0) {
      out.push_back(handle(a));
    } else {
      out.push_back(constant(BatchMatrix(w.rows(), w.cols(), w.batch())));
    }
  }
  return out;
}

Gradients Tape::backward(const Var& output) {
  std::vector<Var> leaves;
  for (int i = 0; i <= output.id(); ++i) {
    const Node& n = nodes_[std::size_t(i)];
    if (n.op == OpKind::kLeaf && n.requires_grad) leaves.push_back(handle(i));
  }
  Gradients g;
  if (leaves.empty()) return g;
  const auto vars = grad(output, leaves);
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    g.leaf_ids_.push_back(leaves[i].id());
    g.grads_.push_back(vars[i].value());
  }
  return g;
}

bool Tape::replay_matches() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.op == OpKind::kLeaf) continue;
    const BatchMatrix* a = n.in0 >= 0 ? &nodes_[std::size_t(n.in0)].value : nullptr;
    const BatchMatrix* b = n.in1 >= 0 ? &nodes_[std::size_t(n.in1)].value : nullptr;
    const BatchMatrix v = evaluate(n.op, a, b, n.payload);
    if (v.rows != n.value.rows || v.cols != n.value.cols || v.batch != n.value.batch) return false;
    if (v.data.size() != n.value.data.size()) return false;
    for (Eigen::Index j = 0; j < v.data.size(); ++j) {
      if (v.data.data()[j] != n.value.data.data()[j]) return false;
    }
  }
  return true;
}

namespace {

Tape& same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw Error("operands belong to different tapes");
  return a.tape();
}

}  // namespace

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  Payload p;
  p.trans_a = trans_a;
  p.trans_b = trans_b;
  const Var in[] = {a, b};
  return same_tape(a, b).record(OpKind::kMatmul, in, p);
}

Var matmul_reduce(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  Payload p;
  p.trans_a = trans_a;
  p.trans_b = trans_b;
  p.reduce = true;
  const Var in[] = {a, b};
  return same_tape(a, b).record(OpKind::kMatmul, in, p);
}

Var operator+(const Var& a, const Var& b) {
  const Var in[] = {a, b};
  return same_tape(a, b).record(OpKind::kAdd, in);
}

Var operator-(const Var& a, const Var& b) { return a + affine(b, -1.0, 0.0); }

Var operator-(const Var& a) { return affine(a, -1.0, 0.0); }

Var operator*(double c, const Var& a) { return affine(a, c, 0.0); }

Var affine(const Var& a, double scale, double shift) {
  Payload p;
  p.scale = scale;
  p.shift = shift;
  const Var in[] = {a};
  return a.tape().record(OpKind::kAffine, in, p);
}

Var scale_by(const Var& a, const Var& s) {
  const Var in[] = {a, s};
  return same_tape(a, s).record(OpKind::kScaleBy, in);
}

Var hadamard(const Var& a, const Var& b) {
  const Var in[] = {a, b};
  return same_tape(a, b).record(OpKind::kMul, in);
}

#define GRASSFLOW_UNARY(fn, kind)           \
  Var fn(const Var& a) {                    \
    const Var in[] = {a};                   \
    return a.tape().record(OpKind::kind, in); \
  }

GRASSFLOW_UNARY(tanh, kTanh)
GRASSFLOW_UNARY(sigmoid, kSigmoid)
GRASSFLOW_UNARY(transpose, kTranspose)
GRASSFLOW_UNARY(sum, kSum)
GRASSFLOW_UNARY(trace, kTrace)
GRASSFLOW_UNARY(batch_sum, kBatchSum)
GRASSFLOW_UNARY(inverse, kInverse)
GRASSFLOW_UNARY(logdet, kLogDet)

#undef GRASSFLOW_UNARY

Var reshape(const Var& a, int rows, int cols) {
  if (a.rows() == rows && a.cols() == cols) return a;
  Payload p;
  p.rows = rows;
  p.cols = cols;
  const Var in[] = {a};
  return a.tape().record(OpKind::kReshape, in, p);
}

Var vec(const Var& a) { return reshape(a, a.rows() * a.cols(), 1); }

Var slice(const Var& a, int r0, int c0, int rows, int cols) {
  Payload p;
  p.r0 = r0;
  p.c0 = c0;
  p.rows = rows;
  p.cols = cols;
  const Var in[] = {a};
  return a.tape().record(OpKind::kSlice, in, p);
}

Var pad(const Var& a, int rows, int cols, int r0, int c0) {
  Payload p;
  p.r0 = r0;
  p.c0 = c0;
  p.rows = rows;
  p.cols = cols;
  const Var in[] = {a};
  return a.tape().record(OpKind::kPad, in, p);
}

Var batch_broadcast(const Var& a, int batch) {
  Payload p;
  p.batch = batch;
  const Var in[] = {a};
  return a.tape().record(OpKind::kBatchBroadcast, in, p);
}

}  // namespace grassflow::ad

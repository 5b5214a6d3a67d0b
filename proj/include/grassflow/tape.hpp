#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "grassflow/kernels.hpp"

namespace grassflow::ad {

/// Closed set of recorded primitives. Every adjoint is itself expressed with
/// these, so gradients can be differentiated again.
enum class OpKind : std::uint8_t {
  kLeaf,
  kMatmul,
  kAdd,
  kAffine,   // c * x + d, elementwise, c and d constants
  kScaleBy,  // per-sample 1x1 scalar times matrix
  kMul,      // elementwise product
  kTanh,
  kSigmoid,
  kTranspose,
  kReshape,  // column-major; vec is reshape to (rows*cols) x 1
  kSum,
  kTrace,
  kSlice,
  kPad,
  kBatchSum,
  kBatchBroadcast,
  kInverse,
  kLogDet,
};

const char* op_name(OpKind op);

struct Payload {
  double scale = 1.0;
  double shift = 0.0;
  bool trans_a = false;
  bool trans_b = false;
  bool reduce = false;
  int r0 = 0;
  int c0 = 0;
  int rows = 0;
  int cols = 0;
  int batch = 0;
};

class Tape;

/// Handle to a recorded node: index into its tape plus cached shape.
class Var {
 public:
  Var() = default;

  int id() const { return id_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int batch() const { return batch_; }
  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }

  const BatchMatrix& value() const;
  /// Value of a 1x1 batch-1 node.
  double scalar() const;

 private:
  friend class Tape;
  Var(Tape* t, int id, int r, int c, int b) : tape_(t), id_(id), rows_(r), cols_(c), batch_(b) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
  int rows_ = 0;
  int cols_ = 0;
  int batch_ = 1;
};

struct Node {
  OpKind op = OpKind::kLeaf;
  int in0 = -1;
  int in1 = -1;
  bool requires_grad = false;
  Payload payload;
  BatchMatrix value;
};

/// Gradient map returned by Tape::backward: one matrix per leaf.
class Gradients {
 public:
  /// Gradient w.r.t. a leaf; zero matrix of the leaf's shape if it was not reached.
  const BatchMatrix& operator[](const Var& leaf) const;

 private:
  friend class Tape;
  std::vector<int> leaf_ids_;
  std::vector<BatchMatrix> grads_;
};

/// Reverse-mode tape over dense float64 matrices. Rebuilt per forward pass.
/// Single owner while recording; a finished tape may be read concurrently.
class Tape {
 public:
  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(BatchMatrix value, bool requires_grad = true);
  Var leaf(const Eigen::MatrixXd& value, bool requires_grad = true) { return leaf(BatchMatrix(value), requires_grad); }
  Var constant(BatchMatrix value) { return leaf(std::move(value), false); }
  Var constant(const Eigen::MatrixXd& value) { return leaf(BatchMatrix(value), false); }
  Var scalar(double v) { return constant(Eigen::MatrixXd::Constant(1, 1, v)); }

  Var record(OpKind op, std::span<const Var> inputs, const Payload& payload = {});

  /// d(sum over batch of output)/d(wrt), recorded on this tape so the result can be
  /// differentiated again. output must be 1x1 per batch element.
  std::vector<Var> grad(const Var& output, std::span<const Var> wrt);

  /// Gradient values for every leaf that requires grad.
  Gradients backward(const Var& output);

  /// Recompute every non-leaf node from its inputs; true iff all values match bit-for-bit.
  bool replay_matches() const;

  std::size_t size() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_[std::size_t(id)]; }

 private:
  friend class Var;
  Var handle(int id) {
    const auto& v = nodes_[std::size_t(id)].value;
    return Var(this, id, v.rows, v.cols, v.batch);
  }
  BatchMatrix evaluate(OpKind op, const BatchMatrix* a, const BatchMatrix* b, const Payload& p) const;
  void vjp(int id, const Var& g, std::vector<int>& adj, const std::vector<char>& dep, int lo);
  void accumulate(int target, Var contribution, std::vector<int>& adj, int lo);

  std::vector<Node> nodes_;
};

// Recording helpers. All operands must live on the same tape.
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
/// sum over the batch of op(a_b) op(b_b); result is shared (batch 1).
Var matmul_reduce(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator*(double c, const Var& a);
Var affine(const Var& a, double scale, double shift);
Var scale_by(const Var& a, const Var& s);
Var hadamard(const Var& a, const Var& b);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var transpose(const Var& a);
Var reshape(const Var& a, int rows, int cols);
Var vec(const Var& a);
Var sum(const Var& a);
Var trace(const Var& a);
Var slice(const Var& a, int r0, int c0, int rows, int cols);
Var pad(const Var& a, int rows, int cols, int r0, int c0);
Var batch_sum(const Var& a);
Var batch_broadcast(const Var& a, int batch);
Var inverse(const Var& a);
Var logdet(const Var& a);

}  // namespace grassflow::ad

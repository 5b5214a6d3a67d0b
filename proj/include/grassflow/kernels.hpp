#pragma once

#include <Eigen/Dense>

namespace grassflow {

/// A batch of equally shaped matrices stored as column blocks:
/// block b occupies columns [b*cols, (b+1)*cols) of `data`.
/// batch == 1 means the matrix is shared by (broadcast over) every batch element.
struct BatchMatrix {
  int rows = 0;
  int cols = 0;
  int batch = 1;
  Eigen::MatrixXd data;

  BatchMatrix() = default;
  BatchMatrix(int r, int c, int b) : rows(r), cols(c), batch(b), data(Eigen::MatrixXd::Zero(r, c * b)) {}
  explicit BatchMatrix(Eigen::MatrixXd m) : rows(int(m.rows())), cols(int(m.cols())), batch(1), data(std::move(m)) {}

  static BatchMatrix stack(const std::vector<Eigen::MatrixXd>& blocks);

  auto block(int b) { return data.middleCols(Eigen::Index(b) * cols, cols); }
  auto block(int b) const { return data.middleCols(Eigen::Index(b) * cols, cols); }
  /// Block b, or block 0 when this matrix is shared.
  auto at(int b) const { return block(batch == 1 ? 0 : b); }
};

/// Number of OpenMP threads used by the parallel kernels (1 disables them).
void set_num_threads(int n);
int num_threads();

namespace kernels {

// Optimized kernels: OpenMP over batch blocks / elements plus single-GEMM fast
// paths for the shared-weight layouts that dominate network evaluation.
void gemm(const BatchMatrix& a, bool ta, const BatchMatrix& b, bool tb, bool reduce, BatchMatrix& out);
void add(const BatchMatrix& a, const BatchMatrix& b, BatchMatrix& out);
void affine(const BatchMatrix& a, double scale, double shift, BatchMatrix& out);
void scale_by(const BatchMatrix& a, const BatchMatrix& s, BatchMatrix& out);
void mul(const BatchMatrix& a, const BatchMatrix& b, BatchMatrix& out);
void tanh(const BatchMatrix& a, BatchMatrix& out);
void sigmoid(const BatchMatrix& a, BatchMatrix& out);
void transpose(const BatchMatrix& a, BatchMatrix& out);
void reshape(const BatchMatrix& a, int rows, int cols, BatchMatrix& out);
void sum(const BatchMatrix& a, BatchMatrix& out);
void trace(const BatchMatrix& a, BatchMatrix& out);
void slice(const BatchMatrix& a, int r0, int c0, int rows, int cols, BatchMatrix& out);
void pad(const BatchMatrix& a, int rows, int cols, int r0, int c0, BatchMatrix& out);
void batch_sum(const BatchMatrix& a, BatchMatrix& out);
void batch_broadcast(const BatchMatrix& a, int batch, BatchMatrix& out);
/// Per-block inverse; returns false if some block is numerically singular.
bool inverse(const BatchMatrix& a, BatchMatrix& out);
/// Per-block log|det|.
void logdet(const BatchMatrix& a, BatchMatrix& out);

}  // namespace kernels

namespace kernels::reference {

// Plain serial loops over blocks; the oracle the optimized kernels are tested against.
void gemm(const BatchMatrix& a, bool ta, const BatchMatrix& b, bool tb, bool reduce, BatchMatrix& out);
void add(const BatchMatrix& a, const BatchMatrix& b, BatchMatrix& out);
void affine(const BatchMatrix& a, double scale, double shift, BatchMatrix& out);
void scale_by(const BatchMatrix& a, const BatchMatrix& s, BatchMatrix& out);
void mul(const BatchMatrix& a, const BatchMatrix& b, BatchMatrix& out);
void tanh(const BatchMatrix& a, BatchMatrix& out);
void sigmoid(const BatchMatrix& a, BatchMatrix& out);
void transpose(const BatchMatrix& a, BatchMatrix& out);
void batch_sum(const BatchMatrix& a, BatchMatrix& out);
bool inverse(const BatchMatrix& a, BatchMatrix& out);
void logdet(const BatchMatrix& a, BatchMatrix& out);

}  // namespace kernels::reference

}  // namespace grassflow

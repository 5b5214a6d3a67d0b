#include "grassflow/kernels.hpp"

#include <omp.h>

#include <cmath>
#include <vector>

#include "grassflow/error.hpp"

namespace grassflow {

namespace {

int g_threads = 1;

// Below this many scalar operations a parallel region costs more than it saves.
constexpr long kParallelWork = 1 << 15;

bool go_parallel(long work) { return g_threads > 1 && work >= kParallelWork; }

int out_batch(const BatchMatrix& a, const BatchMatrix& b) {
  if (a.batch != 1 && b.batch != 1 && a.batch != b.batch) {
    throw ShapeError("batch mismatch: " + std::to_string(a.batch) + " vs " + std::to_string(b.batch));
  }
  return std::max(a.batch, b.batch);
}

void check_same_shape(const char* op, const BatchMatrix& a, const BatchMatrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                     " vs " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
  }
}

struct GemmShape {
  int m, p, n;
};

GemmShape gemm_shape(const BatchMatrix& a, bool ta, const BatchMatrix& b, bool tb) {
  const int am = ta ? a.cols : a.rows;
  const int ap = ta ? a.rows : a.cols;
  const int bp = tb ? b.cols : b.rows;
  const int bn = tb ? b.rows : b.cols;
  if (ap != bp) {
    throw ShapeError("matmul: inner dimensions differ (" + std::to_string(am) + "x" + std::to_string(ap) + " * " +
                     std::to_string(bp) + "x" + std::to_string(bn) + ")");
  }
  return {am, ap, bn};
}

template <class A, class B, class O>
void gemm_block(const A& a, bool ta, const B& b, bool tb, O&& out) {
  if (!ta && !tb) {
    out.noalias() = a * b;
  } else if (ta && !tb) {
    out.noalias() = a.transpose() * b;
  } else if (!ta && tb) {
    out.noalias() = a * b.transpose();
  } else {
    out.noalias() = a.transpose() * b.transpose();
  }
}

}  // namespace

BatchMatrix BatchMatrix::stack(const std::vector<Eigen::MatrixXd>& blocks) {
  if (blocks.empty()) return {};
  BatchMatrix out(int(blocks[0].rows()), int(blocks[0].cols()), int(blocks.size()));
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (blocks[i].rows() != out.rows || blocks[i].cols() != out.cols) throw ShapeError("stack: ragged blocks");
    out.block(int(i)) = blocks[i];
  }
  return out;
}

void set_num_threads(int n) {
  g_threads = n < 1 ? 1 : n;
  omp_set_num_threads(g_threads);
}

int num_threads() { return g_threads; }

namespace kernels {

void gemm(const BatchMatrix& a, bool ta, const BatchMatrix& b, bool tb, bool reduce, BatchMatrix& out) {
  const auto [m, p, n] = gemm_shape(a, ta, b, tb);
  const int batch = out_batch(a, b);
  if (reduce && batch > 1) {
    out.rows = m;
    out.cols = n;
    out.batch = 1;
    if (!ta && tb && a.batch > 1 && b.batch > 1) {
      // sum_b A_b B_b^T is one GEMM over the column-block layout.
      out.data.noalias() = a.data * b.data.transpose();
      return;
    }
    std::vector<Eigen::MatrixXd> partial(batch);
    const bool par = go_parallel(long(batch) * m * n * p);
#pragma omp parallel for if (par) schedule(static)
    for (int i = 0; i < batch; ++i) {
      partial[i].resize(m, n);
      gemm_block(a.at(i), ta, b.at(i), tb, partial[i]);
    }
    out.data = Eigen::MatrixXd::Zero(m, n);
    for (int i = 0; i < batch; ++i) out.data += partial[i];
    return;
  }
  out.rows = m;
  out.cols = n;
  out.batch = batch;
  if (a.batch == 1 && b.batch > 1 && !tb) {
    // Shared left operand: one GEMM against all column blocks at once.
    if (ta) {
      out.data.noalias() = a.data.transpose() * b.data;
    } else {
      out.data.noalias() = a.data * b.data;
    }
    return;
  }
  out.data.resize(m, Eigen::Index(n) * batch);
  const bool par = go_parallel(long(batch) * m * n * p);
#pragma omp parallel for if (par) schedule(static)
  for (int i = 0; i < batch; ++i) {
    gemm_block(a.at(i), ta, b.at(i), tb, out.block(i));
  }
}

void add(const BatchMatrix& a, const BatchMatrix& b, BatchMatrix& out) {
  check_same_shape("add", a, b);
  const int batch = out_batch(a, b);
  if (a.batch == b.batch) {
    out.rows = a.rows;
    out.cols = a.cols;
    out.batch = batch;
    out.data = a.data + b.data;
    return;
  }
  const BatchMatrix& big = a.batch > 1 ? a : b;
  const BatchMatrix& small = a.batch > 1 ? b : a;
  out.rows = a.rows;
  out.cols = a.cols;
  out.batch = batch;
  out.data.resize(big.data.rows(), big.data.cols());
  const bool par = go_parallel(long(big.data.size()));
#pragma omp parallel for if (par) schedule(static)
  for (int i = 0; i < batch; ++i) out.block(i) = big.block(i) + small.data;
}

void affine(const BatchMatrix& a, double scale, double shift, BatchMatrix& out) {
  out.rows = a.rows;
  out.cols = a.cols;
  out.batch = a.batch;
  if (shift == 0.0) {
    out.data = scale * a.data;
  } else {
    out.data = (scale * a.data.array() + shift).matrix();
  }
}

void scale_by(const BatchMatrix& a, const BatchMatrix& s, BatchMatrix& out) {
  if (s.rows != 1 || s.cols != 1) throw ShapeError("scale_by: scalar operand must be 1x1");
  const int batch = out_batch(a, s);
  out.rows = a.rows;
  out.cols = a.cols;
  out.batch = batch;
  out.data.resize(a.rows, Eigen::Index(a.cols) * batch);
  if (s.batch == 1) {
    out.data = s.data(0, 0) * a.data;
    return;
  }
  const bool par = go_parallel(long(out.data.size()));
#pragma omp parallel for if (par) schedule(static)
  for (int i = 0; i < batch; ++i) out.block(i) = s.data(0, i) * a.at(i);
}

void mul(const BatchMatrix& a, const BatchMatrix& b, BatchMatrix& out) {
  check_same_shape("mul", a, b);
  const int batch = out_batch(a, b);
  out.rows = a.rows;
  out.cols = a.cols;
  out.batch = batch;
  if (a.batch == b.batch) {
    out.data = a.data.cwiseProduct(b.data);
    return;
  }
  out.data.resize(a.rows, Eigen::Index(a.cols) * batch);
  const BatchMatrix& big = a.batch > 1 ? a : b;
  const BatchMatrix& small = a.batch > 1 ? b : a;
  const bool par = go_parallel(long(out.data.size()));
#pragma omp parallel for if (par) schedule(static)
  for (int i = 0; i < batch; ++i) out.block(i) = big.block(i).cwiseProduct(small.data);
}

void tanh(const BatchMatrix& a, BatchMatrix& out) {
  out.rows = a.rows;
  out.cols = a.cols;
  out.batch = a.batch;
  out.data.resize(a.data.rows(), a.data.cols());
  const long n = long(a.data.size());
  const double* src = a.data.data();
  double* dst = out.data.data();
  const bool par = go_parallel(n * 8);
#pragma omp parallel for if (par) schedule(static)
  for (long i = 0; i < n; ++i) dst[i] = std::tanh(src[i]);
}

void sigmoid(const BatchMatrix& a, BatchMatrix& out) {
  out.rows = a.rows;
  out.cols = a.cols;
  out.batch = a.batch;
  out.data.resize(a.data.rows(), a.data.cols());
  const long n = long(a.data.size());
  const double* src = a.data.data();
  double* dst = out.data.data();
  const bool par = go_parallel(n * 8);
#pragma omp parallel for if (par) schedule(static)
  for (long i = 0; i < n; ++i) dst[i] = 1.0 / (1.0 + std::exp(-src[i]));
}

void transpose(const BatchMatrix& a, BatchMatrix& out) {
  out.rows = a.cols;
  out.cols = a.rows;
  out.batch = a.batch;
  out.data.resize(a.cols, Eigen::Index(a.rows) * a.batch);
  if (a.cols == 1 || a.rows == 1) {
    // Vectors: transposing each block is a pure reshape of the storage.
    if (a.cols == 1) {
      out.data = Eigen::Map<const Eigen::MatrixXd>(a.data.data(), 1, a.data.size());
    } else {
      out.data = Eigen::Map<const Eigen::MatrixXd>(a.data.data(), a.cols, a.batch);
    }
    return;
  }
  const bool par = go_parallel(long(a.data.size()));
#pragma omp parallel for if (par) schedule(static)
  for (int i = 0; i < a.batch; ++i) out.block(i) = a.block(i).transpose();
}

void reshape(const BatchMatrix& a, int rows, int cols, BatchMatrix& out) {
  if (long(rows) * cols != long(a.rows) * a.cols) {
    throw ShapeError("reshape: cannot view " + std::to_string(a.rows) + "x" + std::to_string(a.cols) + " as " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  // Column-major blocks are contiguous, so a per-block reshape is a reshape of the whole buffer.
  out.rows = rows;
  out.cols = cols;
  out.batch = a.batch;
  out.data = Eigen::Map<const Eigen::MatrixXd>(a.data.data(), rows, Eigen::Index(cols) * a.batch);
}

void sum(const BatchMatrix& a, BatchMatrix& out) {
  out.rows = 1;
  out.cols = 1;
  out.batch = a.batch;
  out.data.resize(1, a.batch);
  if (a.cols == 1) {
    out.data = a.data.colwise().sum();
    return;
  }
  for (int i = 0; i < a.batch; ++i) out.data(0, i) = a.block(i).sum();
}

void trace(const BatchMatrix& a, BatchMatrix& out) {
  if (a.rows != a.cols) throw ShapeError("trace: matrix must be square");
  out.rows = 1;
  out.cols = 1;
  out.batch = a.batch;
  out.data.resize(1, a.batch);
  for (int i = 0; i < a.batch; ++i) out.data(0, i) = a.block(i).trace();
}

void slice(const BatchMatrix& a, int r0, int c0, int rows, int cols, BatchMatrix& out) {
  if (r0 < 0 || c0 < 0 || r0 + rows > a.rows || c0 + cols > a.cols) throw ShapeError("slice: out of range");
  out.rows = rows;
  out.cols = cols;
  out.batch = a.batch;
  out.data.resize(rows, Eigen::Index(cols) * a.batch);
  for (int i = 0; i < a.batch; ++i) out.block(i) = a.block(i).block(r0, c0, rows, cols);
}

void pad(const BatchMatrix& a, int rows, int cols, int r0, int c0, BatchMatrix& out) {
  if (r0 < 0 || c0 < 0 || r0 + a.rows > rows || c0 + a.cols > cols) throw ShapeError("pad: out of range");
  out.rows = rows;
  out.cols = cols;
  out.batch = a.batch;
  out.data = Eigen::MatrixXd::Zero(rows, Eigen::Index(cols) * a.batch);
  for (int i = 0; i < a.batch; ++i) out.block(i).block(r0, c0, a.rows, a.cols) = a.block(i);
}

void batch_sum(const BatchMatrix& a, BatchMatrix& out) {
  out.rows = a.rows;
  out.cols = a.cols;
  out.batch = 1;
  if (a.cols == 1) {
    out.data = a.data.rowwise().sum();
    return;
  }
  out.data = Eigen::MatrixXd::Zero(a.rows, a.cols);
  for (int i = 0; i < a.batch; ++i) out.data += a.block(i);
}

void batch_broadcast(const BatchMatrix& a, int batch, BatchMatrix& out) {
  if (a.batch != 1) throw ShapeError("batch_broadcast: input is already batched");
  out.rows = a.rows;
  out.cols = a.cols;
  out.batch = batch;
  out.data = a.data.replicate(1, batch);
}

bool inverse(const BatchMatrix& a, BatchMatrix& out) {
  if (a.rows != a.cols) throw ShapeError("inverse: matrix must be square");
  out.rows = a.rows;
  out.cols = a.cols;
  out.batch = a.batch;
  out.data.resize(a.rows, a.data.cols());
  if (a.rows == 1) {
    out.data = a.data.cwiseInverse();
    return (a.data.array().abs() > 1e-300).all();
  }
  bool ok = true;
  for (int i = 0; i < a.batch; ++i) {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(a.block(i));
    if (std::abs(lu.determinant()) < 1e-300) ok = false;
    out.block(i) = lu.inverse();
  }
  return ok;
}

void logdet(const BatchMatrix& a, BatchMatrix& out) {
  if (a.rows != a.cols) throw ShapeError("logdet: matrix must be square");
  out.rows = 1;
  out.cols = 1;
  out.batch = a.batch;
  out.data.resize(1, a.batch);
  for (int i = 0; i < a.batch; ++i) {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(a.block(i));
    const Eigen::MatrixXd& u = lu.matrixLU();
    double s = 0.0;
    for (int j = 0; j < a.rows; ++j) s += std::log(std::abs(u(j, j)));
    out.data(0, i) = s;
  }
}

}  // namespace kernels

namespace kernels::reference {

void gemm(const BatchMatrix& a, bool ta, const BatchMatrix& b, bool tb, bool reduce, BatchMatrix& out) {
  const auto [m, p, n] = gemm_shape(a, ta, b, tb);
  const int batch = out_batch(a, b);
  const bool red = reduce && batch > 1;
  out = BatchMatrix(m, n, red ? 1 : batch);
  for (int i = 0; i < batch; ++i) {
    Eigen::MatrixXd opa = ta ? Eigen::MatrixXd(a.at(i).transpose()) : Eigen::MatrixXd(a.at(i));
    Eigen::MatrixXd opb = tb ? Eigen::MatrixXd(b.at(i).transpose()) : Eigen::MatrixXd(b.at(i));
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < n; ++c) {
        double s = 0.0;
        for (int q = 0; q < p; ++q) s += opa(r, q) * opb(q, c);
        if (red) {
          out.data(r, c) += s;
        } else {
          out.block(i)(r, c) = s;
        }
      }
    }
  }
}

void add(const BatchMatrix& a, const BatchMatrix& b, BatchMatrix& out) {
  check_same_shape("add", a, b);
  const int batch = out_batch(a, b);
  out = BatchMatrix(a.rows, a.cols, batch);
  for (int i = 0; i < batch; ++i) out.block(i) = a.at(i) + b.at(i);
}

void affine(const BatchMatrix& a, double scale, double shift, BatchMatrix& out) {
  out = BatchMatrix(a.rows, a.cols, a.batch);
  for (Eigen::Index i = 0; i < a.data.size(); ++i) out.data.data()[i] = scale * a.data.data()[i] + shift;
}

void scale_by(const BatchMatrix& a, const BatchMatrix& s, BatchMatrix& out) {
  const int batch = out_batch(a, s);
  out = BatchMatrix(a.rows, a.cols, batch);
  for (int i = 0; i < batch; ++i) out.block(i) = s.at(i)(0, 0) * a.at(i);
}

void mul(const BatchMatrix& a, const BatchMatrix& b, BatchMatrix& out) {
  check_same_shape("mul", a, b);
  const int batch = out_batch(a, b);
  out = BatchMatrix(a.rows, a.cols, batch);
  for (int i = 0; i < batch; ++i) out.block(i) = a.at(i).cwiseProduct(b.at(i));
}

void tanh(const BatchMatrix& a, BatchMatrix& out) {
  out = BatchMatrix(a.rows, a.cols, a.batch);
  for (Eigen::Index i = 0; i < a.data.size(); ++i) out.data.data()[i] = std::tanh(a.data.data()[i]);
}

void sigmoid(const BatchMatrix& a, BatchMatrix& out) {
  out = BatchMatrix(a.rows, a.cols, a.batch);
  for (Eigen::Index i = 0; i < a.data.size(); ++i) out.data.data()[i] = 1.0 / (1.0 + std::exp(-a.data.data()[i]));
}

void transpose(const BatchMatrix& a, BatchMatrix& out) {
  out = BatchMatrix(a.cols, a.rows, a.batch);
  for (int i = 0; i < a.batch; ++i) out.block(i) = a.block(i).transpose();
}

void batch_sum(const BatchMatrix& a, BatchMatrix& out) {
  out = BatchMatrix(a.rows, a.cols, 1);
  for (int i = 0; i < a.batch; ++i) out.data += a.block(i);
}

bool inverse(const BatchMatrix& a, BatchMatrix& out) {
  out = BatchMatrix(a.rows, a.cols, a.batch);
  bool ok = true;
  for (int i = 0; i < a.batch; ++i) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(a.block(i));
    if (!lu.isInvertible()) ok = false;
    out.block(i) = lu.inverse();
  }
  return ok;
}

void logdet(const BatchMatrix& a, BatchMatrix& out) {
  out = BatchMatrix(1, 1, a.batch);
  for (int i = 0; i < a.batch; ++i) out.data(0, i) = std::log(std::abs(a.block(i).determinant()));
}

}  // namespace kernels::reference

}  // namespace grassflow

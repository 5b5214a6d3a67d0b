#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "grassflow/geometry.hpp"
#include "grassflow/rng.hpp"

namespace grassflow {

struct DatasetSpec {
  std::string name = "2spirals";  // a texture name or "csv"
  int n = 1000;
  std::uint64_t seed = 0;
  std::string path;  // csv only
  int dim = 3;
  int rank = 1;

  void validate() const;
};

struct SampleBatch {
  std::vector<MatrixXd> points;
  int dim = 0;
  int rank = 0;
  std::vector<int> rows;  // source index of each point (CSV line number, or draw index)

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

namespace data {

const std::vector<std::string>& texture_names();
bool is_texture(const std::string& name);

/// Raw planar draw (n x 2) of a texture before lifting.
MatrixXd planar_sample(const std::string& name, int n, Rng& rng);
/// Scales rows by the largest row norm, prepends a 1 and normalizes: n x 3 unit rows.
MatrixXd lift(const MatrixXd& planar);
/// Textures on Gr(1,3): planar_sample followed by lift.
SampleBatch generate_texture(const DatasetSpec& spec);
SampleBatch generate_texture(const std::string& name, int n, Rng& rng);

/// One sample per line, D*k comma-separated values in row-major order; a non-numeric first
/// line is treated as a header. Each matrix is orthonormalized by Gram-Schmidt.
SampleBatch load_csv(const std::string& path, int dim, int rank);
void save_csv(const std::string& path, const SampleBatch& batch);

/// Texture generation or CSV loading, depending on spec.name.
SampleBatch load(const DatasetSpec& spec);

struct Split {
  SampleBatch train, val, test;
};
/// Deterministic shuffle, then consecutive pieces sized by the fractions (summing to 1).
Split split(const SampleBatch& batch, const std::array<double, 3>& fractions, std::uint64_t seed);
/// Fixed validation/test counts; the rest is training data.
Split split_counts(const SampleBatch& batch, int n_val, int n_test, std::uint64_t seed);

}  // namespace data

}  // namespace grassflow

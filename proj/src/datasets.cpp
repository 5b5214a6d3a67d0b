#include "grassflow/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "grassflow/error.hpp"

namespace grassflow {

void DatasetSpec::validate() const {
  if (n <= 0) throw ConfigError("dataset size must be positive");
  if (name == "csv") {
    if (path.empty()) throw ConfigError("csv dataset needs a path");
    if (rank < 1 || rank >= dim) throw ConfigError("csv dataset needs 1 <= k < D");
    return;
  }
  if (!data::is_texture(name)) {
    std::string msg = "unknown dataset '" + name + "' (valid: ";
    for (const auto& t : data::texture_names()) msg += t + ", ";
    throw ConfigError(msg + "csv)");
  }
  if (dim != 3 || rank != 1) throw ConfigError("texture datasets live on Gr(1,3)");
}

namespace data {

namespace {

constexpr double kPi = std::numbers::pi;

MatrixXd two_spirals(int n, Rng& rng) {
  const int half = (n + 1) / 2;
  MatrixXd arm(half, 2);
  for (int i = 0; i < half; ++i) {
    const double t = std::sqrt(rng.uniform()) * 540.0 * (2.0 * kPi) / 360.0;
    arm(i, 0) = -std::cos(t) * t + rng.uniform() * 0.1;
    arm(i, 1) = std::sin(t) * t + rng.uniform() * 0.1;
  }
  MatrixXd x(n, 2);
  for (int i = 0; i < n; ++i) {
    const double sign = i < half ? 1.0 : -1.0;
    x.row(i) = sign * arm.row(i < half ? i : i - half) / 3.0;
    x(i, 0) += rng.normal() * 0.1;
    x(i, 1) += rng.normal() * 0.1;
  }
  return x;
}

// Swiss roll in the (x, z) plane: t = 1.5 pi (1 + 2u), point t (cos t, sin t) plus noise 0.3.
MatrixXd swissroll(int n, Rng& rng) {
  MatrixXd x(n, 2);
  for (int i = 0; i < n; ++i) {
    const double t = 1.5 * kPi * (1.0 + 2.0 * rng.uniform());
    x(i, 0) = t * std::cos(t) + 0.3 * rng.normal();
    x(i, 1) = t * std::sin(t) + 0.3 * rng.normal();
  }
  return x / 5.0;
}

// Two concentric circles (radius 1 and 0.5), evenly spaced angles, shuffled, noise 0.05.
MatrixXd two_circles(int n, Rng& rng) {
  const int outer = n / 2;
  const int inner = n - outer;
  MatrixXd x(n, 2);
  for (int i = 0; i < outer; ++i) {
    const double a = 2.0 * kPi * i / outer;
    x.row(i) << std::cos(a), std::sin(a);
  }
  for (int i = 0; i < inner; ++i) {
    const double a = 2.0 * kPi * i / inner;
    x.row(outer + i) << 0.5 * std::cos(a), 0.5 * std::sin(a);
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  MatrixXd out(n, 2);
  for (int i = 0; i < n; ++i) {
    out(i, 0) = x(order[std::size_t(i)], 0) + 0.05 * rng.normal();
    out(i, 1) = x(order[std::size_t(i)], 1) + 0.05 * rng.normal();
  }
  return out * 3.0;
}

MatrixXd two_sines(int n, Rng& rng) {
  MatrixXd x(n, 2);
  for (int i = 0; i < n; ++i) {
    const double a = (rng.uniform() - 0.5) * 2.0 * kPi;
    const double u = rng.uniform() < 0.5 ? -1.0 : 1.0;
    x(i, 0) = a + rng.normal() * 0.1;
    x(i, 1) = u * std::sin(a) * 2.5 + rng.normal() * 0.1;
  }
  return x;
}

// Square outline (four sides) plus a central bar and a unit circle.
MatrixXd target(int n, Rng& rng) {
  MatrixXd x(n, 2);
  for (int i = 0; i < n; ++i) {
    const int shape = std::min(6, int(rng.uniform() * 7.0));
    const double theta = 2.0 * kPi * i / n;
    double px = 0.0, py = 0.0;
    if (shape <= 2) {
      px = (rng.uniform() - 0.5) * 4.0;
      py = shape == 0 ? -2.0 : (shape == 2 ? 2.0 : 0.0);
    } else if (shape <= 5) {
      py = (rng.uniform() - 0.5) * 4.0;
      px = shape == 3 ? -2.0 : (shape == 5 ? 2.0 : 0.0);
    } else {
      px = std::cos(theta);
      py = std::sin(theta);
    }
    x(i, 0) = px + rng.normal() * 0.1;
    x(i, 1) = py + rng.normal() * 0.1;
  }
  return x;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_row(const std::string& line, std::vector<double>& out) {
  out.clear();
  std::size_t pos = 0;
  while (pos <= line.size()) {
    std::size_t end = line.find(',', pos);
    if (end == std::string::npos) end = line.size();
    const std::string tok = trim(line.substr(pos, end - pos));
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v)) return false;
    out.push_back(v);
    pos = end + 1;
  }
  return true;
}

}  // namespace

const std::vector<std::string>& texture_names() {
  static const std::vector<std::string> names = {"2spirals", "swissroll", "2circles", "2sines", "target"};
  return names;
}

bool is_texture(const std::string& name) {
  const auto& t = texture_names();
  return std::find(t.begin(), t.end(), name) != t.end();
}

MatrixXd planar_sample(const std::string& name, int n, Rng& rng) {
  if (n <= 0) throw DomainError("sample count must be positive");
  if (name == "2spirals") return two_spirals(n, rng);
  if (name == "swissroll") return swissroll(n, rng);
  if (name == "2circles") return two_circles(n, rng);
  if (name == "2sines") return two_sines(n, rng);
  if (name == "target") return target(n, rng);
  throw ConfigError("unknown texture '" + name + "'");
}

MatrixXd lift(const MatrixXd& planar) {
  const double scale = planar.rowwise().norm().maxCoeff();
  MatrixXd out(planar.rows(), 3);
  out.col(0).setOnes();
  out.rightCols(2) = scale > 0.0 ? MatrixXd(planar / scale) : planar;
  out.array().colwise() /= out.rowwise().norm().array();
  return out;
}

SampleBatch generate_texture(const std::string& name, int n, Rng& rng) {
  const MatrixXd rows = lift(planar_sample(name, n, rng));
  SampleBatch b;
  b.dim = 3;
  b.rank = 1;
  b.points.reserve(std::size_t(n));
  for (int i = 0; i < n; ++i) {
    b.points.push_back(rows.row(i).transpose());
    b.rows.push_back(i);
  }
  return b;
}

SampleBatch generate_texture(const DatasetSpec& spec) {
  spec.validate();
  if (!is_texture(spec.name)) throw ConfigError("'" + spec.name + "' is not a texture");
  Rng rng(spec.seed, 0xda7a);
  return generate_texture(spec.name, spec.n, rng);
}

SampleBatch load_csv(const std::string& path, int dim, int rank) {
  if (rank < 1 || rank >= dim) throw ConfigError("load_csv needs 1 <= k < D");
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  SampleBatch b;
  b.dim = dim;
  b.rank = rank;
  std::string line;
  std::vector<double> vals;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    if (!parse_row(line, vals)) {
      if (lineno == 1) continue;  // header
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(dim * rank) +
                       " finite comma-separated numbers");
    }
    if (int(vals.size()) != dim * rank) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(dim * rank) +
                       " values, found " + std::to_string(vals.size()));
    }
    MatrixXd m(dim, rank);
    for (int i = 0; i < dim; ++i) {
      for (int j = 0; j < rank; ++j) m(i, j) = vals[std::size_t(i * rank + j)];
    }
    try {
      b.points.push_back(geom::gram_schmidt(m).matrix());
    } catch (const RankDeficiencyError&) {
      throw RankDeficiencyError(path + ":" + std::to_string(lineno) + ": row " + std::to_string(b.points.size()) +
                                " is rank deficient");
    }
    b.rows.push_back(lineno);
  }
  return b;
}

void save_csv(const std::string& path, const SampleBatch& batch) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  for (int i = 0; i < batch.dim; ++i) {
    for (int j = 0; j < batch.rank; ++j) out << (i + j == 0 ? "" : ",") << "y" << i << "_" << j;
  }
  out << "\n";
  char buf[32];
  for (const auto& p : batch.points) {
    for (int i = 0; i < batch.dim; ++i) {
      for (int j = 0; j < batch.rank; ++j) {
        const auto r = std::to_chars(buf, buf + sizeof buf, p(i, j));
        out << (i + j == 0 ? "" : ",") << std::string_view(buf, std::size_t(r.ptr - buf));
      }
    }
    out << "\n";
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

SampleBatch load(const DatasetSpec& spec) {
  spec.validate();
  if (spec.name == "csv") return load_csv(spec.path, spec.dim, spec.rank);
  return generate_texture(spec);
}

namespace {

SampleBatch take(const SampleBatch& b, const std::vector<int>& order, std::size_t lo, std::size_t hi) {
  SampleBatch out;
  out.dim = b.dim;
  out.rank = b.rank;
  for (std::size_t i = lo; i < hi; ++i) {
    out.points.push_back(b.points[std::size_t(order[i])]);
    out.rows.push_back(b.rows.empty() ? order[i] : b.rows[std::size_t(order[i])]);
  }
  return out;
}

Split split_sizes(const SampleBatch& batch, std::size_t n_train, std::size_t n_val, std::uint64_t seed) {
  std::vector<int> order(batch.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed, 0x5b1e);
  std::shuffle(order.begin(), order.end(), rng);
  Split s;
  s.train = take(batch, order, 0, n_train);
  s.val = take(batch, order, n_train, n_train + n_val);
  s.test = take(batch, order, n_train + n_val, batch.size());
  return s;
}

}  // namespace

Split split(const SampleBatch& batch, const std::array<double, 3>& fractions, std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw DomainError("split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DomainError("split fractions must sum to 1");
  const auto n = double(batch.size());
  const auto n_train = std::size_t(std::llround(fractions[0] * n));
  const auto n_val = std::min(batch.size() - n_train, std::size_t(std::llround(fractions[1] * n)));
  const std::size_t n_test = batch.size() - n_train - n_val;
  const std::size_t sizes[3] = {n_train, n_val, n_test};
  for (int i = 0; i < 3; ++i) {
    if (fractions[std::size_t(i)] > 0.0 && sizes[i] == 0) throw DomainError("split produced an empty partition");
  }
  return split_sizes(batch, n_train, n_val, seed);
}

Split split_counts(const SampleBatch& batch, int n_val, int n_test, std::uint64_t seed) {
  if (n_val < 0 || n_test < 0) throw DomainError("split counts must be non-negative");
  if (std::size_t(n_val + n_test) >= batch.size()) throw DomainError("split leaves no training data");
  return split_sizes(batch, batch.size() - std::size_t(n_val + n_test), std::size_t(n_val), seed);
}

}  // namespace data

}  // namespace grassflow

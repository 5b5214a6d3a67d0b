#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "grassflow/datasets.hpp"
#include "grassflow/error.hpp"

using namespace grassflow;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("grassflow_test_" + name)).string();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream(path) << text;
}

// Straight transcription of the spiral recipe with the standard library's generators,
// returning the planar draw before the batch scaling.
Eigen::MatrixXd reference_spirals(int n, unsigned seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int half = n / 2;
  Eigen::MatrixXd x(2 * half, 2);
  for (int i = 0; i < half; ++i) {
    const double t = std::sqrt(unif(gen)) * 540.0 * 2.0 * std::numbers::pi / 360.0;
    const double px = -std::cos(t) * t + unif(gen) * 0.1;
    const double py = std::sin(t) * t + unif(gen) * 0.1;
    x.row(i) << px / 3.0, py / 3.0;
    x.row(half + i) << -px / 3.0, -py / 3.0;
  }
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] += gauss(gen) * 0.1;
  return x;
}

std::vector<double> sorted(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const Eigen::Map<const Eigen::VectorXd> x(a.data(), Eigen::Index(a.size())), y(b.data(), Eigen::Index(b.size()));
  const Eigen::VectorXd xc = x.array() - x.mean(), yc = y.array() - y.mean();
  return xc.dot(yc) / (xc.norm() * yc.norm());
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(double(i) / a.size() - double(j) / b.size()));
  }
  return d;
}

}  // namespace

TEST(Datasets, TexturesAreUnitRowsWithPositiveFirstCoordinate) {
  for (const auto& name : data::texture_names()) {
    DatasetSpec spec;
    spec.name = name;
    spec.n = 999;
    spec.seed = 4;
    const SampleBatch b = data::generate_texture(spec);
    ASSERT_EQ(b.size(), 999u) << name;
    for (const auto& p : b.points) {
      EXPECT_NEAR(p.norm(), 1.0, 1e-12);
      EXPECT_GT(p(0, 0), 0.0);
    }
  }
}

TEST(Datasets, SpiralsMatchIndependentReimplementation) {
  Rng rng(1);
  const Eigen::MatrixXd ours = data::planar_sample("2spirals", 10000, rng);
  const Eigen::MatrixXd ref = reference_spirals(10000, 77);
  auto features = [](const Eigen::MatrixXd& p) {
    std::vector<std::vector<double>> f(4);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      f[0].push_back(p(i, 0));
      f[1].push_back(p(i, 1));
      f[2].push_back(p.row(i).norm());
      f[3].push_back(std::atan2(p(i, 1), p(i, 0)));
    }
    return f;
  };
  const auto fo = features(ours), fr = features(ref);
  for (int j = 0; j < 4; ++j) {
    // Quantile-quantile correlation, plus a KS check at alpha = 0.01.
    EXPECT_GT(correlation(sorted(fo[std::size_t(j)]), sorted(fr[std::size_t(j)])), 0.99) << j;
    EXPECT_LT(ks_statistic(fo[std::size_t(j)], fr[std::size_t(j)]), 1.628 * std::sqrt(2.0 / 10000.0)) << j;
  }
}

TEST(Datasets, DeterministicAndStable) {
  // Two-sample KS critical value at alpha = 0.01.
  auto ks_ok = [](const std::vector<double>& a, const std::vector<double>& b) {
    const double na = double(a.size()), nb = double(b.size());
    return ks_statistic(a, b) < 1.628 * std::sqrt((na + nb) / (na * nb));
  };
  for (const auto& name : data::texture_names()) {
    DatasetSpec spec;
    spec.name = name;
    spec.n = 2000;
    spec.seed = 9;
    const SampleBatch a = data::generate_texture(spec);
    const SampleBatch b = data::generate_texture(spec);
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a.points[i], b.points[i]);
    spec.seed = 10;
    const SampleBatch c = data::generate_texture(spec);
    for (int col = 0; col < 3; ++col) {
      std::vector<double> xa, xc;
      for (const auto& p : a.points) xa.push_back(p(col, 0));
      for (const auto& p : c.points) xc.push_back(p(col, 0));
      EXPECT_TRUE(ks_ok(xa, xc)) << name << " column " << col;
    }
    // Before the batch-max scaling the draw does not depend on the batch size.
    Rng r1(1), r2(2);
    const Eigen::MatrixXd p1 = data::planar_sample(name, 2000, r1);
    const Eigen::MatrixXd p2 = data::planar_sample(name, 5000, r2);
    for (int col = 0; col < 2; ++col) {
      std::vector<double> xa(p1.col(col).begin(), p1.col(col).end()), xb(p2.col(col).begin(), p2.col(col).end());
      EXPECT_TRUE(ks_ok(xa, xb)) << name << " planar column " << col;
    }
  }
}

TEST(Datasets, LiftIsInvertible) {
  Rng rng(3);
  const Eigen::MatrixXd planar = data::planar_sample("2sines", 500, rng);
  const Eigen::MatrixXd lifted = data::lift(planar);
  const double scale = planar.rowwise().norm().maxCoeff();
  for (Eigen::Index i = 0; i < planar.rows(); ++i) {
    EXPECT_NEAR(lifted(i, 1) / lifted(i, 0), planar(i, 0) / scale, 1e-12);
    EXPECT_NEAR(lifted(i, 2) / lifted(i, 0), planar(i, 1) / scale, 1e-12);
  }
}

TEST(Datasets, UnknownNameIsRejected) {
  DatasetSpec spec;
  spec.name = "bogus";
  try {
    spec.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("2spirals"), std::string::npos);
  }
}

TEST(Datasets, CsvIdentityRowsUnchanged) {
  const std::string path = temp_path("identity.csv");
  write_file(path, "1,0,0,1,0,0,0,0\n0,0,1,0,0,1,0,0\n");
  const SampleBatch b = data::load_csv(path, 4, 2);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b.points[0], Eigen::MatrixXd::Identity(4, 2));
  Eigen::MatrixXd second = Eigen::MatrixXd::Zero(4, 2);
  second(1, 0) = 1.0;
  second(2, 1) = 1.0;
  EXPECT_EQ(b.points[1], second);
}

TEST(Datasets, CsvOrthonormalizesAndKeepsSpan) {
  Rng rng(5);
  std::vector<Eigen::MatrixXd> raw;
  std::ofstream out(temp_path("random.csv"));
  out.precision(17);
  out << "a,b,c,d,e,f,g,h\n";
  for (int n = 0; n < 50; ++n) {
    Eigen::MatrixXd m(4, 2);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    raw.push_back(m);
    for (int i = 0; i < 4; ++i) out << m(i, 0) << "," << m(i, 1) << (i == 3 ? "\n" : ",");
  }
  out.close();
  const SampleBatch b = data::load_csv(temp_path("random.csv"), 4, 2);
  ASSERT_EQ(b.size(), 50u);
  for (std::size_t n = 0; n < 50; ++n) {
    const Eigen::MatrixXd& y = b.points[n];
    EXPECT_LT((y.transpose() * y - Eigen::MatrixXd::Identity(2, 2)).norm(), 1e-12);
    const Eigen::MatrixXd& m = raw[n];
    const Eigen::MatrixXd proj = m * (m.transpose() * m).inverse() * m.transpose();
    EXPECT_LT((proj - y * y.transpose()).norm(), 1e-9);
    EXPECT_EQ(b.rows[n], int(n) + 2);
  }
}

TEST(Datasets, CsvErrorsNameTheLine) {
  const std::string path = temp_path("bad.csv");
  write_file(path, "1,0,0\n0,1,0\n0,x,1\n");
  try {
    data::load_csv(path, 3, 1);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
  write_file(path, "1,0,0\n0,1\n");
  EXPECT_THROW(data::load_csv(path, 3, 1), ParseError);
  write_file(path, "1,0,0,1\n1,2,2,4\n");
  try {
    data::load_csv(path, 3, 1);
    FAIL();
  } catch (const ParseError&) {
  }
  write_file(path, "1,0,0,1,0,0\n1,2,2,4,3,6\n");
  try {
    data::load_csv(path, 3, 2);
    FAIL();
  } catch (const RankDeficiencyError& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(data::load_csv(temp_path("missing.csv"), 3, 1), IoError);
}

TEST(Datasets, CsvRoundTrip) {
  DatasetSpec spec;
  spec.n = 100;
  spec.name = "target";
  const SampleBatch b = data::generate_texture(spec);
  const std::string path = temp_path("roundtrip.csv");
  data::save_csv(path, b);
  const SampleBatch back = data::load_csv(path, 3, 1);
  ASSERT_EQ(back.size(), b.size());
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_LT((back.points[i] - b.points[i]).norm(), 1e-15);
}

TEST(Datasets, Split) {
  DatasetSpec spec;
  spec.n = 1500;
  const SampleBatch b = data::generate_texture(spec);

  const data::Split all = data::split(b, {1.0, 0.0, 0.0}, 3);
  EXPECT_EQ(all.train.size(), 1500u);
  EXPECT_TRUE(all.val.empty());
  EXPECT_TRUE(all.test.empty());

  const data::Split s1 = data::split(b, {0.6, 0.2, 0.2}, 3);
  const data::Split s2 = data::split(b, {0.6, 0.2, 0.2}, 3);
  EXPECT_EQ(s1.train.rows, s2.train.rows);
  EXPECT_EQ(s1.test.rows, s2.test.rows);
  std::set<int> seen;
  for (const auto* part : {&s1.train, &s1.val, &s1.test}) {
    for (int r : part->rows) EXPECT_TRUE(seen.insert(r).second);
  }
  EXPECT_EQ(seen.size(), 1500u);

  const data::Split counts = data::split_counts(b, 500, 500, 1);
  EXPECT_EQ(counts.train.size(), 500u);
  EXPECT_EQ(counts.val.size(), 500u);
  EXPECT_EQ(counts.test.size(), 500u);

  EXPECT_THROW(data::split(b, {0.5, 0.2, 0.2}, 1), DomainError);
  DatasetSpec tiny = spec;
  tiny.n = 3;
  EXPECT_THROW(data::split(data::generate_texture(tiny), {0.9, 0.05, 0.05}, 1), DomainError);
}

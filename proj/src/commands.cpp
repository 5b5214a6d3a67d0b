#include "grassflow/commands.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "grassflow/error.hpp"
#include "grassflow/log.hpp"

namespace grassflow::cmd {

namespace fs = std::filesystem;

namespace {

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

}  // namespace

void write_sidecar(const std::string& path, const std::map<std::string, std::string>& fields) {
  const std::string meta = path + ".meta.json";
  std::ofstream out(meta);
  if (!out) throw IoError("cannot write '" + meta + "'");
  out << nlohmann::json(fields).dump(1) << "\n";
}

SampleBatch gen_data(const RunConfig& cfg, const std::string& path) {
  if (path.empty()) throw ConfigError("gen-data needs an output path (--out)");
  const SampleBatch b = data::load(cfg.data);
  ensure_parent(path);
  data::save_csv(path, b);
  write_sidecar(path, {{"dataset", cfg.data.name},
                       {"n", std::to_string(b.size())},
                       {"seed", std::to_string(cfg.data.seed)},
                       {"dim", std::to_string(b.dim)},
                       {"rank", std::to_string(b.rank)},
                       {"source", cfg.data.path}});
  log::info("wrote " + std::to_string(b.size()) + " samples to " + path);
  return b;
}

train::TrainResult train(const RunConfig& cfg) {
  if (cfg.out.empty()) throw ConfigError("train needs an output directory (--out or run.out)");
  fs::create_directories(cfg.out);
  {
    std::ofstream c(fs::path(cfg.out) / "config.txt");
    c << config::dump(cfg);
  }
  train::TrainData td;
  if (data::is_texture(cfg.data.name)) {
    td.texture = cfg.data.name;
    Rng vr(cfg.data.seed, 0x7a1d);
    if (cfg.val_n > 0) td.val = data::generate_texture(cfg.data.name, cfg.val_n, vr);
  } else {
    const SampleBatch all = data::load(cfg.data);
    const int n_val = int(std::lround(cfg.val_fraction * double(all.size())));
    const int n_test = int(std::lround(cfg.test_fraction * double(all.size())));
    data::Split s = data::split_counts(all, n_val, n_test, cfg.data.seed);
    td.train = std::move(s.train);
    td.val = std::move(s.val);
    if (!s.test.empty()) data::save_csv((fs::path(cfg.out) / "test.csv").string(), s.test);
    log::info("split " + std::to_string(all.size()) + " samples into " + std::to_string(td.train.size()) + "/" +
              std::to_string(td.val.size()) + "/" + std::to_string(s.test.size()));
  }
  TrainConfig tc = cfg.train;
  tc.out_dir = cfg.out;
  const int report = std::max(1, tc.eval_every);
  train::TrainResult r = train::train(tc, td, [&](const EpochMetrics& m) {
    if (m.epoch % report == 0) {
      std::string line = "epoch " + std::to_string(m.epoch) + " train_nll " + fmt(m.train_nll);
      if (std::isfinite(m.val_nll)) line += " val_nll " + fmt(m.val_nll);
      log::info(line);
    }
  });
  return r;
}

flow::Samples sample(const Checkpoint& ckpt, int n, std::uint64_t seed, const SolverConfig& solver,
                     const std::string& path) {
  if (n < 0) throw ConfigError("sample count must be non-negative");
  if (path.empty()) throw ConfigError("sample needs an output path (--out)");
  const VectorFieldParams& p = ckpt.params;
  flow::Samples s;
  if (n > 0) {
    Rng rng(seed, 0x5a3b);
    s = flow::sample_flow(p, ckpt.prior(), rng, n, solver);
  }
  SampleBatch b;
  b.dim = p.dim;
  b.rank = p.rank;
  b.points = s.points;
  ensure_parent(path);
  data::save_csv(path, b);
  write_sidecar(path, {{"n", std::to_string(n)},
                       {"seed", std::to_string(seed)},
                       {"dim", std::to_string(p.dim)},
                       {"rank", std::to_string(p.rank)},
                       {"solver", solver_name(solver.method)}});
  return s;
}

double DensityGrid::integral() const { return (logp.array().exp() * weights.array()).sum(); }

Eigen::Vector3d DensityGrid::direction(double theta, double phi) {
  return {std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)};
}

DensityGrid density_grid(const Checkpoint& ckpt, int resolution, const SolverConfig& solver) {
  if (ckpt.params.dim != 3 || ckpt.params.rank != 1) {
    throw ConfigError("density-grid needs a Gr(1,3) model, got Gr(" + std::to_string(ckpt.params.rank) + "," +
                      std::to_string(ckpt.params.dim) + ")");
  }
  if (resolution < 1) throw ConfigError("grid resolution must be positive");
  const int nt = resolution;
  const int np = 2 * resolution;
  DensityGrid g;
  g.theta.resize(nt);
  g.phi.resize(np);
  g.weights.resize(nt, np);
  const double dt = M_PI / nt;
  const double dp = 2.0 * M_PI / np;
  for (int i = 0; i < nt; ++i) g.theta(i) = (i + 0.5) * dt;
  for (int j = 0; j < np; ++j) g.phi(j) = (j + 0.5) * dp;
  std::vector<MatrixXd> pts;
  pts.reserve(std::size_t(nt * np));
  for (int i = 0; i < nt; ++i) {
    const double band = (std::cos(i * dt) - std::cos((i + 1) * dt)) * dp / (4.0 * M_PI);
    for (int j = 0; j < np; ++j) {
      g.weights(i, j) = band;
      pts.push_back(MatrixXd(DensityGrid::direction(g.theta(i), g.phi(j))));
    }
  }
  const VectorXd lp = flow::log_prob(ckpt.params, ckpt.prior(), pts, solver);
  g.logp.resize(nt, np);
  for (int i = 0; i < nt; ++i)
    for (int j = 0; j < np; ++j) g.logp(i, j) = lp(i * np + j);
  return g;
}

void write_grid_csv(const std::string& path, const DensityGrid& g) {
  ensure_parent(path);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.precision(17);
  out << "theta,phi,logp\n";
  for (Eigen::Index i = 0; i < g.theta.size(); ++i)
    for (Eigen::Index j = 0; j < g.phi.size(); ++j) out << g.theta(i) << "," << g.phi(j) << "," << g.logp(i, j) << "\n";
  if (!out) throw IoError("failed writing '" + path + "'");
}

void write_ppm(const std::string& path, const DensityGrid& g) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  const auto h = g.logp.rows();
  const auto w = g.logp.cols();
  out << "P6\n" << w << " " << h << "\n255\n";
  const double top = g.logp.maxCoeff();
  for (Eigen::Index i = 0; i < h; ++i) {
    for (Eigen::Index j = 0; j < w; ++j) {
      const double v = std::exp(g.logp(i, j) - top);
      const auto c = static_cast<unsigned char>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
      out.put(char(c)).put(char(c)).put(char(c));
    }
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

EvalResult eval(const Checkpoint& ckpt, const SampleBatch& batch, const SolverConfig& solver) {
  if (batch.empty()) throw DomainError("eval: dataset is empty");
  if (batch.dim != ckpt.params.dim || batch.rank != ckpt.params.rank) {
    throw ConfigError("eval: data is Gr(" + std::to_string(batch.rank) + "," + std::to_string(batch.dim) +
                      ") but the model is Gr(" + std::to_string(ckpt.params.rank) + "," +
                      std::to_string(ckpt.params.dim) + ")");
  }
  const VectorXd nll = -flow::log_prob(ckpt.params, ckpt.prior(), batch.points, solver);
  EvalResult r;
  r.n = int(nll.size());
  r.mean_nll = nll.mean();
  r.std_nll = r.n > 1 ? std::sqrt((nll.array() - r.mean_nll).square().sum() / (r.n - 1)) : 0.0;
  return r;
}

}  // namespace grassflow::cmd

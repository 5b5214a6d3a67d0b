#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>
#include <omp.h>

#include "grassflow/commands.hpp"
#include "grassflow/error.hpp"
#include "grassflow/log.hpp"

using namespace grassflow;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  std::string out;
  int threads = 1;
  std::string solver;
  double atol = 0.0;
  double rtol = 0.0;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "key=value config file");
  app->add_option("--set", c.sets, "extra setting, e.g. --set train.lr=1e-3 (repeatable)");
  app->add_option("--seed", c.seed, "seed for data, initialization and sampling");
  app->add_option("--out", c.out, "output file or directory");
  app->add_option("--threads", c.threads, "OpenMP threads")->check(CLI::PositiveNumber);
  app->add_option("--solver", c.solver, "ODE solver")->check(CLI::IsMember({"dopri5", "rk4"}));
  app->add_option("--atol", c.atol, "absolute tolerance for dopri5")->check(CLI::PositiveNumber);
  app->add_option("--rtol", c.rtol, "relative tolerance for dopri5")->check(CLI::PositiveNumber);
}

RunConfig resolve(CLI::App* app, const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : config::load(c.config);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (app->count("--seed")) {
    cfg.data.seed = c.seed;
    cfg.train.seed = c.seed;
  }
  if (app->count("--out")) cfg.out = c.out;
  if (app->count("--threads")) cfg.threads = c.threads;
  if (app->count("--solver")) cfg.train.solver.method = parse_solver(c.solver);
  if (app->count("--atol")) cfg.train.solver.atol = c.atol;
  if (app->count("--rtol")) cfg.train.solver.rtol = c.rtol;
  cfg.finalize();
  omp_set_num_threads(cfg.threads);
  return cfg;
}

std::string with_suffix(const std::string& base, const std::string& ext) {
  if (base.size() >= ext.size() && base.compare(base.size() - ext.size(), ext.size(), ext) == 0) return base;
  return base + ext;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous normalizing flows on Grassmann manifolds"};
  app.require_subcommand(1);

  Common gen_c, train_c, sample_c, grid_c, eval_c;
  auto* gen = app.add_subcommand("gen-data", "generate or export a dataset as CSV");
  add_common(gen, gen_c);
  auto* tr = app.add_subcommand("train", "train a flow; writes checkpoints and metrics into --out");
  add_common(tr, train_c);

  std::string ckpt_path;
  int n = 1000;
  auto* sm = app.add_subcommand("sample", "draw samples from a trained model");
  add_common(sm, sample_c);
  sm->add_option("--checkpoint", ckpt_path, "checkpoint JSON")->required();
  sm->add_option("-n,--n", n, "number of samples")->check(CLI::NonNegativeNumber);

  int resolution = 90;
  auto* dg = app.add_subcommand("density-grid", "log-density on a lat-long sphere grid (Gr(1,3) only)");
  add_common(dg, grid_c);
  dg->add_option("--checkpoint", ckpt_path, "checkpoint JSON")->required();
  dg->add_option("--resolution", resolution, "polar cells; longitude uses twice as many")->check(CLI::PositiveNumber);

  std::string data_path;
  auto* ev = app.add_subcommand("eval", "mean NLL of a dataset under a model");
  add_common(ev, eval_c);
  ev->add_option("--checkpoint", ckpt_path, "checkpoint JSON")->required();
  ev->add_option("--data", data_path, "CSV dataset (default: the configured dataset)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (const char* env = std::getenv("GRASSFLOW_LOG")) log::set_level(log::parse_level(env));
    if (gen->parsed()) {
      const RunConfig cfg = resolve(gen, gen_c);
      cmd::gen_data(cfg, cfg.out);
    } else if (tr->parsed()) {
      const RunConfig cfg = resolve(tr, train_c);
      const train::TrainResult r = cmd::train(cfg);
      std::cout << "trained " << r.last.epoch << " epochs; final val NLL ";
      double last_val = std::numeric_limits<double>::quiet_NaN();
      for (const auto& m : r.history)
        if (std::isfinite(m.val_nll)) last_val = m.val_nll;
      if (std::isfinite(last_val)) {
        std::cout << last_val << " (best " << r.best.best_val << " at epoch " << r.best.epoch << ")";
      } else {
        std::cout << "n/a";
      }
      std::cout << "; checkpoints in " << cfg.out << "\n";
    } else if (sm->parsed()) {
      const RunConfig cfg = resolve(sm, sample_c);
      const Checkpoint ck = checkpoint::load(ckpt_path);
      const std::string out = cfg.out.empty() ? "samples.csv" : cfg.out;
      cmd::sample(ck, n, cfg.train.seed, cfg.train.solver, out);
      std::cout << "wrote " << n << " samples to " << out << "\n";
    } else if (dg->parsed()) {
      const RunConfig cfg = resolve(dg, grid_c);
      const Checkpoint ck = checkpoint::load(ckpt_path);
      const std::string base = cfg.out.empty() ? "density" : cfg.out;
      const cmd::DensityGrid g = cmd::density_grid(ck, resolution, cfg.train.solver);
      const std::string csv = with_suffix(base, ".csv");
      const std::string ppm = base.size() > 4 && base.ends_with(".csv") ? base.substr(0, base.size() - 4) + ".ppm"
                                                                         : base + ".ppm";
      cmd::write_grid_csv(csv, g);
      cmd::write_ppm(ppm, g);
      cmd::write_sidecar(csv, {{"checkpoint", ckpt_path},
                               {"resolution", std::to_string(resolution)},
                               {"rows", std::to_string(g.theta.size())},
                               {"cols", std::to_string(g.phi.size())},
                               {"columns", "theta,phi,logp"},
                               {"theta", "polar angle from +z"},
                               {"phi", "longitude from +x"},
                               {"solver", solver_name(cfg.train.solver.method)},
                               {"ppm", ppm}});
      std::cout << "grid integral " << g.integral() << "; wrote " << csv << " and " << ppm << "\n";
    } else if (ev->parsed()) {
      RunConfig cfg = resolve(ev, eval_c);
      const Checkpoint ck = checkpoint::load(ckpt_path);
      SampleBatch b;
      if (!data_path.empty()) {
        if (!std::filesystem::is_regular_file(data_path)) throw ConfigError("dataset file not found: " + data_path);
        b = data::load_csv(data_path, ck.params.dim, ck.params.rank);
      } else {
        b = data::load(cfg.data);
      }
      const cmd::EvalResult r = cmd::eval(ck, b, cfg.train.solver);
      std::cout << "nll " << r.mean_nll << " +- " << r.std_nll << " (n=" << r.n << ")\n";
    }
  } catch (const ConfigError& e) {
    log::error(e.what());
    return 2;
  } catch (const std::exception& e) {
    log::error(e.what());
    return 1;
  }
  return 0;
}

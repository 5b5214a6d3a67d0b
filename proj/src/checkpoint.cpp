#include "grassflow/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "grassflow/error.hpp"

namespace grassflow {

using nlohmann::json;

GrassmannGaussianPrior Checkpoint::prior() const {
  return GrassmannGaussianPrior(StiefelPoint(prior_mean), prior_row_cov, prior_col_cov);
}

void Checkpoint::set_prior(const GrassmannGaussianPrior& p) {
  prior_mean = p.mean().matrix();
  prior_row_cov = p.row_cov();
  prior_col_cov = p.col_cov();
}

namespace checkpoint {

namespace {

json array(const MatrixXd& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

MatrixXd matrix(const json& j, const std::string& what) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || Eigen::Index(data.size()) != rows * cols) {
    throw ParseError("checkpoint: array '" + what + "' has inconsistent shape");
  }
  return Eigen::Map<const MatrixXd>(data.data(), rows, cols);
}

}  // namespace

std::string to_json(const Checkpoint& c) {
  VectorFieldParams p = c.params;
  json arrays = json::object();
  for (const auto& e : p.entries()) {
    if (e.name == "time_scale") continue;
    arrays[e.name] = array(Eigen::Map<const MatrixXd>(e.data, e.size, 1));
  }
  // Keep true shapes for the matrices.
  arrays["w_in"] = array(p.w_in);
  for (std::size_t i = 0; i < p.layers.size(); ++i) arrays["layer" + std::to_string(i) + ".w"] = array(p.layers[i].w);

  json j;
  j["version"] = Checkpoint::kVersion;
  j["model"] = {{"dim", p.dim},
                {"rank", p.rank},
                {"widths", p.widths},
                {"time_scale", p.time_scale},
                {"train_time", p.train_time},
                {"arrays", arrays}};
  j["prior"] = {{"mean", array(c.prior_mean)}, {"row_cov", array(c.prior_row_cov)}, {"col_cov", array(c.prior_col_cov)}};
  j["config"] = c.config;
  j["epoch"] = c.epoch;
  j["rng"] = {{"seed", c.rng.seed()}, {"stream", c.rng.stream()}, {"counter", c.rng.counter()}};
  j["best_val"] = std::isfinite(c.best_val) ? json(c.best_val) : json(nullptr);
  j["decay_all_weights"] = c.decay_all_weights;
  return j.dump(1);
}

Checkpoint from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  try {
    if (j.at("version").get<std::string>() != Checkpoint::kVersion) {
      throw ParseError("checkpoint: unsupported version '" + j.at("version").get<std::string>() + "'");
    }
    const json& m = j.at("model");
    Checkpoint c;
    c.params = field::init(m.at("dim").get<int>(), m.at("rank").get<int>(), m.at("widths").get<std::vector<int>>(), 0);
    c.params.time_scale = m.at("time_scale").get<double>();
    c.params.train_time = m.at("train_time").get<bool>();
    const json& arrays = m.at("arrays");
    for (auto& e : c.params.entries()) {
      if (e.name == "time_scale") continue;
      const MatrixXd a = matrix(arrays.at(e.name), e.name);
      if (a.size() != e.size) throw ParseError("checkpoint: array '" + e.name + "' has the wrong size");
      std::copy(a.data(), a.data() + a.size(), e.data);
    }
    const json& pr = j.at("prior");
    c.prior_mean = matrix(pr.at("mean"), "prior.mean");
    c.prior_row_cov = matrix(pr.at("row_cov"), "prior.row_cov");
    c.prior_col_cov = matrix(pr.at("col_cov"), "prior.col_cov");
    c.config = j.at("config").get<std::map<std::string, std::string>>();
    c.epoch = j.at("epoch").get<int>();
    const json& r = j.at("rng");
    c.rng = Rng(r.at("seed").get<std::uint64_t>(), r.at("stream").get<std::uint64_t>());
    c.rng.set_counter(r.at("counter").get<std::uint64_t>());
    c.best_val = j.at("best_val").is_null() ? std::numeric_limits<double>::infinity() : j.at("best_val").get<double>();
    c.decay_all_weights = j.at("decay_all_weights").get<bool>();
    return c;
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
}

void save(const std::string& path, const Checkpoint& c) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << to_json(c) << "\n";
  if (!out) throw IoError("failed writing '" + path + "'");
}

Checkpoint load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace checkpoint

}  // namespace grassflow

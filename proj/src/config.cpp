#include "grassflow/config.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "grassflow/error.hpp"

namespace grassflow {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) throw ConfigError("bad value for " + key + ": '" + v + "'");
  return out;
}

bool boolean(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("bad value for " + key + ": '" + v + "' (expected true or false)");
}

std::vector<int> int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(number<int>(key, trim(item)));
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"data.name", [](RunConfig& c, auto&, auto& v) { c.data.name = v; }},
      {"data.n", [](RunConfig& c, auto& k, auto& v) { c.data.n = number<int>(k, v); }},
      {"data.seed", [](RunConfig& c, auto& k, auto& v) { c.data.seed = number<std::uint64_t>(k, v); }},
      {"data.path", [](RunConfig& c, auto&, auto& v) { c.data.path = v; }},
      {"data.dim", [](RunConfig& c, auto& k, auto& v) { c.data.dim = number<int>(k, v); }},
      {"data.rank", [](RunConfig& c, auto& k, auto& v) { c.data.rank = number<int>(k, v); }},
      {"data.val_n", [](RunConfig& c, auto& k, auto& v) { c.val_n = number<int>(k, v); }},
      {"data.val_fraction", [](RunConfig& c, auto& k, auto& v) { c.val_fraction = number<double>(k, v); }},
      {"data.test_fraction", [](RunConfig& c, auto& k, auto& v) { c.test_fraction = number<double>(k, v); }},
      {"model.widths", [](RunConfig& c, auto& k, auto& v) { c.train.widths = int_list(k, v); }},
      {"model.train_time", [](RunConfig& c, auto& k, auto& v) { c.train.train_time = boolean(k, v); }},
      {"model.time_init", [](RunConfig& c, auto& k, auto& v) { c.train.time_init = number<double>(k, v); }},
      {"prior.sigma", [](RunConfig& c, auto& k, auto& v) { c.train.prior_sigma = number<double>(k, v); }},
      {"prior.sigma_v", [](RunConfig& c, auto& k, auto& v) { c.train.prior_sigma_v = number<double>(k, v); }},
      {"train.lr", [](RunConfig& c, auto& k, auto& v) { c.train.lr = number<double>(k, v); }},
      {"train.beta1", [](RunConfig& c, auto& k, auto& v) { c.train.beta1 = number<double>(k, v); }},
      {"train.beta2", [](RunConfig& c, auto& k, auto& v) { c.train.beta2 = number<double>(k, v); }},
      {"train.adam_eps", [](RunConfig& c, auto& k, auto& v) { c.train.adam_eps = number<double>(k, v); }},
      {"train.weight_decay", [](RunConfig& c, auto& k, auto& v) { c.train.weight_decay = number<double>(k, v); }},
      {"train.epochs", [](RunConfig& c, auto& k, auto& v) { c.train.epochs = number<int>(k, v); }},
      {"train.batch_size", [](RunConfig& c, auto& k, auto& v) { c.train.batch_size = number<int>(k, v); }},
      {"train.lr_step_epoch", [](RunConfig& c, auto& k, auto& v) { c.train.lr_step_epoch = number<int>(k, v); }},
      {"train.lr_step_factor", [](RunConfig& c, auto& k, auto& v) { c.train.lr_step_factor = number<double>(k, v); }},
      {"train.seed", [](RunConfig& c, auto& k, auto& v) { c.train.seed = number<std::uint64_t>(k, v); }},
      {"train.dt", [](RunConfig& c, auto& k, auto& v) { c.train.train_dt = number<double>(k, v); }},
      {"train.chunk", [](RunConfig& c, auto& k, auto& v) { c.train.chunk = number<int>(k, v); }},
      {"train.eval_every", [](RunConfig& c, auto& k, auto& v) { c.train.eval_every = number<int>(k, v); }},
      {"train.val_limit", [](RunConfig& c, auto& k, auto& v) { c.train.val_limit = number<int>(k, v); }},
      {"solver.method", [](RunConfig& c, auto&, auto& v) { c.train.solver.method = parse_solver(v); }},
      {"solver.atol", [](RunConfig& c, auto& k, auto& v) { c.train.solver.atol = number<double>(k, v); }},
      {"solver.rtol", [](RunConfig& c, auto& k, auto& v) { c.train.solver.rtol = number<double>(k, v); }},
      {"solver.dt", [](RunConfig& c, auto& k, auto& v) { c.train.solver.fixed_dt = number<double>(k, v); }},
      {"solver.max_steps", [](RunConfig& c, auto& k, auto& v) { c.train.solver.max_steps = number<int>(k, v); }},
      {"solver.chunk", [](RunConfig& c, auto& k, auto& v) { c.train.solver.chunk = number<int>(k, v); }},
      {"run.out", [](RunConfig& c, auto&, auto& v) { c.out = v; }},
      {"run.threads", [](RunConfig& c, auto& k, auto& v) { c.threads = number<int>(k, v); }},
  };
  return table;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = setters().find(key);
  if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(*this, key, value);
}

void RunConfig::finalize() {
  namespace fs = std::filesystem;
  if (data.name != "csv" && data::is_texture(data.name)) {
    data.dim = 3;
    data.rank = 1;
  }
  train.dim = data.dim;
  train.rank = data.rank;
  if (!train.widths.empty()) train.widths.front() = data.dim * data.rank;
  if (threads < 1) throw ConfigError("run.threads must be positive");
  if (val_n < 0) throw ConfigError("data.val_n must be non-negative");
  if (val_fraction < 0.0 || test_fraction < 0.0 || val_fraction + test_fraction >= 1.0) {
    throw ConfigError("data.val_fraction + data.test_fraction must lie in [0, 1)");
  }
  data.validate();
  train.validate();
  if (!data.path.empty()) {
    fs::path p(data.path);
    if (p.is_relative() && !base_dir.empty()) p = fs::path(base_dir) / p;
    data.path = fs::absolute(p).lexically_normal().string();
    if (data.name == "csv" && !fs::is_regular_file(data.path)) throw ConfigError("dataset file not found: " + data.path);
  }
  if (!out.empty()) out = fs::absolute(fs::path(out)).lexically_normal().string();
}

namespace config {

std::vector<std::pair<std::string, std::string>> parse(const std::string& text, const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> out;
  std::stringstream ss(text);
  std::string section;
  int lineno = 0;
  for (std::string line; std::getline(ss, line);) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key=value");
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + "empty key");
    if (!section.empty()) key = section + "." + key;
    if (!setters().count(key)) throw ConfigError(where + "unknown config key '" + key + "'");
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

void apply(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& settings) {
  for (const auto& [k, v] : settings) cfg.set(k, v);
}

RunConfig load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg;
  cfg.base_dir = std::filesystem::absolute(std::filesystem::path(path)).parent_path().string();
  config::apply(cfg, parse(ss.str(), path));
  return cfg;
}

std::vector<std::string> keys() {
  std::vector<std::string> k;
  for (const auto& [name, fn] : setters()) k.push_back(name);
  return k;
}

std::string dump(const RunConfig& c) {
  const auto snap = train::snapshot(c.train);
  std::ostringstream out;
  out.precision(17);
  out << "data.name = " << c.data.name << "\ndata.n = " << c.data.n << "\ndata.seed = " << c.data.seed << "\n";
  if (!c.data.path.empty()) out << "data.path = " << c.data.path << "\n";
  out << "data.dim = " << c.data.dim << "\ndata.rank = " << c.data.rank << "\ndata.val_n = " << c.val_n
      << "\ndata.val_fraction = " << c.val_fraction << "\ndata.test_fraction = " << c.test_fraction << "\n";
  for (const auto& [k, v] : snap) {
    if (k == "model.dim" || k == "model.rank") continue;
    out << k << " = " << v << "\n";
  }
  out << "train.adam_eps = " << c.train.adam_eps << "\ntrain.val_limit = " << c.train.val_limit
      << "\nsolver.dt = " << c.train.solver.fixed_dt << "\nsolver.max_steps = " << c.train.solver.max_steps
      << "\nsolver.chunk = " << c.train.solver.chunk << "\nrun.threads = " << c.threads << "\n";
  if (!c.out.empty()) out << "run.out = " << c.out << "\n";
  return out.str();
}

}  // namespace config

}  // namespace grassflow

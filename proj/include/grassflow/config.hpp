#pragma once

#include <map>
#include <string>
#include <vector>

#include "grassflow/datasets.hpp"
#include "grassflow/trainer.hpp"

namespace grassflow {

/// Everything a CLI command needs. Dimensions come from the data section and are copied into
/// the model settings by finalize().
struct RunConfig {
  DatasetSpec data;
  int val_n = 500;           // validation draws for textures
  double val_fraction = 0.1; // csv splits
  double test_fraction = 0.1;
  TrainConfig train;
  std::string out;
  int threads = 1;
  std::string base_dir;  // directory relative data paths are resolved against

  /// Applies one "section.key=value" setting. Throws ConfigError on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// Copies shared fields, resolves paths to absolute form and validates.
  void finalize();
};

namespace config {

/// Parses key=value lines. "# ..." comments, blank lines and "[section]" headers are allowed;
/// keys under a header get the "section." prefix.
std::vector<std::pair<std::string, std::string>> parse(const std::string& text, const std::string& origin = "config");
RunConfig load(const std::string& path);
void apply(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& settings);
/// All accepted keys, sorted.
std::vector<std::string> keys();
/// Settings that reproduce cfg when parsed again.
std::string dump(const RunConfig& cfg);

}  // namespace config

}  // namespace grassflow

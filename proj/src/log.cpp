#include "grassflow/log.hpp"

#include <cstdlib>
#include <iostream>
#include <optional>

#include "grassflow/error.hpp"

namespace grassflow::log {

namespace {

std::optional<Level>& current() {
  static std::optional<Level> l;
  return l;
}

void emit(Level l, const char* tag, const std::string& msg) {
  if (int(l) > int(level())) return;
  std::cerr << "[" << tag << "] " << msg << "\n";
}

}  // namespace

Level parse_level(const std::string& name) {
  if (name == "error") return Level::kError;
  if (name == "info") return Level::kInfo;
  if (name == "debug") return Level::kDebug;
  throw ConfigError("unknown log level '" + name + "' (expected error, info or debug)");
}

Level level() {
  if (!current()) {
    const char* env = std::getenv("GRASSFLOW_LOG");
    current() = env ? parse_level(env) : Level::kInfo;
  }
  return *current();
}

void set_level(Level l) { current() = l; }

void error(const std::string& msg) { emit(Level::kError, "error", msg); }
void info(const std::string& msg) { emit(Level::kInfo, "info", msg); }
void debug(const std::string& msg) { emit(Level::kDebug, "debug", msg); }

}  // namespace grassflow::log

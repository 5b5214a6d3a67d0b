#pragma once

#include <string>

namespace grassflow::log {

enum class Level { kError = 0, kInfo = 1, kDebug = 2 };

/// Reads GRASSFLOW_LOG (error, info, debug); defaults to info.
Level level();
void set_level(Level l);
/// Throws ConfigError on an unknown name.
Level parse_level(const std::string& name);

void error(const std::string& msg);
void info(const std::string& msg);
void debug(const std::string& msg);

}  // namespace grassflow::log

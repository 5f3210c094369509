#pragma once

#include <string>
#include <string_view>

namespace cmtf::log {

enum class Level { Error, Warn, Info, Debug };

/// Parses error|warn|info|debug; throws ConfigError otherwise.
Level parse_level(std::string_view s);

/// Applies CMTF_LOG when set (default warn).
void init_from_env();
void set_level(Level level);

void error(const std::string& msg);
void warn(const std::string& msg);
void info(const std::string& msg);
void debug(const std::string& msg);

}  // namespace cmtf::log

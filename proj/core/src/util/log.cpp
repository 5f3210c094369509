#include "cmtf/log.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>

#include "cmtf/error.hpp"

namespace cmtf::log {

namespace {

spdlog::logger& logger() {
    static std::shared_ptr<spdlog::logger> instance = [] {
        auto l = spdlog::stderr_color_mt("cmtf");
        l->set_pattern("[%l] %v");
        l->set_level(spdlog::level::warn);
        return l;
    }();
    return *instance;
}

}  // namespace

Level parse_level(std::string_view s) {
    if (s == "error") return Level::Error;
    if (s == "warn") return Level::Warn;
    if (s == "info") return Level::Info;
    if (s == "debug") return Level::Debug;
    throw ConfigError("CMTF_LOG must be one of error, warn, info, debug (got '" + std::string(s) + "')");
}

void set_level(Level level) {
    static const spdlog::level::level_enum map[] = {spdlog::level::err, spdlog::level::warn, spdlog::level::info,
                                                     spdlog::level::debug};
    logger().set_level(map[static_cast<int>(level)]);
}

void init_from_env() {
    const char* v = std::getenv("CMTF_LOG");
    set_level(v && *v ? parse_level(v) : Level::Warn);
}

void error(const std::string& msg) { logger().error(msg); }
void warn(const std::string& msg) { logger().warn(msg); }
void info(const std::string& msg) { logger().info(msg); }
void debug(const std::string& msg) { logger().debug(msg); }

}  // namespace cmtf::log

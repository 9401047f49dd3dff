#include "sucode/log.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>

namespace sucode::log {

namespace {

std::shared_ptr<spdlog::logger> logger() {
  static auto instance = [] {
    auto l = spdlog::stderr_color_mt("sucode");
    l->set_pattern("[%H:%M:%S] [%^%l%$] %v");
    return l;
  }();
  return instance;
}

}  // namespace

void write(Level level, const std::string& message) {
  switch (level) {
    case Level::Debug: logger()->debug(message); break;
    case Level::Info: logger()->info(message); break;
    case Level::Warn: logger()->warn(message); break;
    case Level::Error: logger()->error(message); break;
  }
}

void set_level(Level level) {
  static constexpr spdlog::level::level_enum map[] = {spdlog::level::debug, spdlog::level::info,
                                                      spdlog::level::warn, spdlog::level::err};
  logger()->set_level(map[static_cast<int>(level)]);
}

void configure_from_env() {
  const char* v = std::getenv("SUCODE_LOG_LEVEL");
  if (!v) return;
  const std::string s(v);
  if (s == "debug") set_level(Level::Debug);
  else if (s == "info") set_level(Level::Info);
  else if (s == "warn") set_level(Level::Warn);
}

}  // namespace sucode::log

#pragma once

// Thin logging facade. The logger backend lives in its own translation unit
// because the tensor library ships an fmt version the system logger was not
// built against; no header here pulls either in.

#include <sstream>
#include <string>

namespace sucode::log {

enum class Level { Debug, Info, Warn, Error };

void write(Level level, const std::string& message);

/// Applies SUCODE_LOG_LEVEL (debug | info | warn); unknown values keep info.
void configure_from_env();
void set_level(Level level);

template <class... Args>
std::string concat(const Args&... args) {
  std::ostringstream out;
  (out << ... << args);
  return out.str();
}

template <class... Args>
void debug(const Args&... args) { write(Level::Debug, concat(args...)); }
template <class... Args>
void info(const Args&... args) { write(Level::Info, concat(args...)); }
template <class... Args>
void warn(const Args&... args) { write(Level::Warn, concat(args...)); }
template <class... Args>
void error(const Args&... args) { write(Level::Error, concat(args...)); }

}  // namespace sucode::log

#pragma once

#include <functional>
#include <iostream>
#include <string>
#include <utility>

namespace increg {

enum class LogLevel { info, warning };

using LogSink = std::function<void(LogLevel, const std::string&)>;

namespace detail {
inline LogSink& log_sink() {
  static LogSink sink = [](LogLevel level, const std::string& msg) {
    std::clog << (level == LogLevel::warning ? "[warn] " : "[info] ") << msg << '\n';
  };
  return sink;
}
}  // namespace detail

/// Replaces the process-wide sink and returns the previous one.
inline LogSink set_log_sink(LogSink sink) {
  return std::exchange(detail::log_sink(), std::move(sink));
}

inline void log_info(const std::string& msg) { detail::log_sink()(LogLevel::info, msg); }
inline void log_warning(const std::string& msg) { detail::log_sink()(LogLevel::warning, msg); }

}  // namespace increg

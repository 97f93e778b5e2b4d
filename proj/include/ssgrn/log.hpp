#pragma once

#include <functional>
#include <iostream>
#include <string>
#include <utility>

namespace ssgrn {

using LogSink = std::function<void(const std::string&)>;

inline LogSink& warning_sink() {
  static LogSink sink = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
  return sink;
}

inline void log_warning(const std::string& msg) { warning_sink()(msg); }

/// Redirects warnings for the lifetime of the guard.
class ScopedWarningSink {
 public:
  explicit ScopedWarningSink(LogSink sink) : previous_(std::exchange(warning_sink(), std::move(sink))) {}
  ~ScopedWarningSink() { warning_sink() = std::move(previous_); }
  ScopedWarningSink(const ScopedWarningSink&) = delete;
  ScopedWarningSink& operator=(const ScopedWarningSink&) = delete;

 private:
  LogSink previous_;
};

}  // namespace ssgrn

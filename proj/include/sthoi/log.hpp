#pragma once

#include <atomic>
#include <iostream>
#include <string>

namespace sthoi::log {

enum class Level { kDebug = 0, kInfo = 1, kWarning = 2, kError = 3, kOff = 4 };

inline std::atomic<int>& threshold() {
  static std::atomic<int> t{static_cast<int>(Level::kWarning)};
  return t;
}

inline void set_level(Level l) { threshold().store(static_cast<int>(l)); }

inline std::atomic<long>& warning_count() {
  static std::atomic<long> n{0};
  return n;
}

inline void write(Level l, const std::string& msg) {
  if (l == Level::kWarning) ++warning_count();
  if (static_cast<int>(l) < threshold().load()) return;
  static const char* tags[] = {"debug", "info", "warning", "error"};
  std::clog << "[sthoi " << tags[static_cast<int>(l)] << "] " << msg << '\n';
}

inline void info(const std::string& msg) { write(Level::kInfo, msg); }
inline void warn(const std::string& msg) { write(Level::kWarning, msg); }

}  // namespace sthoi::log

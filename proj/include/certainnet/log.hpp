#pragma once

#include <cstdio>
#include <cstdlib>
#include <string>

namespace certainnet::log {

// Verbosity comes from the CERTAINNET_LOG environment variable:
// 0 = warnings only, 1 = info (default), 2 = debug.
inline int level() {
  static const int cached = [] {
    const char* env = std::getenv("CERTAINNET_LOG");
    if (!env || !*env) return 1;
    return std::atoi(env);
  }();
  return cached;
}

inline void warn(const std::string& msg) {
  std::fprintf(stderr, "[warn] %s\n", msg.c_str());
}

inline void info(const std::string& msg) {
  if (level() >= 1) std::fprintf(stderr, "[info] %s\n", msg.c_str());
}

inline void debug(const std::string& msg) {
  if (level() >= 2) std::fprintf(stderr, "[debug] %s\n", msg.c_str());
}

}  // namespace certainnet::log

#pragma once

#include <cstdlib>
#include <memory>
#include <mutex>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace oodbench {

// Shared stderr logger. Level comes from OODBENCH_LOG (trace, debug, info,
// warn, error, critical, off); default is warn so library use stays quiet.
inline std::shared_ptr<spdlog::logger> logger() {
  static std::once_flag once;
  static std::shared_ptr<spdlog::logger> instance;
  std::call_once(once, [] {
    instance = spdlog::get("oodbench");
    if (!instance) instance = spdlog::stderr_color_mt("oodbench");
    auto level = spdlog::level::warn;
    if (const char* env = std::getenv("OODBENCH_LOG"); env != nullptr && *env != '\0') {
      level = spdlog::level::from_str(env);
    }
    instance->set_level(level);
    instance->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  });
  return instance;
}

}  // namespace oodbench

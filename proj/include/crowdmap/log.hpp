#pragma once

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <memory>

namespace crowdmap {

/// Shared diagnostics logger (stderr). Verbosity comes from CROWDMAP_LOG_LEVEL
/// (trace, debug, info, warn, error, critical, off); default is warn.
inline spdlog::logger& log() {
  static const std::shared_ptr<spdlog::logger> logger = [] {
    auto l = spdlog::get("crowdmap");
    if (!l) l = spdlog::stderr_color_mt("crowdmap");
    const char* level = std::getenv("CROWDMAP_LOG_LEVEL");
    l->set_level(level ? spdlog::level::from_str(level) : spdlog::level::warn);
    return l;
  }();
  return *logger;
}

}  // namespace crowdmap

#pragma once

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace crowdcount {

// Progress goes to stderr so stdout stays free for machine-readable output.
inline spdlog::logger& log() {
  static const auto logger = [] {
    auto l = spdlog::get("crowdcount");
    return l ? l : spdlog::stderr_color_mt("crowdcount");
  }();
  return *logger;
}

}  // namespace crowdcount

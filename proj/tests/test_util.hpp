#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>

#include "crowdcount/error.hpp"
#include "crowdcount/image.hpp"

namespace crowdcount::test {

// Code of the crowdcount::Error thrown by `f`, or nullopt if none is thrown.
inline std::optional<ErrorCode> error_code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

// Straight per-output-pixel bilinear sampling: half-pixel centres, source
// coordinate clamped to the valid range before splitting into taps.
inline Image oracle_bilinear(const Image& in, int out_h, int out_w) {
  Image out(in.channels, out_h, out_w);
  for (int c = 0; c < in.channels; ++c)
    for (int i = 0; i < out_h; ++i)
      for (int j = 0; j < out_w; ++j) {
        double sy = (i + 0.5) * in.height / out_h - 0.5;
        double sx = (j + 0.5) * in.width / out_w - 0.5;
        sy = std::clamp(sy, 0.0, in.height - 1.0);
        sx = std::clamp(sx, 0.0, in.width - 1.0);
        const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
        const int y1 = std::min(y0 + 1, in.height - 1), x1 = std::min(x0 + 1, in.width - 1);
        const double wy = sy - y0, wx = sx - x0;
        const double v = (1 - wy) * ((1 - wx) * in.at(c, y0, x0) + wx * in.at(c, y0, x1)) +
                         wy * ((1 - wx) * in.at(c, y1, x0) + wx * in.at(c, y1, x1));
        out.at(c, i, j) = static_cast<float>(v);
      }
  return out;
}

inline double max_abs_diff(const Image& a, const Image& b) {
  double m = 0;
  for (size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data[i]) - b.data[i]));
  return m;
}

inline Image random_image(int c, int h, int w, std::mt19937_64& rng) {
  Image img(c, h, w);
  std::uniform_real_distribution<float> d(0.0f, 255.0f);
  for (auto& v : img.data) v = d(rng);
  return img;
}

struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() /
           ("crowdcount_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace crowdcount::test

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace crowdcount {

// Channel-major raster (C×H×W) with intensities nominally in [0, 255].
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(static_cast<size_t>(c) * h * w, fill) {}

  bool empty() const { return data.empty(); }

  float& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// Bilinear resampling with half-pixel centers and border clamping. Identity
// sizes return a bit-identical copy.
Image bilinear_resize(const Image& image, int out_height, int out_width);

Image crop(const Image& image, int top, int left, int height, int width);

// Copies `src` into `dst` with its top-left corner at (top, left); parts that
// fall outside `dst` are dropped.
void paste(Image& dst, const Image& src, int top, int left);

Image flip_horizontal(const Image& image);

// 8-bit PNG I/O. Grayscale inputs are expanded to three channels; alpha is
// dropped. Values are rounded and clamped to [0, 255] on write.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

}  // namespace crowdcount

#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace crowdcount {

using Shape = std::vector<int64_t>;

std::string shape_string(const Shape& shape);
int64_t shape_numel(const Shape& shape);

// Dense row-major array of doubles. Rank-4 tensors use N×C×H×W layout.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t rank() const { return static_cast<int64_t>(shape.size()); }
  int64_t dim(int64_t i) const { return shape.at(static_cast<size_t>(i)); }

  // NCHW accessors; only meaningful for rank-4 tensors.
  int64_t n() const { return shape[0]; }
  int64_t c() const { return shape[1]; }
  int64_t h() const { return shape[2]; }
  int64_t w() const { return shape[3]; }

  double& at(int64_t n, int64_t c, int64_t h, int64_t w) {
    return data[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  double at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return data[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }

  std::span<double> span() { return data; }
  std::span<const double> span() const { return data; }

  double item() const { return data.at(0); }
  void fill(double v);
  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

// Precomputed two-tap interpolation weights along one axis, half-pixel-center
// convention: src = (dst + 0.5) * in / out - 0.5, clamped to [0, in - 1].
struct ResizeTaps {
  std::vector<int64_t> lo;
  std::vector<int64_t> hi;
  std::vector<double> frac;  // weight of `hi`; `lo` gets 1 - frac

  static ResizeTaps make(int64_t in, int64_t out);
};

}  // namespace crowdcount

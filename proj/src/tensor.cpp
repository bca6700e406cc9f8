#include "crowdcount/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "crowdcount/error.hpp"

namespace crowdcount {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  return os.str();
}

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape s, double fill)
    : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  require(static_cast<int64_t>(data.size()) == shape_numel(shape), ErrorCode::Internal,
          "tensor data size does not match shape " + shape_string(shape));
}

void Tensor::fill(double v) { std::fill(data.begin(), data.end(), v); }

ResizeTaps ResizeTaps::make(int64_t in, int64_t out) {
  require(in >= 1 && out >= 1, ErrorCode::Argument, "resize extents must be >= 1");
  ResizeTaps t;
  t.lo.resize(static_cast<size_t>(out));
  t.hi.resize(static_cast<size_t>(out));
  t.frac.resize(static_cast<size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t d = 0; d < out; ++d) {
    const auto i = static_cast<size_t>(d);
    if (in == out) {
      t.lo[i] = t.hi[i] = d;
      t.frac[i] = 0.0;
      continue;
    }
    double s = (static_cast<double>(d) + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<int64_t>(std::floor(s));
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, in - 1);
    t.frac[i] = s - static_cast<double>(lo);
  }
  return t;
}

}  // namespace crowdcount

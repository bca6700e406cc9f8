#include "crowdcount/prm.hpp"

#include <cmath>

#include "crowdcount/data_io.hpp"
#include "crowdcount/error.hpp"

namespace crowdcount {

const char* rescale_tag_name(RescaleTag tag) {
  switch (tag) {
    case RescaleTag::Identity: return "identity";
    case RescaleTag::Downscaled: return "downscaled";
    case RescaleTag::QuadrantTL: return "quadrant_tl";
    case RescaleTag::QuadrantTR: return "quadrant_tr";
    case RescaleTag::QuadrantBL: return "quadrant_bl";
    case RescaleTag::QuadrantBR: return "quadrant_br";
  }
  return "?";
}

namespace {

struct Quadrant {
  int top;
  int left;
};

Quadrant quadrant_origin(RescaleTag tag, int size) {
  const int half = size / 2;
  switch (tag) {
    case RescaleTag::QuadrantTL: return {0, 0};
    case RescaleTag::QuadrantTR: return {0, half};
    case RescaleTag::QuadrantBL: return {half, 0};
    case RescaleTag::QuadrantBR: return {half, half};
    default: fail(ErrorCode::Internal, "not a quadrant tag");
  }
}

}  // namespace

std::vector<RescaleTag> rescale_tags(CrowdClass cls, const PrmOptions& opts) {
  switch (cls) {
    case CrowdClass::NCP: return {};
    case CrowdClass::LCP:
      return {opts.lcp == LcpRule::DownscaleCentered ? RescaleTag::Downscaled : RescaleTag::Identity};
    case CrowdClass::MCP: return {RescaleTag::Identity};
    case CrowdClass::HCP:
      return {RescaleTag::QuadrantTL, RescaleTag::QuadrantTR, RescaleTag::QuadrantBL,
              RescaleTag::QuadrantBR};
  }
  return {};
}

RescaleOutcome prm_rescale(const Image& patch, CrowdClass cls, const PrmOptions& opts) {
  require(patch.channels == 3 && patch.height == patch.width && patch.height >= 2 &&
              patch.height % 2 == 0,
          ErrorCode::Argument,
          "prm_rescale: expected a 3-channel square patch with even side, got " +
              std::to_string(patch.channels) + "x" + std::to_string(patch.height) + "x" +
              std::to_string(patch.width));
  const int size = patch.height, half = size / 2;
  RescaleOutcome out;
  for (auto tag : rescale_tags(cls, opts)) {
    switch (tag) {
      case RescaleTag::Identity:
        out.patches.push_back(patch);
        break;
      case RescaleTag::Downscaled: {
        Image canvas(3, size, size, 0.0f);
        paste(canvas, bilinear_resize(patch, half, half), half / 2, half / 2);
        out.patches.push_back(std::move(canvas));
        break;
      }
      default: {
        const auto q = quadrant_origin(tag, size);
        out.patches.push_back(bilinear_resize(crop(patch, q.top, q.left, half, half), size, size));
        break;
      }
    }
    out.provenance.push_back(tag);
  }
  return out;
}

std::vector<Point> rescale_points(std::span<const Point> points, RescaleTag tag, int patch_size) {
  const int half = patch_size / 2;
  std::vector<Point> out;
  switch (tag) {
    case RescaleTag::Identity:
      out.assign(points.begin(), points.end());
      break;
    case RescaleTag::Downscaled:
      for (const auto& p : points)
        out.push_back({rescale_index(std::floor(p.x), patch_size, half) + half / 2,
                       rescale_index(std::floor(p.y), patch_size, half) + half / 2});
      break;
    default: {
      const auto q = quadrant_origin(tag, patch_size);
      for (const auto& p : points) {
        const double x = std::floor(p.x) - q.left, y = std::floor(p.y) - q.top;
        if (x < 0 || y < 0 || x >= half || y >= half) continue;
        out.push_back({rescale_index(x, half, patch_size), rescale_index(y, half, patch_size)});
      }
      break;
    }
  }
  return out;
}

}  // namespace crowdcount

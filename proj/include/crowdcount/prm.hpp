#pragma once

#include <span>
#include <vector>

#include "crowdcount/image.hpp"
#include "crowdcount/types.hpp"

namespace crowdcount {

// Where a rescaled patch came from.
enum class RescaleTag { Identity, Downscaled, QuadrantTL, QuadrantTR, QuadrantBL, QuadrantBR };

const char* rescale_tag_name(RescaleTag tag);

// Rule applied to low-crowd patches.
enum class LcpRule {
  DownscaleCentered,  // 2× bilinear downscale, centred on a zero canvas
  Identity,
};

struct PrmOptions {
  LcpRule lcp = LcpRule::DownscaleCentered;
};

struct RescaleOutcome {
  std::vector<Image> patches;
  std::vector<RescaleTag> provenance;
};

// NCP → nothing, LCP → one zoomed-out patch, MCP → the patch itself, HCP → the
// four quadrants (TL, TR, BL, BR), each upscaled 2×. Output patches keep the
// input's square size, which must be even.
RescaleOutcome prm_rescale(const Image& patch, CrowdClass cls, const PrmOptions& opts = {});

// Carries patch-local head positions through the rescale that produced `tag`.
// Points that do not land in the output (other quadrants) are dropped.
std::vector<Point> rescale_points(std::span<const Point> points, RescaleTag tag, int patch_size);

// Tags prm_rescale would emit for `cls`, in output order.
std::vector<RescaleTag> rescale_tags(CrowdClass cls, const PrmOptions& opts = {});

}  // namespace crowdcount

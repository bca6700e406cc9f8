#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "crowdcount/image.hpp"

namespace crowdcount {

// Head annotation in pixel units; x is the column, y the row.
struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct ImageRecord {
  std::string id;
  Image image;  // 3×H×W
  std::vector<Point> points;
};

// Density class of a patch. The numeric value doubles as the classifier's
// output index.
enum class CrowdClass : int { NCP = 0, LCP = 1, MCP = 2, HCP = 3 };

inline constexpr int kNumClasses = 4;
inline constexpr std::array<CrowdClass, 4> kAllClasses{CrowdClass::NCP, CrowdClass::LCP,
                                                       CrowdClass::MCP, CrowdClass::HCP};

const char* class_name(CrowdClass c);
std::optional<CrowdClass> class_from_name(const std::string& name);

// Which labels steer the rescaler: annotations (teacher forcing) or the
// classifier's own predictions.
enum class RoutingMode { GtLabels, PredictedLabels };

struct DatasetStats {
  int64_t cc_max = 1;
};

struct PatchOrigin {
  int row = 0;
  int col = 0;
  friend bool operator==(const PatchOrigin&, const PatchOrigin&) = default;
};

// A square network-input tile. Patch points sit on integer pixel indices, so
// mirroring and rescaling them is exact.
struct Patch {
  Image pixels;  // 3×S×S
  PatchOrigin origin;
  std::vector<Point> points;
  std::optional<CrowdClass> class_gt;

  int64_t gt_count() const { return static_cast<int64_t>(points.size()); }
};

}  // namespace crowdcount

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "crowdcount/network.hpp"
#include "crowdcount/types.hpp"

namespace crowdcount {

// Zero-pads bottom/right to a multiple of tile_size and cuts row-major tiles.
// A point belongs to the tile whose half-open extent holds floor(x), floor(y);
// patch-local points are stored on those integer indices.
std::vector<Patch> tile_image(const ImageRecord& record, int tile_size = 256);

struct PatchCount {
  PatchOrigin origin;
  CrowdClass predicted = CrowdClass::NCP;  // classifier output
  CrowdClass routed = CrowdClass::NCP;     // class the rescaler acted on
  std::array<double, 4> probs{};
  int64_t gt_count = 0;
  double count = 0.0;
  std::vector<double> sub_counts;
  std::vector<double> sm;  // Branch-1 segmentation map, when requested
  int sm_side = 0;
};

struct CountResult {
  std::vector<PatchCount> per_patch;
  double image_count = 0.0;
};

struct CountOptions {
  // Overrides `routing` for every patch when set.
  std::optional<CrowdClass> forced_class;
  // GtLabels routes each tile by its annotated count against the model's cc_max.
  RoutingMode routing = RoutingMode::PredictedLabels;
  PrmOptions prm;
  bool keep_segmentation = false;
  int threads = 1;
};

CountResult count_image(const ImageRecord& record, const ModelState& state,
                        const CountOptions& opts = {});
CountResult count_image(const ImageRecord& record, const ModelState& state, const Network& net,
                        const CountOptions& opts = {});

// Compensated sum of non-negative counts.
double aggregate_counts(std::span<const double> counts);

// Writes <out_dir>/<id>_report.json and <out_dir>/<id>_overlay.png (segmentation
// above 0.5 tinted red, at the source image size). Returns the report path.
std::filesystem::path write_count_report(const ImageRecord& record, const CountResult& result,
                                         int tile_size, const std::filesystem::path& out_dir);

}  // namespace crowdcount

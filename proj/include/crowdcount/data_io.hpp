#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "crowdcount/types.hpp"

namespace crowdcount {

// Manifest: one JSON object per line, {"id": ..., "image": ..., "points": [[x, y], ...]}.
// Image paths are resolved relative to the manifest's directory. Blank lines
// are ignored.
std::vector<ImageRecord> load_dataset(const std::filesystem::path& manifest_path);

// Writes <dir>/images/<id>.png for every record plus <dir>/manifest.jsonl.
// Returns the manifest path.
std::filesystem::path write_dataset(std::span<const ImageRecord> records,
                                    const std::filesystem::path& dir);

void validate_record(const ImageRecord& record);

struct SynthOptions {
  int n_images = 1;
  std::pair<int, int> size_range{256, 256};
  std::pair<int, int> count_range{0, 0};
  std::pair<int, int> blob_radius{4, 8};
  uint64_t seed = 0;
};

// Dark disks on a textured background, one per annotated head. Fails when the
// requested count cannot fit even at the smallest blob footprint.
std::vector<ImageRecord> generate_synthetic(const SynthOptions& opts);

CrowdClass label_patch(int64_t cc_gt, int64_t cc_max);

// Largest per-tile ground-truth count over non-overlapping tile_size tiles.
DatasetStats compute_dataset_stats(std::span<const ImageRecord> records, int tile_size);

struct SegTarget {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> map;

  uint8_t at(int y, int x) const { return map[static_cast<size_t>(y) * width + x]; }
  int64_t ones() const;
};

// Binary disk map rasterised at patch_size × patch_size, then max-pooled to
// out_height × out_width.
SegTarget make_gt_segmap(std::span<const Point> points, double radius, int out_height,
                         int out_width, int patch_size = 256);

Patch flip_patch(const Patch& patch);

// Random square crops (side drawn from crop_sizes, position uniform), each
// resized to patch_size, followed by a horizontally flipped copy of each.
// Records too small for every crop size are skipped with a warning.
std::vector<Patch> sample_training_patches(std::span<const ImageRecord> records, int n_patches,
                                           std::span<const int> crop_sizes, uint64_t seed,
                                           int patch_size = 256);

// Maps integer pixel indices through a resize of `in` pixels onto `out` pixels
// (pixel-center rule), clamped into range.
double rescale_index(double index, int in, int out);

}  // namespace crowdcount

#include "crowdcount/data_io.hpp"

#include "log.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numbers>
#include <random>
#include <sstream>

#include "crowdcount/error.hpp"

namespace crowdcount {

namespace fs = std::filesystem;
using nlohmann::json;

const char* class_name(CrowdClass c) {
  switch (c) {
    case CrowdClass::NCP: return "NCP";
    case CrowdClass::LCP: return "LCP";
    case CrowdClass::MCP: return "MCP";
    case CrowdClass::HCP: return "HCP";
  }
  return "?";
}

std::optional<CrowdClass> class_from_name(const std::string& name) {
  for (auto c : kAllClasses)
    if (name == class_name(c)) return c;
  return std::nullopt;
}

void validate_record(const ImageRecord& record) {
  const auto& img = record.image;
  require(img.height >= 1 && img.width >= 1 && img.channels == 3, ErrorCode::Validation,
          "image '" + record.id + "' must be a non-empty 3-channel raster");
  for (const auto& p : record.points) {
    if (!(p.x >= 0.0 && p.x < img.width && p.y >= 0.0 && p.y < img.height)) {
      std::ostringstream os;
      os << "image '" << record.id << "': point (" << p.x << ", " << p.y << ") outside "
         << img.width << "x" << img.height;
      fail(ErrorCode::Validation, os.str());
    }
  }
}

std::vector<ImageRecord> load_dataset(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) fail(ErrorCode::Load, "cannot open manifest '" + manifest_path.string() + "'");
  const fs::path base = manifest_path.parent_path();

  std::vector<ImageRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(ErrorCode::Load, manifest_path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    ImageRecord rec;
    try {
      rec.id = j.at("id").get<std::string>();
      const fs::path image_path = base / j.at("image").get<std::string>();
      for (const auto& pt : j.value("points", json::array())) {
        if (!pt.is_array() || pt.size() != 2)
          fail(ErrorCode::Load, "image '" + rec.id + "': points must be [x, y] pairs");
        rec.points.push_back({pt[0].get<double>(), pt[1].get<double>()});
      }
      if (!fs::exists(image_path))
        fail(ErrorCode::Load, "image file not found: '" + image_path.string() + "'");
      try {
        rec.image = read_png(image_path);
      } catch (const Error& e) {
        fail(ErrorCode::Load, e.what());
      }
    } catch (const json::exception& e) {
      fail(ErrorCode::Load, manifest_path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    validate_record(rec);
    records.push_back(std::move(rec));
  }
  return records;
}

fs::path write_dataset(std::span<const ImageRecord> records, const fs::path& dir) {
  fs::create_directories(dir / "images");
  const fs::path manifest = dir / "manifest.jsonl";
  std::ofstream out(manifest);
  if (!out) fail(ErrorCode::Io, "cannot write manifest '" + manifest.string() + "'");
  for (const auto& rec : records) {
    const std::string rel = "images/" + rec.id + ".png";
    write_png(dir / rel, rec.image);
    json pts = json::array();
    for (const auto& p : rec.points) pts.push_back({p.x, p.y});
    out << json{{"id", rec.id}, {"image", rel}, {"points", pts}}.dump() << "\n";
  }
  return manifest;
}

std::vector<ImageRecord> generate_synthetic(const SynthOptions& opts) {
  const auto [smin, smax] = opts.size_range;
  const auto [cmin, cmax] = opts.count_range;
  const auto [rmin, rmax] = opts.blob_radius;
  require(opts.n_images >= 0, ErrorCode::Argument, "n_images must be non-negative");
  require(smin >= 1 && smin <= smax, ErrorCode::Argument, "size_range must be a nonempty range");
  require(cmin >= 0 && cmin <= cmax, ErrorCode::Argument, "count_range must be a nonempty range");
  require(rmin >= 1 && rmin <= rmax, ErrorCode::Argument, "blob_radius must be a nonempty range");

  std::mt19937_64 rng(opts.seed);
  std::vector<ImageRecord> out;
  out.reserve(static_cast<size_t>(opts.n_images));
  for (int n = 0; n < opts.n_images; ++n) {
    const int h = std::uniform_int_distribution<int>(smin, smax)(rng);
    const int w = std::uniform_int_distribution<int>(smin, smax)(rng);
    const int count = std::uniform_int_distribution<int>(cmin, cmax)(rng);
    const double footprint = std::numbers::pi * rmin * rmin;
    if (static_cast<double>(count) * footprint > static_cast<double>(h) * w) {
      std::ostringstream os;
      os << count << " blobs of radius >= " << rmin << " cannot be placed on a " << w << "x" << h
         << " image";
      fail(ErrorCode::Generation, os.str());
    }

    ImageRecord rec;
    char id[32];
    std::snprintf(id, sizeof id, "synth_%06d", n);
    rec.id = id;
    rec.image = Image(3, h, w);

    // Background: per-image base tone, a low-frequency ripple and pixel noise.
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double base = 120.0 + 80.0 * unit(rng);
    const double fx = 0.02 + 0.08 * unit(rng), fy = 0.02 + 0.08 * unit(rng);
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    std::array<double, 3> tint{};
    for (auto& t : tint) t = -15.0 + 30.0 * unit(rng);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double ripple = 18.0 * std::sin(fx * x + fy * y + phase);
        const double noise = -10.0 + 20.0 * unit(rng);
        for (int c = 0; c < 3; ++c)
          rec.image.at(c, y, x) = static_cast<float>(
              std::clamp(std::round(base + tint[static_cast<size_t>(c)] + ripple + noise), 0.0, 255.0));
      }

    std::uniform_int_distribution<int> px(0, w - 1), py(0, h - 1), pr(rmin, rmax);
    for (int k = 0; k < count; ++k) {
      const Point p{static_cast<double>(px(rng)), static_cast<double>(py(rng))};
      const int r = pr(rng);
      const double tone = 20.0 + 30.0 * unit(rng);
      for (int y = std::max(0, static_cast<int>(p.y) - r); y <= std::min(h - 1, static_cast<int>(p.y) + r); ++y)
        for (int x = std::max(0, static_cast<int>(p.x) - r); x <= std::min(w - 1, static_cast<int>(p.x) + r); ++x) {
          const double dx = x - p.x, dy = y - p.y;
          if (dx * dx + dy * dy > static_cast<double>(r) * r) continue;
          for (int c = 0; c < 3; ++c)
            rec.image.at(c, y, x) = static_cast<float>(std::round(tone + 8.0 * c));
        }
      rec.points.push_back(p);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

CrowdClass label_patch(int64_t cc_gt, int64_t cc_max) {
  require(cc_gt >= 0, ErrorCode::Argument, "label_patch: negative ground-truth count");
  require(cc_max >= 1, ErrorCode::Argument, "label_patch: cc_max must be >= 1");
  if (cc_gt == 0) return CrowdClass::NCP;
  if (100 * cc_gt <= 5 * cc_max) return CrowdClass::LCP;
  if (100 * cc_gt <= 20 * cc_max) return CrowdClass::MCP;
  return CrowdClass::HCP;
}

DatasetStats compute_dataset_stats(std::span<const ImageRecord> records, int tile_size) {
  require(tile_size >= 1, ErrorCode::Argument, "tile size must be positive");
  DatasetStats stats;
  for (const auto& rec : records) {
    const int rows = (rec.image.height + tile_size - 1) / tile_size;
    const int cols = (rec.image.width + tile_size - 1) / tile_size;
    std::vector<int64_t> counts(static_cast<size_t>(rows) * cols, 0);
    for (const auto& p : rec.points) {
      const auto r = static_cast<int>(std::floor(p.y)) / tile_size;
      const auto c = static_cast<int>(std::floor(p.x)) / tile_size;
      ++counts[static_cast<size_t>(r) * cols + c];
    }
    for (auto c : counts) stats.cc_max = std::max(stats.cc_max, c);
  }
  return stats;
}

int64_t SegTarget::ones() const { return std::count(map.begin(), map.end(), uint8_t{1}); }

SegTarget make_gt_segmap(std::span<const Point> points, double radius, int out_height,
                         int out_width, int patch_size) {
  require(out_height >= 1 && out_width >= 1 && patch_size % out_height == 0 &&
              patch_size % out_width == 0,
          ErrorCode::Argument, "segmap resolution must divide the patch size evenly");
  std::vector<uint8_t> full(static_cast<size_t>(patch_size) * patch_size, 0);
  const double r2 = radius * radius;
  const int reach = static_cast<int>(std::ceil(radius));
  for (const auto& p : points) {
    const int cy = static_cast<int>(std::floor(p.y)), cx = static_cast<int>(std::floor(p.x));
    for (int y = std::max(0, cy - reach - 1); y <= std::min(patch_size - 1, cy + reach + 1); ++y)
      for (int x = std::max(0, cx - reach - 1); x <= std::min(patch_size - 1, cx + reach + 1); ++x) {
        const double dx = x - p.x, dy = y - p.y;
        if (dx * dx + dy * dy <= r2) full[static_cast<size_t>(y) * patch_size + x] = 1;
      }
  }
  SegTarget out{out_height, out_width, std::vector<uint8_t>(static_cast<size_t>(out_height) * out_width, 0)};
  const int sy = patch_size / out_height, sx = patch_size / out_width;
  for (int y = 0; y < patch_size; ++y)
    for (int x = 0; x < patch_size; ++x)
      if (full[static_cast<size_t>(y) * patch_size + x])
        out.map[static_cast<size_t>(y / sy) * out_width + x / sx] = 1;
  return out;
}

Patch flip_patch(const Patch& patch) {
  Patch out = patch;
  out.pixels = flip_horizontal(patch.pixels);
  const double last = patch.pixels.width - 1;
  for (auto& p : out.points) p.x = last - p.x;
  return out;
}

double rescale_index(double index, int in, int out) {
  const double mapped = std::floor((index + 0.5) * out / in);
  return std::clamp(mapped, 0.0, static_cast<double>(out - 1));
}

std::vector<Patch> sample_training_patches(std::span<const ImageRecord> records, int n_patches,
                                           std::span<const int> crop_sizes, uint64_t seed,
                                           int patch_size) {
  require(n_patches >= 0, ErrorCode::Argument, "n_patches must be non-negative");
  require(!crop_sizes.empty(), ErrorCode::Argument, "no crop sizes requested");
  const int smallest = *std::min_element(crop_sizes.begin(), crop_sizes.end());

  std::vector<size_t> usable;
  for (size_t i = 0; i < records.size(); ++i) {
    const auto& img = records[i].image;
    if (std::min(img.height, img.width) >= smallest) {
      usable.push_back(i);
    } else {
      log().warn("skipping '{}' ({}x{}): smaller than every crop size", records[i].id, img.width,
                   img.height);
    }
  }
  if (usable.empty()) fail(ErrorCode::Sampling, "no record is large enough for any crop size");

  std::mt19937_64 rng(seed);
  std::vector<Patch> out;
  out.reserve(static_cast<size_t>(n_patches) * 2);
  for (int k = 0; k < n_patches; ++k) {
    const auto& rec = records[usable[std::uniform_int_distribution<size_t>(0, usable.size() - 1)(rng)]];
    const int limit = std::min(rec.image.height, rec.image.width);
    int size = 0;
    do {
      size = crop_sizes[std::uniform_int_distribution<size_t>(0, crop_sizes.size() - 1)(rng)];
    } while (size > limit);
    const int top = std::uniform_int_distribution<int>(0, rec.image.height - size)(rng);
    const int left = std::uniform_int_distribution<int>(0, rec.image.width - size)(rng);

    Patch patch;
    patch.pixels = bilinear_resize(crop(rec.image, top, left, size, size), patch_size, patch_size);
    patch.origin = {top, left};
    for (const auto& p : rec.points) {
      const double px = std::floor(p.x) - left, py = std::floor(p.y) - top;
      if (px < 0 || py < 0 || px >= size || py >= size) continue;
      patch.points.push_back({rescale_index(px, size, patch_size), rescale_index(py, size, patch_size)});
    }
    out.push_back(patch);
    out.push_back(flip_patch(patch));
  }
  return out;
}

}  // namespace crowdcount

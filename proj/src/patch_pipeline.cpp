#include "crowdcount/patch_pipeline.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "crowdcount/data_io.hpp"
#include "crowdcount/error.hpp"

namespace crowdcount {

namespace fs = std::filesystem;

std::vector<Patch> tile_image(const ImageRecord& record, int tile_size) {
  require(tile_size >= 1, ErrorCode::Argument, "tile size must be positive");
  const Image& img = record.image;
  require(!img.empty() && img.height >= 1 && img.width >= 1, ErrorCode::Argument,
          "tile_image: empty image");
  const int rows = (img.height + tile_size - 1) / tile_size;
  const int cols = (img.width + tile_size - 1) / tile_size;

  std::vector<Patch> tiles(static_cast<size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      Patch& p = tiles[static_cast<size_t>(r) * cols + c];
      p.origin = {r * tile_size, c * tile_size};
      p.pixels = Image(img.channels, tile_size, tile_size, 0.0f);
      paste(p.pixels, img, -p.origin.row, -p.origin.col);
    }
  for (const auto& pt : record.points) {
    const int x = static_cast<int>(std::floor(pt.x)), y = static_cast<int>(std::floor(pt.y));
    require(x >= 0 && y >= 0 && x < img.width && y < img.height, ErrorCode::Validation,
            "image '" + record.id + "' has a point outside its bounds");
    Patch& p = tiles[static_cast<size_t>(y / tile_size) * cols + x / tile_size];
    p.points.push_back({static_cast<double>(x - p.origin.col), static_cast<double>(y - p.origin.row)});
  }
  return tiles;
}

double aggregate_counts(std::span<const double> counts) {
  double sum = 0.0, comp = 0.0;
  for (double v : counts) {
    require(std::isfinite(v) && v >= 0.0, ErrorCode::Argument,
            "aggregate_counts: counts must be finite and non-negative");
    const double t = sum + v;
    comp += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  return sum + comp;
}

CountResult count_image(const ImageRecord& record, const ModelState& state,
                        const CountOptions& opts) {
  Network net(state.arch);
  return count_image(record, state, net, opts);
}

CountResult count_image(const ImageRecord& record, const ModelState& state, const Network& net,
                        const CountOptions& opts) {
  check_state_matches(state, net);
  require(record.image.channels == 3, ErrorCode::Inference, "image must have three channels");
  const auto tiles = tile_image(record, state.arch.input_size);

  CountResult result;
  result.per_patch.resize(tiles.size());
  PatchInferenceOptions popts;
  popts.forced_class = opts.forced_class;
  popts.prm = opts.prm;
  popts.keep_segmentation = opts.keep_segmentation;

  auto run_one = [&](size_t i) {
    PatchInferenceOptions o = popts;
    if (!o.forced_class && opts.routing == RoutingMode::GtLabels)
      o.forced_class = label_patch(tiles[i].gt_count(), state.stats.cc_max);
    auto inf = infer_patch(state, net, tiles[i].pixels, o);
    PatchCount& pc = result.per_patch[i];
    pc.origin = tiles[i].origin;
    pc.predicted = inf.prediction.label;
    pc.routed = inf.routed;
    pc.probs = inf.prediction.probs;
    pc.gt_count = tiles[i].gt_count();
    pc.count = inf.count;
    pc.sub_counts = std::move(inf.sub_counts);
    pc.sm = std::move(inf.sm);
    pc.sm_side = inf.sm_side;
  };

  const size_t workers = std::min<size_t>(static_cast<size_t>(std::max(1, opts.threads)), tiles.size());
  if (workers <= 1) {
    for (size_t i = 0; i < tiles.size(); ++i) run_one(i);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (size_t i; (i = next.fetch_add(1)) < tiles.size();) run_one(i);
        } catch (...) {
          errors[w] = std::current_exception();
          next = tiles.size();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::vector<double> counts;
  for (const auto& pc : result.per_patch) counts.push_back(pc.count);
  result.image_count = aggregate_counts(counts);
  return result;
}

fs::path write_count_report(const ImageRecord& record, const CountResult& result, int tile_size,
                            const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  require(!ec, ErrorCode::Io, "cannot create output directory '" + out_dir.string() + "'");

  Image overlay = record.image;
  nlohmann::json patches = nlohmann::json::array();
  for (const auto& pc : result.per_patch) {
    patches.push_back({{"origin", {pc.origin.row, pc.origin.col}},
                       {"class", class_name(pc.predicted)},
                       {"routed_class", class_name(pc.routed)},
                       {"count", pc.count},
                       {"sub_counts", pc.sub_counts}});
    if (pc.sm.empty()) continue;
    const int cell = tile_size / pc.sm_side;
    for (int y = 0; y < tile_size; ++y) {
      const int iy = pc.origin.row + y;
      if (iy >= overlay.height) break;
      for (int x = 0; x < tile_size; ++x) {
        const int ix = pc.origin.col + x;
        if (ix >= overlay.width) break;
        if (pc.sm[static_cast<size_t>(y / cell) * pc.sm_side + x / cell] <= 0.5) continue;
        overlay.at(0, iy, ix) = 0.5f * overlay.at(0, iy, ix) + 127.5f;
        overlay.at(1, iy, ix) *= 0.5f;
        overlay.at(2, iy, ix) *= 0.5f;
      }
    }
  }

  const fs::path overlay_path = out_dir / (record.id + "_overlay.png");
  write_png(overlay_path, overlay);
  nlohmann::json report = {{"id", record.id},
                           {"width", record.image.width},
                           {"height", record.image.height},
                           {"image_count", result.image_count},
                           {"patches", patches},
                           {"overlay", overlay_path.filename().string()}};
  const fs::path report_path = out_dir / (record.id + "_report.json");
  std::ofstream out(report_path);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write '" + report_path.string() + "'");
  out << report.dump(2) << '\n';
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write '" + report_path.string() + "'");
  return report_path;
}

}  // namespace crowdcount

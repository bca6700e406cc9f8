#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crowdcount/heads.hpp"
#include "crowdcount/patch_pipeline.hpp"

namespace crowdcount {

struct ImageEval {
  std::string id;
  double gt_count = 0.0;
  double predicted_count = 0.0;
};

struct ClassStats {
  int64_t gt_patches = 0;
  int64_t predicted_patches = 0;
  int64_t true_positives = 0;
  double precision = 0.0;  // NaN when the class was never predicted
  double recall = 0.0;     // NaN when the class never occurs
};

struct EvalReport {
  std::vector<ImageEval> images;
  ErrorMetrics metrics;
  std::array<ClassStats, 4> classes{};
  std::array<double, 4> prm_usage{};  // fraction of patches per routed class
  double ch_loss = 0.0;               // mean cross-entropy of the classifier vs tile labels
  int64_t patches = 0;
};

struct EvalOptions {
  RoutingMode routing = RoutingMode::PredictedLabels;
  PrmOptions prm;
  int threads = 1;
};

EvalReport evaluate(const ModelState& state, std::span<const ImageRecord> records,
                    const EvalOptions& opts = {});

nlohmann::json eval_report_json(const EvalReport& report);

}  // namespace crowdcount

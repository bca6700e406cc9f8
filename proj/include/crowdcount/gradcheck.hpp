#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crowdcount/arch_config.hpp"
#include "crowdcount/heads.hpp"

namespace crowdcount {

struct GradcheckOptions {
  ArchConfig arch = ArchConfig::tiny();
  uint64_t seed = 0;
  int samples_per_tensor = 2;  // random entries, plus the largest-gradient one
  double step = 1e-5;
  // |a − n| / max(|a|, |n|, floor)
  double rel_floor = 1e-6;
  LossWeights weights;
  // Sets each regression target to the current prediction.
  bool zero_regression = false;
};

struct GroupError {
  std::string group;  // top-level parameter prefix
  int64_t tensors = 0;
  int64_t entries_checked = 0;
  // Of those, entries whose ±step evaluations flipped some ReLU input. A plain
  // central difference straddles the kink there, so they are re-measured with
  // the activation pattern held at the unperturbed point.
  int64_t entries_at_kinks = 0;
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;
  std::string worst_param;
};

struct GradcheckReport {
  std::vector<GroupError> groups;
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;  // over every gradient entry, checked or not
  LossBreakdown loss;
};

// Batch of four patches, one per crowd class, run through the joint objective
// at 64-bit precision; analytic gradients are compared with central differences.
GradcheckReport grad_check(const GradcheckOptions& opts = {});

nlohmann::json gradcheck_report_json(const GradcheckReport& report);

}  // namespace crowdcount

#pragma once

#include <array>
#include <span>
#include <vector>

#include "crowdcount/arch_config.hpp"
#include "crowdcount/data_io.hpp"
#include "crowdcount/layers.hpp"
#include "crowdcount/types.hpp"

namespace crowdcount {

struct ClassificationHead {
  ConvBn conv1;  // C → 2C, stride 2
  ConvBn conv2;  // 2C → C, stride 2
  Linear fc1;
  Linear fc2;    // → 4 logits
};

struct VacmBranch {
  std::array<ConvBn, 3> attention;  // last maps to one channel, no ReLU
  ConvBn merge;                     // concat(VAFM, LFM) → branch channels
};

struct RegressionHead {
  ConvBn conv1;  // concat of all FFMs → 2C, stride 2
  ConvBn conv2;  // 2C → 2C, stride 2
  Linear fc1;
  Linear fc2;    // → 1
};

struct Heads {
  ClassificationHead ch;
  std::vector<VacmBranch> vacm;  // empty when attention is disabled
  RegressionHead crh;

  Heads(const ArchConfig& arch, ParamRegistry& reg);
};

struct ChOutput {
  ag::Var logits;  // N×4
  ag::Var probs;   // N×4, softmax of logits
};

ChOutput ch_forward(ForwardContext& ctx, const Heads& heads, const ag::Var& branchout);

struct Attention {
  ag::Var sm;    // N×1×h×w in (0, 1)
  ag::Var vafm;  // SM broadcast-multiplied over the EFM channels
};

Attention vacm_attend(ForwardContext& ctx, const Heads& heads, int branch, const ag::Var& efm);
ag::Var vacm_merge(ForwardContext& ctx, const Heads& heads, int branch, const ag::Var& vafm,
                   const ag::Var& lfm);

struct AttentionOutput {
  ag::Var sm;
  ag::Var ffm;
};

AttentionOutput vacm(ForwardContext& ctx, const Heads& heads, int branch, const ag::Var& efm,
                     const ag::Var& lfm);

// N×1 counts (unclamped linear output).
ag::Var crh_forward(ForwardContext& ctx, const Heads& heads, std::span<const ag::Var> ffm);

struct ClassPrediction {
  std::array<double, 4> probs{};
  CrowdClass label = CrowdClass::NCP;
};

// Softmax over four logits; ties resolve to the lowest class index.
ClassPrediction predict_class(std::span<const double> logits);

struct LossWeights {
  double regressor = 1.0;
  double ch = 1.0;
  double sm = 1.0;
};

struct LossBreakdown {
  double regressor = 0.0;
  double ch = 0.0;
  double sm = 0.0;
  double total = 0.0;
};

inline constexpr double kProbEps = 1e-7;

// Joint objective on plain values. pred_probs is row-major N×4; each pred_sms
// entry is compared against the gt_segmaps entry at the same index, and the SM
// term is the mean of the per-map mean BCE. T normalises the regression term.
LossBreakdown loss_total(std::span<const double> pred_counts, std::span<const double> gt_counts,
                         std::span<const double> pred_probs, std::span<const CrowdClass> gt_classes,
                         std::span<const std::vector<double>> pred_sms,
                         std::span<const SegTarget> gt_segmaps, int64_t batch_size,
                         const LossWeights& weights = {});

struct ErrorMetrics {
  double mae = 0.0;
  double rmse = 0.0;
};

ErrorMetrics mae_rmse(std::span<const double> pred_counts, std::span<const double> gt_counts);

}  // namespace crowdcount

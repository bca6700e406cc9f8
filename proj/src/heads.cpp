#include "crowdcount/heads.hpp"

#include <algorithm>
#include <cmath>

#include "crowdcount/error.hpp"

namespace crowdcount {

Heads::Heads(const ArchConfig& arch, ParamRegistry& reg) {
  const int c = arch.base_channels;
  const int pooled = arch.input_size / 32;

  ch.conv1 = ConvBn("ch.conv1", c, 2 * c, 3, 2, true, reg);
  ch.conv2 = ConvBn("ch.conv2", 2 * c, c, 3, 2, true, reg);
  ch.fc1 = Linear("ch.fc1", c * pooled * pooled, arch.head_hidden, reg);
  ch.fc2 = Linear("ch.fc2", arch.head_hidden, kNumClasses, reg);

  if (arch.vacm_enabled) {
    for (int b = 0; b < arch.num_branches; ++b) {
      const int cb = arch.branch_channels(b);
      const std::string n = "vacm.b" + std::to_string(b);
      VacmBranch v;
      v.attention[0] = ConvBn(n + ".att1", cb, cb, 3, 1, true, reg);
      v.attention[1] = ConvBn(n + ".att2", cb, cb, 3, 1, true, reg);
      v.attention[2] = ConvBn(n + ".att3", cb, 1, 3, 1, false, reg);
      v.merge = ConvBn(n + ".merge", 2 * cb, cb, 1, 1, true, reg);
      vacm.push_back(std::move(v));
    }
  }

  int concat = 0;
  for (int b = 0; b < arch.num_branches; ++b) concat += arch.branch_channels(b);
  crh.conv1 = ConvBn("crh.conv1", concat, 2 * c, 3, 2, true, reg);
  crh.conv2 = ConvBn("crh.conv2", 2 * c, 2 * c, 3, 2, true, reg);
  crh.fc1 = Linear("crh.fc1", 2 * c * pooled * pooled, arch.head_hidden, reg);
  crh.fc2 = Linear("crh.fc2", arch.head_hidden, 1, reg);
}

ChOutput ch_forward(ForwardContext& ctx, const Heads& heads, const ag::Var& branchout) {
  const auto& arch = ctx.arch();
  const auto& v = branchout.value();
  const int side = arch.branch_side(0);
  require(v.rank() == 4 && v.c() == arch.base_channels && v.h() == side && v.w() == side,
          ErrorCode::Argument, "ch: expected Branch-1 features, got " + shape_string(v.shape));
  auto y = conv_bn(ctx, heads.ch.conv1, branchout);
  y = conv_bn(ctx, heads.ch.conv2, y);
  y = ag::flatten(ag::avg_pool2(y));
  y = ag::relu(linear(ctx, heads.ch.fc1, y));
  ChOutput out;
  out.logits = linear(ctx, heads.ch.fc2, y);
  out.probs = ag::softmax_rows(out.logits);
  return out;
}

Attention vacm_attend(ForwardContext& ctx, const Heads& heads, int branch, const ag::Var& efm) {
  require(branch >= 0 && branch < static_cast<int>(heads.vacm.size()), ErrorCode::Argument,
          "vacm: no attention module for branch " + std::to_string(branch + 1));
  const auto& mod = heads.vacm[static_cast<size_t>(branch)];
  ag::Var a = efm;
  for (const auto& layer : mod.attention) a = conv_bn(ctx, layer, a);
  Attention out;
  out.sm = ag::sigmoid(a);
  out.vafm = ag::mul_channels(efm, out.sm);
  return out;
}

ag::Var vacm_merge(ForwardContext& ctx, const Heads& heads, int branch, const ag::Var& vafm,
                   const ag::Var& lfm) {
  const auto& a = vafm.value();
  const auto& l = lfm.value();
  require(a.rank() == 4 && l.rank() == 4 && a.c() == l.c() && a.h() == l.h() && a.w() == l.w(),
          ErrorCode::Argument, "vacm: EFM " + shape_string(a.shape) + " and LFM " +
                                   shape_string(l.shape) + " belong to different branches");
  const ag::Var parts[] = {vafm, lfm};
  return conv_bn(ctx, heads.vacm[static_cast<size_t>(branch)].merge, ag::concat_channels(parts));
}

AttentionOutput vacm(ForwardContext& ctx, const Heads& heads, int branch, const ag::Var& efm,
                     const ag::Var& lfm) {
  require(efm.value().rank() == 4 && lfm.value().rank() == 4 &&
              efm.value().h() == lfm.value().h() && efm.value().c() == lfm.value().c(),
          ErrorCode::Argument, "vacm: EFM and LFM must come from the same branch");
  auto att = vacm_attend(ctx, heads, branch, efm);
  return {att.sm, vacm_merge(ctx, heads, branch, att.vafm, lfm)};
}

ag::Var crh_forward(ForwardContext& ctx, const Heads& heads, std::span<const ag::Var> ffm) {
  const auto& arch = ctx.arch();
  require(static_cast<int>(ffm.size()) == arch.num_branches, ErrorCode::Argument,
          "crh: expected one feature map per branch");
  const int side = arch.branch_side(0);
  std::vector<ag::Var> parts;
  for (int b = 0; b < arch.num_branches; ++b) {
    const auto& f = ffm[static_cast<size_t>(b)];
    const auto& v = f.value();
    require(v.rank() == 4 && v.c() == arch.branch_channels(b) && v.h() == arch.branch_side(b),
            ErrorCode::Argument, "crh: branch " + std::to_string(b + 1) + " has shape " +
                                     shape_string(v.shape));
    parts.push_back(b == 0 ? f : ag::resize_bilinear(f, side, side));
  }
  auto y = conv_bn(ctx, heads.crh.conv1, ag::concat_channels(parts));
  y = conv_bn(ctx, heads.crh.conv2, y);
  y = ag::flatten(ag::avg_pool2(y));
  y = ag::relu(linear(ctx, heads.crh.fc1, y));
  return linear(ctx, heads.crh.fc2, y);
}

ClassPrediction predict_class(std::span<const double> logits) {
  require(logits.size() == kNumClasses, ErrorCode::Argument, "predict_class: expected 4 logits");
  ClassPrediction p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (size_t i = 0; i < 4; ++i) z += (p.probs[i] = std::exp(logits[i] - mx));
  for (auto& v : p.probs) v /= z;
  size_t best = 0;
  for (size_t i = 1; i < 4; ++i)
    if (logits[i] > logits[best]) best = i;
  p.label = static_cast<CrowdClass>(best);
  return p;
}

LossBreakdown loss_total(std::span<const double> pred_counts, std::span<const double> gt_counts,
                         std::span<const double> pred_probs, std::span<const CrowdClass> gt_classes,
                         std::span<const std::vector<double>> pred_sms,
                         std::span<const SegTarget> gt_segmaps, int64_t batch_size,
                         const LossWeights& weights) {
  require(batch_size >= 1, ErrorCode::Argument, "loss_total: batch size must be >= 1");
  require(pred_counts.size() == gt_counts.size(), ErrorCode::Argument,
          "loss_total: count prediction/target size mismatch");
  require(pred_probs.size() == gt_classes.size() * kNumClasses, ErrorCode::Argument,
          "loss_total: probabilities must be N×4");
  require(pred_sms.size() == gt_segmaps.size(), ErrorCode::Argument,
          "loss_total: segmentation prediction/target count mismatch");
  constexpr double tol = 1e-6;
  auto check_prob = [&](double p) {
    require(std::isfinite(p) && p >= -tol && p <= 1.0 + tol, ErrorCode::Argument,
            "loss_total: probability outside [0, 1]");
    return std::clamp(p, kProbEps, 1.0 - kProbEps);
  };

  LossBreakdown out;
  double reg = 0.0;
  for (size_t i = 0; i < pred_counts.size(); ++i) {
    const double d = pred_counts[i] - gt_counts[i];
    reg += d * d;
  }
  out.regressor = reg / static_cast<double>(batch_size);

  if (!gt_classes.empty()) {
    double ce = 0.0;
    for (size_t n = 0; n < gt_classes.size(); ++n) {
      for (size_t k = 0; k < kNumClasses; ++k) check_prob(pred_probs[n * kNumClasses + k]);
      const auto y = static_cast<size_t>(gt_classes[n]);
      ce -= std::log(check_prob(pred_probs[n * kNumClasses + y]));
    }
    out.ch = ce / static_cast<double>(gt_classes.size());
  }

  if (!pred_sms.empty()) {
    double sum = 0.0;
    for (size_t m = 0; m < pred_sms.size(); ++m) {
      const auto& pred = pred_sms[m];
      const auto& tgt = gt_segmaps[m].map;
      require(pred.size() == tgt.size() && !pred.empty(), ErrorCode::Argument,
              "loss_total: segmentation map shape mismatch");
      double bce = 0.0;
      for (size_t i = 0; i < pred.size(); ++i) {
        const double p = check_prob(pred[i]);
        bce -= tgt[i] ? std::log(p) : std::log(1.0 - p);
      }
      sum += bce / static_cast<double>(pred.size());
    }
    out.sm = sum / static_cast<double>(pred_sms.size());
  }

  out.regressor *= weights.regressor;
  out.ch *= weights.ch;
  out.sm *= weights.sm;
  out.total = out.regressor + out.ch + out.sm;
  return out;
}

ErrorMetrics mae_rmse(std::span<const double> pred_counts, std::span<const double> gt_counts) {
  require(!pred_counts.empty() && pred_counts.size() == gt_counts.size(), ErrorCode::Argument,
          "mae_rmse: need equal-length, nonempty count lists");
  double abs_sum = 0.0, sq_sum = 0.0;
  for (size_t i = 0; i < pred_counts.size(); ++i) {
    const double d = gt_counts[i] - pred_counts[i];
    abs_sum += std::abs(d);
    sq_sum += d * d;
  }
  const double n = static_cast<double>(pred_counts.size());
  return {abs_sum / n, std::sqrt(sq_sum / n)};
}

}  // namespace crowdcount

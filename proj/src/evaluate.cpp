#include "crowdcount/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "crowdcount/config.hpp"
#include "crowdcount/data_io.hpp"
#include "crowdcount/error.hpp"

namespace crowdcount {

EvalReport evaluate(const ModelState& state, std::span<const ImageRecord> records,
                    const EvalOptions& opts) {
  require(!records.empty(), ErrorCode::Argument, "evaluate: no records");
  Network net(state.arch);
  check_state_matches(state, net);
  CountOptions copts;
  copts.routing = opts.routing;
  copts.prm = opts.prm;
  copts.threads = opts.threads;

  EvalReport rep;
  std::vector<double> pred, gt;
  std::array<int64_t, 4> routed{};
  double ce = 0.0;
  for (const auto& rec : records) {
    const auto res = count_image(rec, state, net, copts);
    rep.images.push_back({rec.id, static_cast<double>(rec.points.size()), res.image_count});
    pred.push_back(res.image_count);
    gt.push_back(static_cast<double>(rec.points.size()));
    for (const auto& pc : res.per_patch) {
      const auto y = static_cast<size_t>(label_patch(pc.gt_count, state.stats.cc_max));
      const auto p = static_cast<size_t>(pc.predicted);
      ++rep.classes[y].gt_patches;
      ++rep.classes[p].predicted_patches;
      if (y == p) ++rep.classes[y].true_positives;
      ++routed[static_cast<size_t>(pc.routed)];
      ce -= std::log(std::clamp(pc.probs[y], kProbEps, 1.0 - kProbEps));
      ++rep.patches;
    }
  }
  rep.metrics = mae_rmse(pred, gt);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (size_t k = 0; k < 4; ++k) {
    auto& c = rep.classes[k];
    c.precision = c.predicted_patches ? static_cast<double>(c.true_positives) / c.predicted_patches : nan;
    c.recall = c.gt_patches ? static_cast<double>(c.true_positives) / c.gt_patches : nan;
    rep.prm_usage[k] = static_cast<double>(routed[k]) / static_cast<double>(rep.patches);
  }
  rep.ch_loss = ce / static_cast<double>(rep.patches);
  return rep;
}

nlohmann::json eval_report_json(const EvalReport& r) {
  using nlohmann::json;
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json images = json::array();
  for (const auto& im : r.images)
    images.push_back({{"id", im.id}, {"gt_count", im.gt_count}, {"predicted_count", im.predicted_count}});
  json classes = json::object();
  json usage = json::object();
  for (auto c : kAllClasses) {
    const auto& s = r.classes[static_cast<size_t>(c)];
    classes[class_name(c)] = {{"gt_patches", s.gt_patches},
                              {"predicted_patches", s.predicted_patches},
                              {"precision", num(s.precision)},
                              {"recall", num(s.recall)}};
    usage[class_name(c)] = r.prm_usage[static_cast<size_t>(c)];
  }
  return {{"mae", r.metrics.mae},   {"rmse", r.metrics.rmse}, {"patches", r.patches},
          {"ch_loss", r.ch_loss},   {"classes", classes},     {"prm_usage", usage},
          {"images", images}};
}

}  // namespace crowdcount

#include "crowdcount/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "crowdcount/data_io.hpp"
#include "crowdcount/error.hpp"
#include "crowdcount/patch_pipeline.hpp"
#include "crowdcount/trainer.hpp"

namespace crowdcount {

GradcheckReport grad_check(const GradcheckOptions& opts) {
  const ArchConfig& arch = opts.arch;
  arch.validate();
  require(opts.step > 0 && opts.samples_per_tensor >= 0, ErrorCode::Argument,
          "grad_check: step must be positive");
  const int s = arch.input_size;
  Network net(arch);
  std::mt19937_64 rng(opts.seed);

  ModelState state = init_model(arch, rng());
  state.stats.cc_max = 20;
  // Non-trivial affine BN parameters so their gradients are exercised.
  std::uniform_real_distribution<double> gamma(0.5, 1.5), beta(-0.2, 0.2);
  for (auto& [name, t] : state.params) {
    if (state.kinds.at(name) == ParamKind::BnScale) for (auto& v : t.data) v = gamma(rng);
    if (state.kinds.at(name) == ParamKind::BnShift) for (auto& v : t.data) v = beta(rng);
    if (state.kinds.at(name) == ParamKind::LinearBias) for (auto& v : t.data) v = beta(rng);
  }

  // Counts 0 / 1 / 3 / 8 at cc_max 20 give NCP / LCP / MCP / HCP.
  std::vector<Patch> patches;
  const int counts[] = {0, 1, 3, 8};
  for (int k = 0; k < 4; ++k) {
    SynthOptions so;
    so.size_range = {s, s};
    so.count_range = {counts[k], counts[k]};
    so.blob_radius = {2, 3};
    so.seed = rng();
    auto rec = generate_synthetic(so).front();
    auto tile = tile_image(rec, s).front();
    tile.class_gt = label_patch(tile.gt_count(), state.stats.cc_max);
    patches.push_back(std::move(tile));
  }
  std::vector<const Patch*> batch;
  std::vector<CrowdClass> routes;
  for (const auto& p : patches) {
    batch.push_back(&p);
    routes.push_back(*p.class_gt);
  }
  state.norm = compute_normalization(std::vector<ImageRecord>{
      ImageRecord{"a", patches[0].pixels, {}}, ImageRecord{"b", patches[3].pixels, {}}});

  std::vector<double> zero_targets;
  const std::vector<double>* targets = nullptr;
  if (opts.zero_regression) {
    ModelState probe = state;
    ForwardContext ctx(probe, true, false);
    zero_targets = batch_loss(ctx, net, batch, routes, opts.weights, {}).pred_counts;
    targets = &zero_targets;
  }

  auto loss_at = [&](ModelState& st, ag::ReluTrace& trace) {
    ForwardContext ctx(st, true, false);
    ag::relu_trace_begin(trace);
    const double l = batch_loss(ctx, net, batch, routes, opts.weights, {}, false, targets).breakdown.total;
    ag::relu_trace_end();
    return l;
  };

  GradcheckReport report;
  std::map<std::string, Tensor> analytic;
  ag::ReluTrace base_trace;
  {
    ModelState work = state;
    loss_at(work, base_trace);
    base_trace.replay = true;
  }
  {
    ModelState work = state;
    ForwardContext ctx(work, true, true);
    auto bl = batch_loss(ctx, net, batch, routes, opts.weights, {}, false, targets);
    report.loss = bl.breakdown;
    ag::backward(bl.total);
    for (const auto& [name, v] : ctx.param_vars()) analytic.emplace(name, v.grad());
  }

  std::map<std::string, GroupError> groups;
  ModelState work = state;
  for (const auto& [name, param] : state.params) {
    const std::string group = name.substr(0, name.find('.'));
    auto& g = groups[group];
    g.group = group;
    ++g.tensors;
    const auto it = analytic.find(name);
    require(it != analytic.end(), ErrorCode::Internal, "grad_check: '" + name + "' got no gradient");
    const Tensor& a = it->second;

    std::set<size_t> picks;
    size_t argmax = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
      report.max_abs_analytic = std::max(report.max_abs_analytic, std::abs(a.data[i]));
      g.max_abs_analytic = std::max(g.max_abs_analytic, std::abs(a.data[i]));
      if (std::abs(a.data[i]) > std::abs(a.data[argmax])) argmax = i;
    }
    picks.insert(argmax);
    std::uniform_int_distribution<size_t> pick(0, a.data.size() - 1);
    for (int k = 0; k < opts.samples_per_tensor; ++k) picks.insert(pick(rng));

    for (size_t i : picks) {
      double& w = work.params.at(name).data[i];
      const double orig = w;
      auto central = [&](ag::ReluTrace& up_trace, ag::ReluTrace& down_trace) {
        w = orig + opts.step;
        const double up = loss_at(work, up_trace);
        w = orig - opts.step;
        const double down = loss_at(work, down_trace);
        w = orig;
        return (up - down) / (2.0 * opts.step);
      };
      ag::ReluTrace up_trace, down_trace;
      double numeric = central(up_trace, down_trace);
      if (up_trace.pattern != base_trace.pattern || down_trace.pattern != base_trace.pattern) {
        ++g.entries_at_kinks;
        ag::ReluTrace frozen_up = base_trace, frozen_down = base_trace;
        numeric = central(frozen_up, frozen_down);
      }
      const double an = a.data[i];
      const double rel =
          std::abs(an - numeric) / std::max({std::abs(an), std::abs(numeric), opts.rel_floor});
      ++g.entries_checked;
      if (rel > g.max_rel_error) {
        g.max_rel_error = rel;
        g.worst_param = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  for (auto& [_, g] : groups) {
    report.max_rel_error = std::max(report.max_rel_error, g.max_rel_error);
    report.groups.push_back(g);
  }
  return report;
}

nlohmann::json gradcheck_report_json(const GradcheckReport& r) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : r.groups)
    groups.push_back({{"group", g.group},
                      {"tensors", g.tensors},
                      {"entries_checked", g.entries_checked},
                      {"entries_at_kinks", g.entries_at_kinks},
                      {"max_rel_error", g.max_rel_error},
                      {"max_abs_analytic", g.max_abs_analytic},
                      {"worst", g.worst_param}});
  return {{"max_rel_error", r.max_rel_error},
          {"max_abs_analytic", r.max_abs_analytic},
          {"loss",
           {{"regressor", r.loss.regressor}, {"ch", r.loss.ch}, {"sm", r.loss.sm}, {"total", r.loss.total}}},
          {"groups", groups}};
}

}  // namespace crowdcount

#include "crowdcount/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <utility>

#include "log.hpp"

#include "crowdcount/checkpoint.hpp"
#include "crowdcount/error.hpp"
#include "crowdcount/patch_pipeline.hpp"

namespace crowdcount {

namespace {

std::mt19937_64 stream(uint64_t seed, uint64_t purpose, uint64_t index = 0) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                    static_cast<uint32_t>(purpose), static_cast<uint32_t>(index),
                    static_cast<uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

enum Purpose : uint64_t { kSplit = 1, kPatches = 2, kEpochOrder = 3, kInit = 4 };

Tensor segmap_batch(const std::vector<const std::vector<Point>*>& points, int side, double radius,
                    int patch_size) {
  Tensor t(Shape{static_cast<int64_t>(points.size()), 1, side, side});
  size_t k = 0;
  for (const auto* pts : points) {
    const auto seg = make_gt_segmap(*pts, radius, side, side, patch_size);
    for (uint8_t v : seg.map) t.data[k++] = v;
  }
  return t;
}

void sgd_step(ModelState& state, const std::map<std::string, ag::Var>& vars, double lr,
              const TrainConfig& cfg) {
  double clip = 1.0;
  if (cfg.grad_clip_norm > 0) {
    double sq = 0.0;
    for (const auto& [name, var] : vars)
      if (state.params.count(name))
        for (double g : var.grad().data) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip_norm) clip = cfg.grad_clip_norm / norm;
  }
  for (auto& [name, p] : state.params) {
    auto it = vars.find(name);
    if (it == vars.end()) continue;
    const Tensor g0 = it->second.grad();
    auto [mit, _] = state.momentum.try_emplace(name, Tensor(p.shape, 0.0));
    Tensor& v = mit->second;
    const double wd = is_batchnorm(state.kinds.at(name)) ? 0.0 : cfg.weight_decay;
    for (size_t i = 0; i < p.data.size(); ++i) {
      const double g = clip * g0.data[i] + wd * p.data[i];
      v.data[i] = cfg.momentum * v.data[i] + g;
      p.data[i] -= lr * (g + cfg.momentum * v.data[i]);
    }
    round_to_float(p);
    round_to_float(v);
  }
  for (auto& [_, b] : state.buffers) round_to_float(b);
}

}  // namespace

double lr_at(int epoch, const TrainConfig& cfg) {
  require(epoch >= 0, ErrorCode::Argument, "lr_at: epoch must be non-negative");
  return std::ldexp(cfg.base_lr, -(epoch / cfg.lr_halving_period));
}

BatchLoss batch_loss(ForwardContext& ctx, const Network& net, std::span<const Patch* const> batch,
                     std::span<const CrowdClass> routes, const LossWeights& weights,
                     const PrmOptions& prm, bool detach_aux_heads,
                     const std::vector<double>* count_targets) {
  const auto& arch = net.arch;
  const int s = arch.input_size;
  require(!batch.empty() && routes.size() == batch.size(), ErrorCode::Argument,
          "batch_loss: need one route per patch");
  std::vector<const Image*> images;
  std::vector<int> labels;
  for (const Patch* p : batch) {
    require(p->class_gt.has_value(), ErrorCode::Argument, "batch_loss: patch lacks a class label");
    require(p->pixels.height == s && p->pixels.width == s, ErrorCode::Argument,
            "batch_loss: patch size differs from the architecture input size");
    images.push_back(&p->pixels);
    labels.push_back(static_cast<int>(*p->class_gt));
  }
  auto input = ag::constant(input_tensor(images, ctx.state().norm));

  auto cursor = trunk_start(ctx, net.backbone, input);
  trunk_run_to_branchout(ctx, net.backbone, cursor);
  auto ch = ch_forward(ctx, net.heads, detach_aux_heads ? detach(cursor.branchout) : cursor.branchout);
  auto ch_loss = ag::class_cross_entropy(ch.probs, labels, kProbEps);
  trunk_run_to_hook(ctx, net.backbone, cursor);

  BatchLoss out;
  out.class_probs = ch.probs.value().data;
  std::vector<Image> rescaled;
  std::vector<std::vector<Point>> item_points;
  for (size_t n = 0; n < batch.size(); ++n) {
    const Patch& p = *batch[n];
    if (routes[n] == CrowdClass::NCP) {
      rescaled.push_back(p.pixels);
      item_points.push_back(p.points);
      out.target_counts.push_back(0.0);
    } else {
      auto r = prm_rescale(p.pixels, routes[n], prm);
      for (size_t k = 0; k < r.patches.size(); ++k) {
        rescaled.push_back(std::move(r.patches[k]));
        item_points.push_back(rescale_points(p.points, r.provenance[k], s));
        out.target_counts.push_back(static_cast<double>(item_points.back().size()));
      }
    }
    out.source.insert(out.source.end(), rescaled.size() - out.source.size(), static_cast<int64_t>(n));
  }
  std::vector<const Image*> rptr;
  for (const auto& img : rescaled) rptr.push_back(&img);
  auto cont = run_continuation(ctx, net, cursor, ag::constant(input_tensor(rptr, ctx.state().norm)),
                               out.source, detach_aux_heads);
  out.pred_counts = cont.counts.value().data;
  if (count_targets) {
    require(count_targets->size() == out.target_counts.size(), ErrorCode::Argument,
            "batch_loss: count target override has the wrong length");
    out.target_counts = *count_targets;
  }
  auto reg_loss = ag::mse_loss(cont.counts, out.target_counts);

  std::vector<ag::Var> terms{ag::scale(reg_loss, weights.regressor), ag::scale(ch_loss, weights.ch)};
  out.breakdown.regressor = terms[0].value().item();
  out.breakdown.ch = terms[1].value().item();
  if (arch.vacm_enabled) {
    std::vector<const std::vector<Point>*> source_pts, item_pts;
    for (const Patch* p : batch) source_pts.push_back(&p->points);
    for (const auto& pts : item_points) item_pts.push_back(&pts);
    std::vector<ag::Var> per_branch;
    for (int b = 0; b < arch.num_branches; ++b) {
      const auto i = static_cast<size_t>(b);
      const auto target = segmap_batch(cont.sm_on_source[i] ? source_pts : item_pts,
                                       arch.branch_side(b), arch.seg_radius, s);
      per_branch.push_back(ag::binary_cross_entropy(cont.sm[i], target, kProbEps));
    }
    auto sm_loss = ag::scale(ag::add_all(per_branch), 1.0 / arch.num_branches);
    terms.push_back(ag::scale(sm_loss, weights.sm));
    out.breakdown.sm = terms[2].value().item();
  }
  out.total = ag::add_all(terms);
  out.breakdown.total = out.total.value().item();
  return out;
}

Normalization compute_normalization(std::span<const ImageRecord> records) {
  Normalization norm;
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    int64_t n = 0;
    for (const auto& r : records) {
      const size_t plane = static_cast<size_t>(r.image.height) * r.image.width;
      const float* base = r.image.data.data() + plane * static_cast<size_t>(c);
      for (size_t i = 0; i < plane; ++i) {
        const double v = base[i] / 255.0;
        sum += v;
        sq += v * v;
      }
      n += static_cast<int64_t>(plane);
    }
    if (n == 0) continue;
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(0.0, sq / static_cast<double>(n) - mean * mean);
    const double sd = std::sqrt(var);
    norm.mean[static_cast<size_t>(c)] = static_cast<float>(mean);
    norm.stddev[static_cast<size_t>(c)] = sd > 1e-3 ? static_cast<float>(sd) : 1.0;
  }
  return norm;
}

DataSplit split_dataset(size_t n, double val_fraction, uint64_t seed) {
  std::vector<size_t> perm(n);
  std::iota(perm.begin(), perm.end(), size_t{0});
  auto rng = stream(seed, kSplit);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_val = static_cast<size_t>(std::floor(static_cast<double>(n) * val_fraction));
  DataSplit split;
  split.val.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  split.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

std::vector<Patch> training_patches(std::span<const ImageRecord> records, const TrainConfig& cfg,
                                    const DatasetStats& stats) {
  const int s = cfg.arch.input_size;
  std::vector<Patch> patches;
  if (cfg.sample_patches > 0) {
    const auto sizes = cfg.effective_crop_sizes();
    auto rng = stream(cfg.seed, kPatches);
    patches = sample_training_patches(records, cfg.sample_patches, sizes, rng(), s);
  } else {
    for (const auto& r : records) {
      auto tiles = tile_image(r, s);
      patches.insert(patches.end(), std::make_move_iterator(tiles.begin()),
                     std::make_move_iterator(tiles.end()));
    }
  }
  for (auto& p : patches) p.class_gt = label_patch(p.gt_count(), stats.cc_max);
  return patches;
}

std::vector<ImageRecord> load_training_data(const TrainConfig& cfg) {
  if (cfg.synthetic) return generate_synthetic(*cfg.synthetic);
  require(!cfg.manifest.empty(), ErrorCode::Config, "no data source configured");
  return load_dataset(cfg.manifest);
}

TrainResult train(std::span<const ImageRecord> records, const TrainConfig& cfg,
                  const ModelState* resume, const EpochCallback& on_epoch) {
  cfg.validate();
  const auto split = split_dataset(records.size(), cfg.val_fraction, cfg.seed);
  require(!split.train.empty(), ErrorCode::Training, "no training records after the validation split");
  std::vector<ImageRecord> train_recs, val_recs;
  for (size_t i : split.train) train_recs.push_back(records[i]);
  for (size_t i : split.val) val_recs.push_back(records[i]);

  TrainResult result;
  ModelState& state = result.state;
  if (resume) {
    require(resume->arch == cfg.arch, ErrorCode::Training,
            "resume checkpoint architecture differs from the config");
    state = *resume;
  } else {
    auto rng = stream(cfg.seed, kInit);
    state = init_model(cfg.arch, rng());
    state.meta.seed = cfg.seed;
    state.stats = compute_dataset_stats(train_recs, cfg.arch.input_size);
    state.norm = compute_normalization(train_recs);
  }
  Network net(cfg.arch);
  check_state_matches(state, net);

  const auto patches = training_patches(train_recs, cfg, state.stats);
  require(!patches.empty(), ErrorCode::Training, "no training patches");
  auto& report = result.report;
  report.train_records = train_recs.size();
  report.val_records = val_recs.size();
  report.train_patches = patches.size();

  // Image-level error with the classifier steering the rescaler, as at inference.
  auto metrics_on = [&](std::span<const ImageRecord> recs) {
    std::vector<double> pred, gt;
    CountOptions copts;
    copts.prm = cfg.prm;
    copts.threads = cfg.threads;
    for (const auto& r : recs) {
      pred.push_back(count_image(r, state, net, copts).image_count);
      gt.push_back(static_cast<double>(r.points.size()));
    }
    return mae_rmse(pred, gt);
  };

  const auto bs = static_cast<size_t>(cfg.batch_size);
  for (int epoch = static_cast<int>(state.meta.epochs_completed); epoch < cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_at(epoch, cfg);
    std::vector<size_t> order(patches.size());
    std::iota(order.begin(), order.end(), size_t{0});
    auto rng = stream(cfg.seed, kEpochOrder, static_cast<uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);

    for (size_t start = 0; start < order.size(); start += bs) {
      if (cfg.max_steps > 0 && state.meta.steps >= cfg.max_steps) {
        report.stopped_by_max_steps = true;
        break;
      }
      std::vector<const Patch*> batch;
      std::vector<CrowdClass> routes;
      for (size_t k = start; k < std::min(order.size(), start + bs); ++k) {
        batch.push_back(&patches[order[k]]);
        routes.push_back(*patches[order[k]].class_gt);
      }
      ForwardContext ctx(state, true, true);
      if (cfg.routing == RoutingMode::PredictedLabels) {
        // Routing by the classifier's current guess: a no-grad probe pass.
        ForwardContext pctx(std::as_const(state), false, false);
        std::vector<const Image*> imgs;
        for (const Patch* p : batch) imgs.push_back(&p->pixels);
        auto cur = trunk_start(pctx, net.backbone, ag::constant(input_tensor(imgs, state.norm)));
        trunk_run_to_branchout(pctx, net.backbone, cur);
        const auto logits = ch_forward(pctx, net.heads, cur.branchout).logits.value();
        for (size_t n = 0; n < batch.size(); ++n) {
          std::span<const double> row(logits.data.data() + n * kNumClasses, kNumClasses);
          routes[n] = predict_class(row).label;
          ++report.predicted_routes_used;
        }
      }
      auto loss = batch_loss(ctx, net, batch, routes, cfg.loss_weights, cfg.prm, cfg.detach_aux_heads);
      if (!std::isfinite(loss.breakdown.total))
        fail(ErrorCode::Training, "loss became non-finite at step " + std::to_string(state.meta.steps));
      ag::backward(loss.total);
      sgd_step(state, ctx.param_vars(), rec.lr, cfg);
      ++state.meta.steps;
      ++rec.steps;
      rec.train_loss.regressor += loss.breakdown.regressor;
      rec.train_loss.ch += loss.breakdown.ch;
      rec.train_loss.sm += loss.breakdown.sm;
      rec.train_loss.total += loss.breakdown.total;
    }
    if (rec.steps > 0) {
      const double n = static_cast<double>(rec.steps);
      rec.train_loss.regressor /= n;
      rec.train_loss.ch /= n;
      rec.train_loss.sm /= n;
      rec.train_loss.total /= n;
    }
    state.meta.epochs_completed = epoch + 1;
    if (!val_recs.empty()) rec.val = metrics_on(val_recs);
    log().info("epoch {} lr {:.6g} steps {} loss {:.5f} (reg {:.5f} ch {:.5f} sm {:.5f}){}", epoch,
                 rec.lr, rec.steps, rec.train_loss.total, rec.train_loss.regressor, rec.train_loss.ch,
                 rec.train_loss.sm,
                 rec.val ? fmt::format(" val MAE {:.4f} RMSE {:.4f}", rec.val->mae, rec.val->rmse) : "");
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec, state);
    if (report.stopped_by_max_steps || (cfg.max_steps > 0 && state.meta.steps >= cfg.max_steps)) {
      report.stopped_by_max_steps = report.stopped_by_max_steps || epoch + 1 < cfg.epochs;
      break;
    }
  }
  report.total_steps = state.meta.steps;
  report.train_metrics = metrics_on(train_recs);
  return result;
}

nlohmann::json train_report_json(const TrainReport& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs) {
    nlohmann::json j = {{"epoch", e.epoch},
                        {"lr", e.lr},
                        {"steps", e.steps},
                        {"loss",
                         {{"regressor", e.train_loss.regressor},
                          {"ch", e.train_loss.ch},
                          {"sm", e.train_loss.sm},
                          {"total", e.train_loss.total}}}};
    if (e.val) j["val"] = {{"mae", e.val->mae}, {"rmse", e.val->rmse}};
    epochs.push_back(j);
  }
  return {{"epochs", epochs},
          {"total_steps", r.total_steps},
          {"stopped_by_max_steps", r.stopped_by_max_steps},
          {"predicted_routes_used", r.predicted_routes_used},
          {"train_records", r.train_records},
          {"val_records", r.val_records},
          {"train_patches", r.train_patches},
          {"train_metrics", {{"mae", r.train_metrics.mae}, {"rmse", r.train_metrics.rmse}}},
          {"checkpoint", r.checkpoint_path.string()}};
}

}  // namespace crowdcount

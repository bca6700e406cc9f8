// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "crowdcount/checkpoint.hpp"
#include "crowdcount/data_io.hpp"
#include "crowdcount/evaluate.hpp"
#include "crowdcount/gradcheck.hpp"
#include "crowdcount/patch_pipeline.hpp"
#include "crowdcount/prm.hpp"
#include "crowdcount/trainer.hpp"
#include "shape_trace.hpp"
#include "test_util.hpp"

using namespace crowdcount;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;
};

int failures = 0;

void run(const std::string& name, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("threw: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget_s > 0 && secs > budget_s) {
    o.ok = false;
    o.detail += " (over the " + std::to_string(static_cast<int>(budget_s)) + " s budget)";
  }
  if (!o.ok) ++failures;
  std::printf("%s  %-44s %7.2f s  %s\n", o.ok ? "PASS" : "FAIL", name.c_str(), secs, o.detail.c_str());
  std::fflush(stdout);
}

template <class... A>
std::string fmt(const char* f, A... a) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

// The overfit model is reused by the follow-up checks.
struct Overfit {
  std::vector<ImageRecord> train_records;
  TrainResult result;
  EvalReport eval;
  double mean_gt = 0.0;
  bool ready = false;
} overfit;

Outcome criterion_labels() {
  int64_t checked = 0;
  for (int64_t m : {1, 7, 100, 997})
    for (int64_t cc = 0; cc <= 2 * m; ++cc) {
      // Brute force: the smallest class whose upper bound holds, compared in
      // integers (cc ≤ m/20 ⇔ 20cc ≤ m, cc ≤ m/5 ⇔ 5cc ≤ m).
      CrowdClass want = CrowdClass::HCP;
      if (cc == 0) want = CrowdClass::NCP;
      else if (20 * cc <= m) want = CrowdClass::LCP;
      else if (5 * cc <= m) want = CrowdClass::MCP;
      if (label_patch(cc, m) != want) return {false, fmt("cc_gt=%lld cc_max=%lld", (long long)cc, (long long)m)};
      ++checked;
    }
  return {true, fmt("%lld cases", (long long)checked)};
}

Outcome criterion_tiling() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> side(1, 1500), npts(0, 500);
  std::uniform_real_distribution<float> pix(0.0f, 255.0f);
  const int t = 256;
  for (int k = 0; k < 200; ++k) {
    ImageRecord rec;
    rec.id = "r" + std::to_string(k);
    const int h = side(rng), w = side(rng);
    rec.image = Image(3, h, w);
    for (auto& v : rec.image.data) v = pix(rng);
    const int n = npts(rng);
    std::uniform_real_distribution<double> px(0.0, std::nextafter(static_cast<double>(w), 0.0)),
        py(0.0, std::nextafter(static_cast<double>(h), 0.0));
    for (int i = 0; i < n; ++i) rec.points.push_back({px(rng), py(rng)});

    const auto tiles = tile_image(rec, t);
    const int rows = (h + t - 1) / t, cols = (w + t - 1) / t;
    if (static_cast<int>(tiles.size()) != rows * cols) return {false, fmt("image %d: %zu tiles", k, tiles.size())};
    int64_t total = 0;
    std::vector<uint8_t> covered(static_cast<size_t>(rows * t) * cols * t, 0);
    for (const auto& p : tiles) {
      total += p.gt_count();
      if (p.origin.row % t || p.origin.col % t || p.pixels.height != t || p.pixels.width != t)
        return {false, fmt("image %d: misplaced tile", k)};
      for (int y = 0; y < t; ++y)
        for (int x = 0; x < t; ++x) {
          const int gy = p.origin.row + y, gx = p.origin.col + x;
          auto& c = covered[static_cast<size_t>(gy) * cols * t + gx];
          if (c++) return {false, fmt("image %d: pixel (%d,%d) covered twice", k, gy, gx)};
          const float want = gy < h && gx < w ? rec.image.at(1, gy, gx) : 0.0f;
          if (p.pixels.at(1, y, x) != want) return {false, fmt("image %d: pixel (%d,%d) differs", k, gy, gx)};
        }
    }
    for (auto c : covered)
      if (c != 1) return {false, fmt("image %d: canvas not covered", k)};
    if (total != n) return {false, fmt("image %d: %lld of %d heads", k, (long long)total, n)};
  }
  return {true, "200 images"};
}

Outcome criterion_prm() {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> half(2, 128);
  double worst = 0.0;
  for (int k = 0; k < 50; ++k) {
    const int s = 2 * half(rng), q = s / 2;
    const Image p = test::random_image(3, s, s, rng);
    for (auto cls : kAllClasses) {
      const size_t want = cls == CrowdClass::NCP ? 0 : cls == CrowdClass::HCP ? 4 : 1;
      const auto out = prm_rescale(p, cls);
      if (out.patches.size() != want) return {false, fmt("patch %d: %zu outputs", k, out.patches.size())};
    }
    const auto out = prm_rescale(p, CrowdClass::HCP);
    const int offs[4][2] = {{0, 0}, {0, q}, {q, 0}, {q, q}};
    for (int i = 0; i < 4; ++i) {
      const Image back = bilinear_resize(out.patches[static_cast<size_t>(i)], q, q);
      const Image quad = crop(p, offs[i][0], offs[i][1], q, q);
      const Image oracle = test::oracle_bilinear(test::oracle_bilinear(quad, s, s), q, q);
      worst = std::max(worst, test::max_abs_diff(back, oracle));
    }
  }
  return {worst <= 1e-6, fmt("max round-trip deviation %.3g", worst)};
}

Outcome criterion_shapes() {
  const auto t = test::trace(ArchConfig{});
  using test::chw;
  std::vector<std::pair<Shape, Shape>> pairs{
      {t.bb.ifm.shape(), chw(32, 64, 64)},      {t.ch[0], chw(64, 32, 32)},
      {t.ch[1], chw(32, 16, 16)},               {t.ch[2], chw(32, 8, 8)},
      {t.ch[3], Shape{1, 1024}},                {t.ch[4], Shape{1, 4}},
      {t.cmod, chw(32, 64, 64)},                {t.crh[1], chw(64, 32, 32)},
      {t.crh[2], chw(64, 16, 16)},              {t.crh[3], chw(64, 8, 8)},
      {t.crh[4], Shape{1, 1024}},               {t.crh[5], Shape{1, 1}},
      {t.bb.lfm[0].shape(), chw(32, 64, 64)},   {t.bb.lfm[1].shape(), chw(64, 32, 32)},
      {t.bb.lfm[2].shape(), chw(128, 16, 16)},
  };
  for (size_t i = 0; i < pairs.size(); ++i)
    if (pairs[i].first != pairs[i].second) return {false, fmt("shape %zu differs", i)};
  return {true, fmt("%zu shapes", pairs.size())};
}

Outcome criterion_gradcheck() {
  const auto r = grad_check(GradcheckOptions{});
  std::ostringstream d;
  bool ok = !r.groups.empty();
  for (const auto& g : r.groups) {
    ok = ok && g.entries_checked > 0 && g.max_rel_error < 1e-3;
    d << g.group << " " << fmt("%.2g", g.max_rel_error) << "  ";
  }
  return {ok, d.str()};
}

Outcome criterion_overfit() {
  SynthOptions so;
  so.n_images = 71;
  so.size_range = {64, 64};
  so.count_range = {0, 40};
  so.blob_radius = {2, 3};
  so.seed = 11;
  const auto recs = generate_synthetic(so);

  TrainConfig cfg;
  cfg.arch = ArchConfig::tiny();
  cfg.epochs = 75;
  cfg.batch_size = 16;
  cfg.base_lr = 0.1;
  cfg.lr_halving_period = 25;
  cfg.grad_clip_norm = 5.0;
  cfg.val_fraction = 0.1;
  cfg.seed = 3;
  overfit.result = train(recs, cfg);
  for (auto i : split_dataset(recs.size(), cfg.val_fraction, cfg.seed).train) {
    overfit.train_records.push_back(recs[i]);
    overfit.mean_gt += static_cast<double>(recs[i].points.size());
  }
  overfit.mean_gt /= static_cast<double>(overfit.train_records.size());
  overfit.eval = evaluate(overfit.result.state, overfit.train_records);
  overfit.ready = true;

  const auto& rep = overfit.result.report;
  const double rel = overfit.eval.metrics.mae / overfit.mean_gt;
  const bool ok = rep.total_steps == 300 && rep.train_patches == 64 && rel < 0.05 && overfit.eval.ch_loss < 0.1;
  return {ok, fmt("steps %lld patches %zu MAE %.3f = %.2f%% of mean %.2f, Loss_CH %.4f", (long long)rep.total_steps,
                  rep.train_patches, overfit.eval.metrics.mae, 100 * rel, overfit.mean_gt, overfit.eval.ch_loss)};
}

Outcome overfit_eval_matches_training() {
  if (!overfit.ready) return {false, "overfit model missing"};
  const double a = overfit.eval.metrics.mae, b = overfit.result.report.train_metrics.mae;
  return {std::abs(a - b) <= 1e-6, fmt("evaluate %.9f vs training report %.9f", a, b)};
}

Outcome overfit_blank_image() {
  if (!overfit.ready) return {false, "overfit model missing"};
  ImageRecord blank{"white", Image(3, 64, 64, 255.0f), {}};
  const auto r = count_image(blank, overfit.result.state);
  return {r.image_count == 0.0, fmt("count %.4f, class %s", r.image_count,
                                    class_name(r.per_patch.front().predicted))};
}

Outcome criterion_metrics() {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> len(1, 200);
  std::uniform_real_distribution<double> val(0.0, 1000.0);
  for (int k = 0; k < 1000; ++k) {
    std::vector<double> p(static_cast<size_t>(len(rng))), g(p.size());
    for (auto& v : p) v = val(rng);
    for (auto& v : g) v = val(rng);
    const auto m = mae_rmse(p, g);
    // Equal when every error has the same size; allow for rounding there.
    if (m.mae > m.rmse * (1 + 1e-12)) return {false, fmt("vector %d: MAE %.17g > RMSE %.17g", k, m.mae, m.rmse)};
  }
  const std::vector<double> p{10, 20}, g{12, 16};
  const auto m = mae_rmse(p, g);
  const bool hand = std::abs(m.mae - 3.0) < 1e-12 && std::abs(m.rmse - 3.1623) <= 1e-4;
  return {hand, fmt("hand case (%.4f, %.4f)", m.mae, m.rmse)};
}

Outcome criterion_forced_ncp() {
  std::mt19937_64 rng(8);
  ModelState state = init_model(ArchConfig{}, 4);
  ImageRecord rec{"noise", test::random_image(3, 300, 400, rng), {}};
  CountOptions o;
  o.forced_class = CrowdClass::NCP;
  const auto r = count_image(rec, state, o);
  bool ok = r.image_count == 0.0 && r.per_patch.size() == 4;
  for (const auto& p : r.per_patch) ok = ok && p.count == 0.0 && p.routed == CrowdClass::NCP;
  return {ok, fmt("count %g over %zu patches", r.image_count, r.per_patch.size())};
}

Outcome criterion_determinism() {
  SynthOptions so;
  so.n_images = 20;
  so.size_range = {64, 128};
  so.count_range = {0, 25};
  so.blob_radius = {2, 3};
  so.seed = 21;
  const auto recs = generate_synthetic(so);
  TrainConfig cfg;
  cfg.arch = ArchConfig::tiny();
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.grad_clip_norm = 5.0;
  cfg.val_fraction = 0.25;
  cfg.seed = 9;
  const auto a = train(recs, cfg), b = train(recs, cfg);
  bool same = a.report.epochs.size() == b.report.epochs.size();
  for (size_t e = 0; same && e < a.report.epochs.size(); ++e)
    same = a.report.epochs[e].val && b.report.epochs[e].val &&
           a.report.epochs[e].val->mae == b.report.epochs[e].val->mae;
  if (!same) return {false, "validation MAE differs between identical runs"};
  if (serialize_checkpoint(a.state) != serialize_checkpoint(b.state)) return {false, "weights differ"};

  test::TempDir dir("acceptance");
  save_checkpoint(a.state, dir.path / "m.ckpt");
  const ModelState back = load_checkpoint(dir.path / "m.ckpt");
  std::mt19937_64 rng(3);
  ImageRecord probe{"probe", test::random_image(3, 150, 170, rng), {}};
  for (auto cls : kAllClasses) {
    CountOptions o;
    o.forced_class = cls;
    o.keep_segmentation = true;
    const auto x = count_image(probe, a.state, o), y = count_image(probe, back, o);
    for (size_t i = 0; i < x.per_patch.size(); ++i)
      if (x.per_patch[i].probs != y.per_patch[i].probs || x.per_patch[i].sub_counts != y.per_patch[i].sub_counts ||
          x.per_patch[i].sm != y.per_patch[i].sm)
        return {false, fmt("reloaded forward differs (class %s)", class_name(cls))};
  }
  return {true, fmt("val MAE %.6f twice; reload bit-exact", a.report.epochs.back().val->mae)};
}

Outcome criterion_schedule() {
  const TrainConfig cfg;
  for (int e = 0; e < 120; ++e) {
    const double want = 0.001 * std::pow(0.5, e / 30);
    if (lr_at(e, cfg) != want) return {false, fmt("epoch %d: %.17g vs %.17g", e, lr_at(e, cfg), want)};
  }
  return {true, "epochs 0..119"};
}

}  // namespace

int main() {
  run("1 label_patch vs brute force", 1, criterion_labels);
  run("2 tiling conservation and partition", 30, criterion_tiling);
  run("3 PRM round trip and count law", 30, criterion_prm);
  run("4 default layer shapes", 10, criterion_shapes);
  run("5 gradient check (tiny)", 300, criterion_gradcheck);
  run("6 overfit (tiny, 300 steps)", 600, criterion_overfit);
  run("6a eval on train set matches training MAE", 0, overfit_eval_matches_training);
  run("6b blank white image counts 0", 0, overfit_blank_image);
  run("7 MAE <= RMSE and hand case", 1, criterion_metrics);
  run("8 forced NCP gives zero", 10, criterion_forced_ncp);
  run("9 determinism and checkpoint reload", 900, criterion_determinism);
  run("10 learning-rate schedule", 0, criterion_schedule);
  std::printf("%s: %d failing\n", failures ? "FAILED" : "ALL PASSED", failures);
  return failures ? 1 : 0;
}

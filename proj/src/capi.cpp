#include "crowdcount/crowdcount.h"

#include <cstring>
#include <string>

#include <nlohmann/json.hpp>

#include "crowdcount/checkpoint.hpp"
#include "crowdcount/config.hpp"
#include "crowdcount/error.hpp"
#include "crowdcount/evaluate.hpp"
#include "crowdcount/gradcheck.hpp"
#include "crowdcount/patch_pipeline.hpp"
#include "crowdcount/trainer.hpp"

using namespace crowdcount;
using nlohmann::json;

struct cc_model {
  ModelState state;
};
struct cc_dataset {
  std::vector<ImageRecord> records;
};
struct cc_count_result {
  ImageRecord record;  // pixels dropped; id and size kept for the report
  CountResult result;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
cc_status guard(F&& body) {
  try {
    body();
    return CC_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return static_cast<cc_status>(static_cast<int>(e.code()));
  } catch (const json::exception& e) {
    g_last_error = std::string("malformed JSON argument: ") + e.what();
    return CC_ERR_ARGUMENT;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return CC_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return CC_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  require(p != nullptr, ErrorCode::Argument, std::string(what) + " must not be NULL");
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

json parse(const char* text, const char* what) {
  if (!text || !*text) return json::object();
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Argument, std::string(what) + " is not valid JSON: " + e.what());
  }
}

CountOptions count_options(const json& j) {
  for (const auto& [k, _] : j.items())
    require(k == "routing" || k == "forced_class" || k == "lcp_rule" || k == "threads" ||
                k == "keep_segmentation",
            ErrorCode::Argument, "unknown count option '" + k + "'");
  CountOptions o;
  if (j.contains("routing")) {
    const auto r = j.at("routing").get<std::string>();
    require(r == "gt_labels" || r == "predicted_labels", ErrorCode::Argument,
            "routing must be 'gt_labels' or 'predicted_labels'");
    o.routing = r == "gt_labels" ? RoutingMode::GtLabels : RoutingMode::PredictedLabels;
  }
  if (j.contains("forced_class")) {
    auto c = class_from_name(j.at("forced_class").get<std::string>());
    require(c.has_value(), ErrorCode::Argument, "forced_class must be NCP, LCP, MCP or HCP");
    o.forced_class = c;
  }
  if (j.contains("lcp_rule")) {
    const auto r = j.at("lcp_rule").get<std::string>();
    require(r == "identity" || r == "downscale_centered", ErrorCode::Argument,
            "lcp_rule must be 'identity' or 'downscale_centered'");
    o.prm.lcp = r == "identity" ? LcpRule::Identity : LcpRule::DownscaleCentered;
  }
  if (j.contains("threads")) o.threads = j.at("threads").get<int>();
  if (j.contains("keep_segmentation")) o.keep_segmentation = j.at("keep_segmentation").get<bool>();
  require(o.threads >= 1, ErrorCode::Argument, "threads must be >= 1");
  return o;
}

json count_result_json(const cc_count_result& r) {
  json patches = json::array();
  for (const auto& p : r.result.per_patch)
    patches.push_back({{"origin", {p.origin.row, p.origin.col}},
                       {"class", class_name(p.predicted)},
                       {"routed_class", class_name(p.routed)},
                       {"count", p.count},
                       {"sub_counts", p.sub_counts}});
  return {{"id", r.record.id},
          {"width", r.record.image.width},
          {"height", r.record.image.height},
          {"image_count", r.result.image_count},
          {"patches", patches}};
}

cc_count_result* make_result(const ImageRecord& rec, CountResult res) {
  auto* out = new cc_count_result;
  out->record.id = rec.id;
  out->record.image.width = rec.image.width;
  out->record.image.height = rec.image.height;
  out->result = std::move(res);
  return out;
}

}  // namespace

extern "C" {

const char* cc_last_error(void) { return g_last_error.c_str(); }

const char* cc_status_name(cc_status status) {
  if (status == CC_OK) return "ok";
  if (status < CC_ERR_ARGUMENT || status > CC_ERR_INTERNAL) return "unknown_error";
  return error_code_name(static_cast<ErrorCode>(static_cast<int>(status)));
}

void cc_string_free(char* s) { std::free(s); }

cc_status cc_dataset_load(const char* manifest_path, cc_dataset** out) {
  return guard([&] {
    need(manifest_path, "manifest_path");
    need(out, "out");
    *out = new cc_dataset{load_dataset(manifest_path)};
  });
}

cc_status cc_dataset_synthesize(const char* synth_json, cc_dataset** out) {
  return guard([&] {
    need(out, "out");
    const json j = parse(synth_json, "synth_json");
    // Reuse the config parser's schema for the synthetic block.
    const auto cfg = train_config_from_json({{"data", {{"synthetic", j}}}});
    *out = new cc_dataset{generate_synthetic(*cfg.synthetic)};
  });
}

cc_status cc_dataset_write(const cc_dataset* data, const char* dir, char** manifest_path) {
  return guard([&] {
    need(data, "data");
    need(dir, "dir");
    const auto path = write_dataset(data->records, dir);
    if (manifest_path) *manifest_path = dup(path.string());
  });
}

size_t cc_dataset_size(const cc_dataset* data) { return data ? data->records.size() : 0; }

cc_status cc_dataset_record(const cc_dataset* data, size_t index, int* width, int* height,
                            size_t* n_points) {
  return guard([&] {
    need(data, "data");
    require(index < data->records.size(), ErrorCode::Argument, "record index out of range");
    const auto& r = data->records[index];
    if (width) *width = r.image.width;
    if (height) *height = r.image.height;
    if (n_points) *n_points = r.points.size();
  });
}

void cc_dataset_free(cc_dataset* data) { delete data; }

cc_status cc_model_init(const char* arch_json, uint64_t seed, cc_model** out) {
  return guard([&] {
    need(out, "out");
    const auto arch = arch_from_json(parse(arch_json, "arch_json"));
    *out = new cc_model{init_model(arch, seed)};
  });
}

cc_status cc_model_load(const char* path, cc_model** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new cc_model{load_checkpoint(path)};
  });
}

cc_status cc_model_save(const cc_model* model, const char* path) {
  return guard([&] {
    need(model, "model");
    need(path, "path");
    save_checkpoint(model->state, path);
  });
}

cc_status cc_model_info(const cc_model* model, char** info_json) {
  return guard([&] {
    need(model, "model");
    need(info_json, "info_json");
    const auto& s = model->state;
    *info_json = dup(json{{"arch", arch_to_json(s.arch)},
                          {"cc_max", s.stats.cc_max},
                          {"parameter_count", s.parameter_count()},
                          {"epochs_completed", s.meta.epochs_completed},
                          {"steps", s.meta.steps}}
                         .dump());
  });
}

void cc_model_free(cc_model* model) { delete model; }

cc_status cc_train(const char* config_json, const char* base_dir, const cc_dataset* data,
                   const cc_model* resume, cc_model** out, char** report_json) {
  return guard([&] {
    need(out, "out");
    const auto cfg = train_config_from_json(parse(config_json, "config_json"),
                                            base_dir ? base_dir : "");
    std::vector<ImageRecord> loaded;
    if (!data) loaded = load_training_data(cfg);
    std::span<const ImageRecord> records = data ? std::span<const ImageRecord>(data->records)
                                                : std::span<const ImageRecord>(loaded);
    auto result = train(records, cfg, resume ? &resume->state : nullptr);
    if (report_json) *report_json = dup(train_report_json(result.report).dump());
    *out = new cc_model{std::move(result.state)};
  });
}

cc_status cc_lr_at(const char* config_json, int epoch, double* lr) {
  return guard([&] {
    need(lr, "lr");
    *lr = lr_at(epoch, train_config_from_json(parse(config_json, "config_json")));
  });
}

cc_status cc_evaluate(const cc_model* model, const cc_dataset* data, const char* options_json,
                      char** report_json) {
  return guard([&] {
    need(model, "model");
    need(data, "data");
    need(report_json, "report_json");
    const auto co = count_options(parse(options_json, "options_json"));
    require(!co.forced_class, ErrorCode::Argument, "evaluate does not take forced_class");
    EvalOptions eo;
    eo.routing = co.routing;
    eo.prm = co.prm;
    eo.threads = co.threads;
    *report_json = dup(eval_report_json(evaluate(model->state, data->records, eo)).dump());
  });
}

cc_status cc_count_record(const cc_model* model, const cc_dataset* data, size_t index,
                          const char* options_json, cc_count_result** out) {
  return guard([&] {
    need(model, "model");
    need(data, "data");
    need(out, "out");
    require(index < data->records.size(), ErrorCode::Argument, "record index out of range");
    const auto& rec = data->records[index];
    const auto opts = count_options(parse(options_json, "options_json"));
    *out = make_result(rec, count_image(rec, model->state, opts));
  });
}

cc_status cc_count_image_file(const cc_model* model, const char* image_path, const char* options_json,
                              const char* out_dir, cc_count_result** out) {
  return guard([&] {
    need(model, "model");
    need(image_path, "image_path");
    need(out, "out");
    auto opts = count_options(parse(options_json, "options_json"));
    require(opts.routing == RoutingMode::PredictedLabels, ErrorCode::Argument,
            "an unannotated image can only be routed by predicted labels");
    ImageRecord rec;
    rec.id = std::filesystem::path(image_path).stem().string();
    rec.image = read_png(image_path);
    if (out_dir) opts.keep_segmentation = true;
    auto res = count_image(rec, model->state, opts);
    if (out_dir) write_count_report(rec, res, model->state.arch.input_size, out_dir);
    *out = make_result(rec, std::move(res));
  });
}

double cc_count_result_total(const cc_count_result* r) { return r ? r->result.image_count : 0.0; }

size_t cc_count_result_patches(const cc_count_result* r) { return r ? r->result.per_patch.size() : 0; }

cc_status cc_count_result_patch(const cc_count_result* r, size_t index, int* row, int* col,
                                int* predicted_class, double* count) {
  return guard([&] {
    need(r, "result");
    require(index < r->result.per_patch.size(), ErrorCode::Argument, "patch index out of range");
    const auto& p = r->result.per_patch[index];
    if (row) *row = p.origin.row;
    if (col) *col = p.origin.col;
    if (predicted_class) *predicted_class = static_cast<int>(p.predicted);
    if (count) *count = p.count;
  });
}

cc_status cc_count_result_json(const cc_count_result* r, char** out) {
  return guard([&] {
    need(r, "result");
    need(out, "out");
    *out = dup(count_result_json(*r).dump());
  });
}

void cc_count_result_free(cc_count_result* r) { delete r; }

cc_status cc_gradcheck(const char* options_json, char** report_json) {
  return guard([&] {
    need(report_json, "report_json");
    const json j = parse(options_json, "options_json");
    GradcheckOptions o;
    for (const auto& [k, v] : j.items()) {
      if (k == "preset") {
        const auto p = v.get<std::string>();
        require(p == "tiny" || p == "default", ErrorCode::Argument, "preset must be tiny or default");
        o.arch = p == "tiny" ? ArchConfig::tiny() : ArchConfig{};
      } else if (k == "arch") {
        o.arch = arch_from_json(v);
      } else if (k == "seed") {
        o.seed = v.get<uint64_t>();
      } else if (k == "samples_per_tensor") {
        o.samples_per_tensor = v.get<int>();
      } else if (k == "step") {
        o.step = v.get<double>();
      } else if (k == "vacm_enabled") {
        o.arch.vacm_enabled = v.get<bool>();
      } else if (k == "zero_regression") {
        o.zero_regression = v.get<bool>();
        if (o.zero_regression) o.weights = {1.0, 0.0, 0.0};
      } else {
        fail(ErrorCode::Argument, "unknown gradcheck option '" + k + "'");
      }
    }
    *report_json = dup(gradcheck_report_json(grad_check(o)).dump());
  });
}

cc_status cc_label_patch(int64_t cc_gt, int64_t cc_max, int* out_class) {
  return guard([&] {
    need(out_class, "out_class");
    *out_class = static_cast<int>(label_patch(cc_gt, cc_max));
  });
}

cc_status cc_mae_rmse(const double* pred, const double* gt, size_t n, double* mae, double* rmse) {
  return guard([&] {
    require(n == 0 || (pred && gt), ErrorCode::Argument, "pred and gt must not be NULL");
    const auto m = mae_rmse(std::span<const double>(pred, n), std::span<const double>(gt, n));
    if (mae) *mae = m.mae;
    if (rmse) *rmse = m.rmse;
  });
}

cc_status cc_prm_dump(const char* patch_png, int cls, const char* options_json, const char* out_dir,
                      size_t* n_written) {
  return guard([&] {
    need(patch_png, "patch_png");
    need(out_dir, "out_dir");
    require(cls >= 0 && cls < kNumClasses, ErrorCode::Argument, "class must be 0..3");
    const auto opts = count_options(parse(options_json, "options_json"));
    const auto img = read_png(patch_png);
    const auto outcome = prm_rescale(img, static_cast<CrowdClass>(cls), opts.prm);
    std::filesystem::create_directories(out_dir);
    const std::string stem = std::filesystem::path(patch_png).stem().string();
    for (size_t i = 0; i < outcome.patches.size(); ++i)
      write_png(std::filesystem::path(out_dir) /
                    (stem + "_" + std::to_string(i) + "_" + rescale_tag_name(outcome.provenance[i]) + ".png"),
                outcome.patches[i]);
    if (n_written) *n_written = outcome.patches.size();
  });
}

}  // extern "C"

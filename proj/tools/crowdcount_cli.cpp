// Command-line front end. Talks to the library only through the C API.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "crowdcount/crowdcount.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Failure {
  int status;
  std::string message;
};

void check(cc_status st) {
  if (st != CC_OK) throw Failure{st, cc_last_error()};
}

std::string take(char* s) {
  std::string out = s ? s : "";
  cc_string_free(s);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Failure{CC_ERR_IO, "cannot open '" + p.string() + "'"};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_file(const fs::path& p) {
  try {
    return json::parse(slurp(p));
  } catch (const json::parse_error& e) {
    throw Failure{CC_ERR_CONFIG, "'" + p.string() + "' is not valid JSON: " + e.what()};
  }
}

fs::path under_root(const fs::path& p) {
  const char* root = std::getenv("CROWDCOUNT_OUTPUT_ROOT");
  if (p.is_absolute() || !root || !*root) return p;
  return fs::path(root) / p;
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  out << text << '\n';
  if (!out) throw Failure{CC_ERR_IO, "cannot write '" + p.string() + "'"};
}

struct ModelHandle {
  cc_model* m = nullptr;
  ~ModelHandle() { cc_model_free(m); }
};
struct DataHandle {
  cc_dataset* d = nullptr;
  ~DataHandle() { cc_dataset_free(d); }
};
struct ResultHandle {
  cc_count_result* r = nullptr;
  ~ResultHandle() { cc_count_result_free(r); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patch-based crowd counting"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train a model from a JSON config");
  std::string train_config, resume_path, out_override;
  std::optional<uint64_t> train_seed;
  std::optional<int> train_epochs;
  std::optional<int64_t> max_steps;
  train->add_option("--config", train_config, "Training config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", train_seed, "Override the config seed");
  train->add_option("--epochs", train_epochs, "Override the epoch count");
  train->add_option("--max-steps", max_steps, "Stop after this many optimiser steps");
  train->add_option("--resume", resume_path, "Continue from a checkpoint")->check(CLI::ExistingFile);
  train->add_option("--out", out_override, "Override output_dir");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  std::string eval_ckpt, eval_manifest, eval_routing = "predicted_labels", eval_out;
  int eval_threads = 1;
  eval->add_option("--checkpoint", eval_ckpt)->required()->check(CLI::ExistingFile);
  eval->add_option("--manifest", eval_manifest)->required()->check(CLI::ExistingFile);
  eval->add_option("--routing", eval_routing)->check(CLI::IsMember({"predicted_labels", "gt_labels"}));
  eval->add_option("--threads", eval_threads)->check(CLI::PositiveNumber);
  eval->add_option("--report", eval_out, "Also write the report to this file");

  // count
  auto* count = app.add_subcommand("count", "Count people in one image");
  std::string count_ckpt, count_image, count_out;
  int count_threads = 1;
  count->add_option("--checkpoint", count_ckpt)->required()->check(CLI::ExistingFile);
  count->add_option("--image", count_image)->required();
  count->add_option("--out", count_out, "Directory for the report and overlay")->required();
  count->add_option("--threads", count_threads)->check(CLI::PositiveNumber);

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
  int synth_n = 0;
  std::string synth_out;
  uint64_t synth_seed = 0;
  std::pair<int, int> synth_size{256, 256}, synth_count{0, 50}, synth_radius{4, 8};
  synth->add_option("--n", synth_n, "Number of images")->required()->check(CLI::NonNegativeNumber);
  synth->add_option("--out", synth_out)->required();
  synth->add_option("--seed", synth_seed)->required();
  synth->add_option("--size", synth_size, "Min and max side");
  synth->add_option("--count", synth_count, "Min and max people");
  synth->add_option("--radius", synth_radius, "Min and max blob radius");

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "Compare analytic and numeric gradients");
  std::string grad_config;
  uint64_t grad_seed = 0;
  int grad_samples = 2;
  double grad_tol = 1e-3;
  grad->add_option("--config", grad_config, "Config whose 'arch' is checked (default: tiny)")
      ->check(CLI::ExistingFile);
  grad->add_option("--seed", grad_seed);
  grad->add_option("--samples", grad_samples, "Random entries per tensor");
  grad->add_option("--tolerance", grad_tol);

  // prm
  auto* prm = app.add_subcommand("prm", "Dump the rescaled patches of a square PNG patch");
  std::string prm_patch, prm_class, prm_out, prm_rule = "downscale_centered";
  prm->add_option("--patch", prm_patch)->required()->check(CLI::ExistingFile);
  prm->add_option("--class", prm_class)->required()->check(CLI::IsMember({"NCP", "LCP", "MCP", "HCP"}));
  prm->add_option("--out", prm_out)->required();
  prm->add_option("--lcp-rule", prm_rule)->check(CLI::IsMember({"downscale_centered", "identity"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    if (rc != 0) std::cerr << json{{"error", "argument_error"}, {"message", e.what()}}.dump() << '\n';
    return rc;
  }

  try {
    if (*train) {
      json cfg = parse_file(train_config);
      if (train_seed) cfg["seed"] = *train_seed;
      if (train_epochs) cfg["epochs"] = *train_epochs;
      if (max_steps) cfg["max_steps"] = *max_steps;
      if (!out_override.empty()) cfg["output_dir"] = out_override;
      const fs::path out_dir = under_root(cfg.value("output_dir", std::string("runs")));
      ModelHandle resume, model;
      if (!resume_path.empty()) check(cc_model_load(resume_path.c_str(), &resume.m));
      char* report = nullptr;
      const std::string base = fs::path(train_config).parent_path().string();
      check(cc_train(cfg.dump().c_str(), base.c_str(), nullptr, resume.m, &model.m, &report));
      json rep = json::parse(take(report));
      const fs::path ckpt = out_dir / "model.ckpt";
      check(cc_model_save(model.m, ckpt.c_str()));
      rep["checkpoint"] = ckpt.string();
      write_text(out_dir / "train_report.json", rep.dump(2));
      write_text(out_dir / "config.json", cfg.dump(2));
      std::cout << json{{"checkpoint", ckpt.string()},
                        {"report", (out_dir / "train_report.json").string()},
                        {"total_steps", rep["total_steps"]}}
                       .dump()
                << '\n';
    } else if (*eval) {
      ModelHandle model;
      DataHandle data;
      check(cc_model_load(eval_ckpt.c_str(), &model.m));
      check(cc_dataset_load(eval_manifest.c_str(), &data.d));
      const std::string opts = json{{"routing", eval_routing}, {"threads", eval_threads}}.dump();
      char* report = nullptr;
      check(cc_evaluate(model.m, data.d, opts.c_str(), &report));
      const std::string text = json::parse(take(report)).dump(2);
      if (!eval_out.empty()) write_text(under_root(eval_out), text);
      std::cout << text << '\n';
    } else if (*count) {
      ModelHandle model;
      ResultHandle res;
      check(cc_model_load(count_ckpt.c_str(), &model.m));
      const fs::path out_dir = under_root(count_out);
      const std::string opts = json{{"threads", count_threads}}.dump();
      check(cc_count_image_file(model.m, count_image.c_str(), opts.c_str(), out_dir.c_str(), &res.r));
      char* text = nullptr;
      check(cc_count_result_json(res.r, &text));
      std::cout << json::parse(take(text)).dump(2) << '\n';
    } else if (*synth) {
      DataHandle data;
      const json opts = {{"n_images", synth_n},
                         {"size_range", {synth_size.first, synth_size.second}},
                         {"count_range", {synth_count.first, synth_count.second}},
                         {"blob_radius", {synth_radius.first, synth_radius.second}},
                         {"seed", synth_seed}};
      check(cc_dataset_synthesize(opts.dump().c_str(), &data.d));
      char* manifest = nullptr;
      check(cc_dataset_write(data.d, under_root(synth_out).c_str(), &manifest));
      std::cout << json{{"manifest", take(manifest)}, {"images", cc_dataset_size(data.d)}}.dump() << '\n';
    } else if (*grad) {
      json opts = {{"seed", grad_seed}, {"samples_per_tensor", grad_samples}};
      if (!grad_config.empty()) {
        const json cfg = parse_file(grad_config);
        opts["arch"] = cfg.contains("arch") ? cfg["arch"] : json{{"preset", "tiny"}};
      } else {
        opts["preset"] = "tiny";
      }
      char* report = nullptr;
      check(cc_gradcheck(opts.dump().c_str(), &report));
      const json rep = json::parse(take(report));
      std::cout << rep.dump(2) << '\n';
      const double worst = rep["max_rel_error"].get<double>();
      if (!(worst < grad_tol))
        throw Failure{CC_ERR_INTERNAL, "max relative gradient error " + std::to_string(worst) +
                                           " exceeds " + std::to_string(grad_tol)};
    } else if (*prm) {
      const int cls = prm_class == "NCP" ? 0 : prm_class == "LCP" ? 1 : prm_class == "MCP" ? 2 : 3;
      size_t n = 0;
      const std::string opts = json{{"lcp_rule", prm_rule}}.dump();
      check(cc_prm_dump(prm_patch.c_str(), cls, opts.c_str(), under_root(prm_out).c_str(), &n));
      std::cout << json{{"written", n}}.dump() << '\n';
    }
  } catch (const Failure& f) {
    std::cerr << json{{"error", cc_status_name(static_cast<cc_status>(f.status))}, {"message", f.message}}.dump()
              << '\n';
    return f.status == 0 ? 1 : f.status;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "internal_error"}, {"message", e.what()}}.dump() << '\n';
    return CC_ERR_INTERNAL;
  }
  return 0;
}

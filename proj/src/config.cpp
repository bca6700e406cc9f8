#include "crowdcount/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "crowdcount/error.hpp"

namespace crowdcount {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  require(j.is_object(), ErrorCode::Config, where + " must be an object");
  for (const auto& [key, _] : j.items())
    require(known.count(key) > 0, ErrorCode::Config, "unknown key '" + key + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::Config, where + "." + key + " has the wrong type");
  }
}

std::pair<int, int> read_range(const json& j, const char* key, std::pair<int, int> fallback,
                               const std::string& where) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  require(v.is_array() && v.size() == 2 && v[0].is_number_integer() && v[1].is_number_integer(),
          ErrorCode::Config, where + "." + key + " must be [min, max]");
  return {v[0].get<int>(), v[1].get<int>()};
}

}  // namespace

const char* routing_mode_name(RoutingMode mode) {
  return mode == RoutingMode::GtLabels ? "gt_labels" : "predicted_labels";
}

json arch_to_json(const ArchConfig& a) {
  return {{"base_channels", a.base_channels},
          {"num_branches", a.num_branches},
          {"residual_units_per_block", a.residual_units_per_block},
          {"unit_depth", static_cast<int>(a.unit_depth)},
          {"input_size", a.input_size},
          {"branch_out_rb", a.branch_out_rb},
          {"vacm_enabled", a.vacm_enabled},
          {"stem_channels", a.stem_channels},
          {"head_hidden", a.head_hidden},
          {"bottleneck_divisor", a.bottleneck_divisor},
          {"bn_momentum", a.bn_momentum},
          {"bn_eps", a.bn_eps},
          {"seg_radius", a.seg_radius}};
}

ArchConfig arch_from_json(const json& j) {
  const std::string where = "arch";
  reject_unknown(j,
                 {"preset", "base_channels", "num_branches", "residual_units_per_block", "unit_depth",
                  "input_size", "branch_out_rb", "vacm_enabled", "stem_channels", "head_hidden",
                  "bottleneck_divisor", "bn_momentum", "bn_eps", "seg_radius"},
                 where);
  ArchConfig a;
  std::string preset = "default";
  read(j, "preset", preset, where);
  if (preset == "tiny") {
    a = ArchConfig::tiny();
  } else {
    require(preset == "default", ErrorCode::Config, "arch.preset must be 'default' or 'tiny'");
  }
  read(j, "base_channels", a.base_channels, where);
  read(j, "num_branches", a.num_branches, where);
  read(j, "residual_units_per_block", a.residual_units_per_block, where);
  int depth = static_cast<int>(a.unit_depth);
  read(j, "unit_depth", depth, where);
  require(depth == 2 || depth == 3, ErrorCode::Config, "arch.unit_depth must be 2 or 3");
  a.unit_depth = static_cast<UnitDepth>(depth);
  read(j, "input_size", a.input_size, where);
  read(j, "branch_out_rb", a.branch_out_rb, where);
  read(j, "vacm_enabled", a.vacm_enabled, where);
  read(j, "stem_channels", a.stem_channels, where);
  read(j, "head_hidden", a.head_hidden, where);
  read(j, "bottleneck_divisor", a.bottleneck_divisor, where);
  read(j, "bn_momentum", a.bn_momentum, where);
  read(j, "bn_eps", a.bn_eps, where);
  read(j, "seg_radius", a.seg_radius, where);
  a.validate();
  return a;
}

void TrainConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) { require(ok, ErrorCode::Config, msg); };
  check(epochs >= 1, "epochs must be >= 1");
  check(batch_size >= 1, "batch_size must be >= 1");
  check(base_lr > 0, "base_lr must be positive");
  check(lr_halving_period >= 1, "lr_halving_period must be >= 1");
  check(weight_decay >= 0, "weight_decay must be non-negative");
  check(momentum >= 0 && momentum < 1, "momentum must be in [0, 1)");
  check(val_fraction > 0 && val_fraction < 1, "val_fraction must be in (0, 1)");
  check(loss_weights.regressor >= 0 && loss_weights.ch >= 0 && loss_weights.sm >= 0,
        "loss weights must be non-negative");
  check(grad_clip_norm >= 0, "grad_clip_norm must be non-negative");
  check(max_steps >= 0, "max_steps must be non-negative");
  check(sample_patches >= 0, "sample_patches must be non-negative");
  check(threads >= 1, "threads must be >= 1");
  for (int s : crop_sizes) check(s >= 1, "crop sizes must be positive");
  arch.validate();
}

std::vector<int> TrainConfig::effective_crop_sizes() const {
  if (!crop_sizes.empty()) return crop_sizes;
  const int s = arch.input_size;
  return {s / 2, s, 2 * s};
}

json train_config_to_json(const TrainConfig& c) {
  json j = {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"base_lr", c.base_lr},
            {"lr_halving_period", c.lr_halving_period},
            {"weight_decay", c.weight_decay},
            {"momentum", c.momentum},
            {"val_fraction", c.val_fraction},
            {"seed", c.seed},
            {"arch", arch_to_json(c.arch)},
            {"routing_mode", routing_mode_name(c.routing)},
            {"loss_weights", {{"regressor", c.loss_weights.regressor},
                              {"ch", c.loss_weights.ch},
                              {"sm", c.loss_weights.sm}}},
            {"lcp_rule", c.prm.lcp == LcpRule::Identity ? "identity" : "downscale_centered"},
            {"detach_aux_heads", c.detach_aux_heads},
            {"grad_clip_norm", c.grad_clip_norm},
            {"max_steps", c.max_steps},
            {"sample_patches", c.sample_patches},
            {"crop_sizes", c.crop_sizes},
            {"output_dir", c.output_dir.string()},
            {"threads", c.threads}};
  if (c.synthetic) {
    const auto& s = *c.synthetic;
    j["data"] = {{"synthetic",
                  {{"n_images", s.n_images},
                   {"size_range", {s.size_range.first, s.size_range.second}},
                   {"count_range", {s.count_range.first, s.count_range.second}},
                   {"blob_radius", {s.blob_radius.first, s.blob_radius.second}},
                   {"seed", s.seed}}}};
  } else {
    j["data"] = {{"manifest", c.manifest.string()}};
  }
  return j;
}

TrainConfig train_config_from_json(const json& j, const fs::path& base_dir) {
  const std::string where = "config";
  reject_unknown(j,
                 {"epochs", "batch_size", "base_lr", "lr_halving_period", "weight_decay", "momentum",
                  "val_fraction", "seed", "arch", "routing_mode", "loss_weights", "lcp_rule",
                  "detach_aux_heads", "grad_clip_norm", "max_steps", "sample_patches", "crop_sizes", "output_dir",
                  "threads", "data"},
                 where);
  TrainConfig c;
  read(j, "epochs", c.epochs, where);
  read(j, "batch_size", c.batch_size, where);
  read(j, "base_lr", c.base_lr, where);
  read(j, "lr_halving_period", c.lr_halving_period, where);
  read(j, "weight_decay", c.weight_decay, where);
  read(j, "momentum", c.momentum, where);
  read(j, "val_fraction", c.val_fraction, where);
  read(j, "seed", c.seed, where);
  if (j.contains("arch")) c.arch = arch_from_json(j.at("arch"));
  if (j.contains("routing_mode")) {
    std::string m;
    read(j, "routing_mode", m, where);
    if (m == "gt_labels") c.routing = RoutingMode::GtLabels;
    else if (m == "predicted_labels") c.routing = RoutingMode::PredictedLabels;
    else fail(ErrorCode::Config, "routing_mode must be 'gt_labels' or 'predicted_labels'");
  }
  if (j.contains("loss_weights")) {
    const auto& w = j.at("loss_weights");
    reject_unknown(w, {"regressor", "ch", "sm"}, "loss_weights");
    read(w, "regressor", c.loss_weights.regressor, "loss_weights");
    read(w, "ch", c.loss_weights.ch, "loss_weights");
    read(w, "sm", c.loss_weights.sm, "loss_weights");
  }
  if (j.contains("lcp_rule")) {
    std::string r;
    read(j, "lcp_rule", r, where);
    if (r == "downscale_centered") c.prm.lcp = LcpRule::DownscaleCentered;
    else if (r == "identity") c.prm.lcp = LcpRule::Identity;
    else fail(ErrorCode::Config, "lcp_rule must be 'downscale_centered' or 'identity'");
  }
  read(j, "detach_aux_heads", c.detach_aux_heads, where);
  read(j, "grad_clip_norm", c.grad_clip_norm, where);
  read(j, "max_steps", c.max_steps, where);
  read(j, "sample_patches", c.sample_patches, where);
  read(j, "crop_sizes", c.crop_sizes, where);
  std::string out_dir = c.output_dir.string();
  read(j, "output_dir", out_dir, where);
  c.output_dir = out_dir;
  read(j, "threads", c.threads, where);

  if (j.contains("data")) {
    const auto& d = j.at("data");
    reject_unknown(d, {"manifest", "synthetic"}, "data");
    require(d.contains("manifest") != d.contains("synthetic"), ErrorCode::Config,
            "data must name exactly one of 'manifest' or 'synthetic'");
    if (d.contains("manifest")) {
      std::string m;
      read(d, "manifest", m, "data");
      fs::path p(m);
      c.manifest = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    } else {
      const auto& s = d.at("synthetic");
      const std::string sw = "data.synthetic";
      reject_unknown(s, {"n_images", "size_range", "count_range", "blob_radius", "seed"}, sw);
      SynthOptions o;
      read(s, "n_images", o.n_images, sw);
      o.size_range = read_range(s, "size_range", o.size_range, sw);
      o.count_range = read_range(s, "count_range", o.count_range, sw);
      o.blob_radius = read_range(s, "blob_radius", o.blob_radius, sw);
      read(s, "seed", o.seed, sw);
      c.synthetic = o;
    }
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Config, "config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return train_config_from_json(j, path.parent_path());
}

fs::path output_root(const fs::path& fallback) {
  const char* env = std::getenv("CROWDCOUNT_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fallback;
}

}  // namespace crowdcount

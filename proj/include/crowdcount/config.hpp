#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crowdcount/arch_config.hpp"
#include "crowdcount/data_io.hpp"
#include "crowdcount/heads.hpp"
#include "crowdcount/prm.hpp"

namespace crowdcount {

const char* routing_mode_name(RoutingMode mode);

struct TrainConfig {
  int epochs = 120;
  int batch_size = 16;
  double base_lr = 0.001;
  int lr_halving_period = 30;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  double val_fraction = 0.10;
  uint64_t seed = 0;
  ArchConfig arch;
  RoutingMode routing = RoutingMode::GtLabels;
  LossWeights loss_weights;
  PrmOptions prm;
  // Stops CH and SM gradients at the classifier tap and the attention input.
  bool detach_aux_heads = false;
  // Rescales the whole gradient to this L2 norm when it is larger; 0 disables.
  double grad_clip_norm = 0.0;
  // 0: no limit. Otherwise training stops after this many optimiser steps.
  int64_t max_steps = 0;

  // Training patches: 0 tiles every training image; otherwise this many random
  // crops (plus their mirrors) with sides drawn from crop_sizes.
  int sample_patches = 0;
  std::vector<int> crop_sizes;  // empty: {S/2, S, 2S} for input size S

  // Exactly one data source is used.
  std::filesystem::path manifest;
  std::optional<SynthOptions> synthetic;

  std::filesystem::path output_dir = "runs";
  int threads = 1;

  void validate() const;
  std::vector<int> effective_crop_sizes() const;
};

nlohmann::json arch_to_json(const ArchConfig& arch);
// Starts from `preset` ("default" or "tiny") when the object names one.
ArchConfig arch_from_json(const nlohmann::json& j);

nlohmann::json train_config_to_json(const TrainConfig& cfg);
// Relative manifest paths resolve against `base_dir`. Unknown keys and
// ill-typed values raise Error(Config).
TrainConfig train_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
TrainConfig load_train_config(const std::filesystem::path& path);

// Output root: $CROWDCOUNT_OUTPUT_ROOT when set, otherwise `fallback`.
std::filesystem::path output_root(const std::filesystem::path& fallback);

}  // namespace crowdcount

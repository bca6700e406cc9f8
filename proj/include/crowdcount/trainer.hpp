#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "crowdcount/config.hpp"
#include "crowdcount/network.hpp"

namespace crowdcount {

double lr_at(int epoch, const TrainConfig& cfg);

// Joint objective of one mini-batch. Patches must carry class_gt; `routes`
// picks the rescale applied to each (NCP routes keep the patch unchanged with
// a zero count target). `count_targets`, when given, replaces the per-item
// regression targets.
struct BatchLoss {
  ag::Var total;
  LossBreakdown breakdown;
  std::vector<double> class_probs;   // N×4
  std::vector<double> pred_counts;   // one per continuation item
  std::vector<double> target_counts;
  std::vector<int64_t> source;       // continuation item → batch row
};

BatchLoss batch_loss(ForwardContext& ctx, const Network& net, std::span<const Patch* const> batch,
                     std::span<const CrowdClass> routes, const LossWeights& weights,
                     const PrmOptions& prm, bool detach_aux_heads = false,
                     const std::vector<double>* count_targets = nullptr);

// Mean pixel intensity and spread per channel over the records, scaled to [0, 1].
Normalization compute_normalization(std::span<const ImageRecord> records);

struct DataSplit {
  std::vector<size_t> train;
  std::vector<size_t> val;
};

// Seeded permutation; the first floor(n·val_fraction) entries become validation.
DataSplit split_dataset(size_t n, double val_fraction, uint64_t seed);

// Training patches per the config: tiles of every record, or random crops
// with mirrors. class_gt is set from `stats`.
std::vector<Patch> training_patches(std::span<const ImageRecord> records, const TrainConfig& cfg,
                                    const DatasetStats& stats);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  int64_t steps = 0;
  LossBreakdown train_loss;  // mean over the epoch's steps
  std::optional<ErrorMetrics> val;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int64_t total_steps = 0;
  bool stopped_by_max_steps = false;
  int64_t predicted_routes_used = 0;  // stays 0 under teacher forcing
  size_t train_records = 0;
  size_t val_records = 0;
  size_t train_patches = 0;
  ErrorMetrics train_metrics;  // final model on the training images
  std::filesystem::path checkpoint_path;
};

struct TrainResult {
  ModelState state;
  TrainReport report;
};

using EpochCallback = std::function<void(const EpochRecord&, const ModelState&)>;

// Nesterov SGD on the joint objective. With `resume`, training continues from
// resume->meta.epochs_completed with its weights, statistics and momentum.
// Throws Error(Training) naming the step when the loss stops being finite.
TrainResult train(std::span<const ImageRecord> records, const TrainConfig& cfg,
                  const ModelState* resume = nullptr, const EpochCallback& on_epoch = {});

nlohmann::json train_report_json(const TrainReport& report);

// Loads the configured data source (manifest or synthetic).
std::vector<ImageRecord> load_training_data(const TrainConfig& cfg);

}  // namespace crowdcount

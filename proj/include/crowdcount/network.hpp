#pragma once

#include <optional>
#include <span>
#include <vector>

#include "crowdcount/backbone.hpp"
#include "crowdcount/heads.hpp"
#include "crowdcount/model_state.hpp"
#include "crowdcount/prm.hpp"

namespace crowdcount {

// Layer graph derived from an ArchConfig. Cheap to build; holds no weights.
struct Network {
  ArchConfig arch;
  ParamRegistry registry;
  Backbone backbone;
  Heads heads;

  explicit Network(const ArchConfig& a);
};

// Fan-in variance-scaled convolution/linear weights, unit BN scale, zero
// shifts and biases. Values are float32-representable.
ModelState init_model(const ArchConfig& arch, uint64_t seed);

int64_t parameter_count(const ArchConfig& arch);

// Throws Error(Inference) if `state` lacks a parameter or buffer the
// architecture needs, or has one with the wrong shape.
void check_state_matches(const ModelState& state, const Network& net);

// N×3×S×S tensor: pixel/255 standardised per channel.
Tensor input_tensor(std::span<const Image* const> patches, const Normalization& norm);

ag::Var detach(const ag::Var& x);

struct ContinuationOut {
  ag::Var counts;                 // M×1 raw regression outputs
  std::vector<ag::Var> sm;        // per branch; undefined when attention is off
  std::vector<bool> sm_on_source; // SM rows index the original batch rather than M
};

// Runs CMod on `rescaled` (M patches), re-enters the trunk against the hook
// rows selected by `source`, and evaluates attention + regression.
ContinuationOut run_continuation(ForwardContext& ctx, const Network& net, const TrunkCursor& cursor,
                                 const ag::Var& rescaled, std::span<const int64_t> source,
                                 bool detach_attention_input = false);

struct PatchInferenceOptions {
  std::optional<CrowdClass> forced_class;
  PrmOptions prm;
  bool keep_segmentation = false;
};

struct PatchInference {
  ClassPrediction prediction;
  CrowdClass routed = CrowdClass::NCP;
  std::vector<double> sub_counts;  // raw output per rescaled patch
  double count = 0.0;              // sum of sub-counts clamped at 0
  std::vector<double> sm;          // Branch-1 SM of the original patch, if kept
  int sm_side = 0;
};

PatchInference infer_patch(const ModelState& state, const Network& net, const Image& patch,
                           const PatchInferenceOptions& opts = {});

}  // namespace crowdcount

#pragma once

#include <map>
#include <string>
#include <vector>

#include "crowdcount/autograd.hpp"
#include "crowdcount/model_state.hpp"

namespace crowdcount {

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamKind kind;
  int64_t fan_in = 1;
};

// Collects parameter declarations in construction order.
class ParamRegistry {
 public:
  void add(std::string name, Shape shape, ParamKind kind, int64_t fan_in = 1);
  void add_buffer(std::string name, Shape shape, double fill);
  const std::vector<ParamSpec>& params() const { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& buffers() const { return buffers_; }

 private:
  std::vector<ParamSpec> params_;
  std::vector<std::pair<std::string, Tensor>> buffers_;
};

// Conv (no bias) → BatchNorm → optional ReLU; padding k/2.
struct ConvBn {
  std::string name;
  int cin = 0;
  int cout = 0;
  int kernel = 3;
  int stride = 1;
  bool relu = true;

  ConvBn() = default;
  ConvBn(std::string n, int ci, int co, int k, int s, bool r, ParamRegistry& reg);
};

struct Linear {
  std::string name;
  int in = 0;
  int out = 0;

  Linear() = default;
  Linear(std::string n, int i, int o, ParamRegistry& reg);
};

// Parameter access and BN mode for one forward pass. In training mode the
// running statistics of `state` are updated, so the caller must own it
// exclusively; in inference mode `state` is only read.
class ForwardContext {
 public:
  ForwardContext(const ModelState& state, bool training, bool record_gradients);
  ForwardContext(ModelState& state, bool training, bool record_gradients);

  const ModelState& state() const { return *state_; }
  const ArchConfig& arch() const { return state_->arch; }
  bool training() const { return training_; }

  ag::Var param(const std::string& name);
  ag::BatchNormBuffers bn_buffers(const std::string& name);
  ag::BatchNormOptions bn_options() const;

  // Parameter leaves touched so far (only meaningful when recording).
  const std::map<std::string, ag::Var>& param_vars() const { return vars_; }

 private:
  const ModelState* state_;
  ModelState* mutable_state_ = nullptr;
  bool training_;
  bool record_;
  std::map<std::string, ag::Var> vars_;
};

ag::Var conv_bn(ForwardContext& ctx, const ConvBn& layer, const ag::Var& x);
ag::Var linear(ForwardContext& ctx, const Linear& layer, const ag::Var& x);

}  // namespace crowdcount

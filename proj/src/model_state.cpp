#include "crowdcount/model_state.hpp"

#include "crowdcount/error.hpp"
#include "crowdcount/layers.hpp"

namespace crowdcount {

bool is_batchnorm(ParamKind kind) {
  return kind == ParamKind::BnScale || kind == ParamKind::BnShift;
}

int64_t ModelState::parameter_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

void round_to_float(Tensor& t) {
  for (auto& v : t.data) v = static_cast<double>(static_cast<float>(v));
}

void round_state_to_float(ModelState& state) {
  for (auto& [_, t] : state.params) round_to_float(t);
  for (auto& [_, t] : state.buffers) round_to_float(t);
  for (auto& [_, t] : state.momentum) round_to_float(t);
  for (auto& v : state.norm.mean) v = static_cast<float>(v);
  for (auto& v : state.norm.stddev) v = static_cast<float>(v);
}

void ParamRegistry::add(std::string name, Shape shape, ParamKind kind, int64_t fan_in) {
  params_.push_back({std::move(name), std::move(shape), kind, fan_in});
}

void ParamRegistry::add_buffer(std::string name, Shape shape, double fill) {
  Tensor t(std::move(shape), fill);
  buffers_.emplace_back(std::move(name), std::move(t));
}

ConvBn::ConvBn(std::string n, int ci, int co, int k, int s, bool r, ParamRegistry& reg)
    : name(std::move(n)), cin(ci), cout(co), kernel(k), stride(s), relu(r) {
  reg.add(name + ".conv.weight", {co, ci, k, k}, ParamKind::ConvWeight,
          static_cast<int64_t>(ci) * k * k);
  reg.add(name + ".bn.weight", {co}, ParamKind::BnScale);
  reg.add(name + ".bn.bias", {co}, ParamKind::BnShift);
  reg.add_buffer(name + ".bn.running_mean", {co}, 0.0);
  reg.add_buffer(name + ".bn.running_var", {co}, 1.0);
}

Linear::Linear(std::string n, int i, int o, ParamRegistry& reg) : name(std::move(n)), in(i), out(o) {
  reg.add(name + ".weight", {o, i}, ParamKind::LinearWeight, i);
  reg.add(name + ".bias", {o}, ParamKind::LinearBias);
}

ForwardContext::ForwardContext(const ModelState& state, bool training, bool record_gradients)
    : state_(&state), training_(training), record_(record_gradients) {
  require(!training, ErrorCode::Internal,
          "training-mode forward needs mutable state for BN statistics");
}

ForwardContext::ForwardContext(ModelState& state, bool training, bool record_gradients)
    : state_(&state), mutable_state_(&state), training_(training), record_(record_gradients) {}

ag::Var ForwardContext::param(const std::string& name) {
  if (auto it = vars_.find(name); it != vars_.end()) return it->second;
  auto p = state_->params.find(name);
  if (p == state_->params.end()) fail(ErrorCode::Inference, "model has no parameter '" + name + "'");
  auto v = ag::leaf(p->second, record_);
  vars_.emplace(name, v);
  return v;
}

ag::BatchNormBuffers ForwardContext::bn_buffers(const std::string& name) {
  auto mean = state_->buffers.find(name + ".running_mean");
  auto var = state_->buffers.find(name + ".running_var");
  if (mean == state_->buffers.end() || var == state_->buffers.end())
    fail(ErrorCode::Inference, "model has no running statistics for '" + name + "'");
  ag::BatchNormBuffers b{&mean->second, &var->second};
  if (training_ && mutable_state_) {
    b.update_mean = &mutable_state_->buffers.at(name + ".running_mean");
    b.update_var = &mutable_state_->buffers.at(name + ".running_var");
  }
  return b;
}

ag::BatchNormOptions ForwardContext::bn_options() const {
  return {training_, training_ && mutable_state_ != nullptr, state_->arch.bn_momentum,
          state_->arch.bn_eps};
}

ag::Var conv_bn(ForwardContext& ctx, const ConvBn& layer, const ag::Var& x) {
  require(x.value().rank() == 4 && x.value().c() == layer.cin, ErrorCode::Argument,
          layer.name + ": expected " + std::to_string(layer.cin) + " input channels, got " +
              shape_string(x.shape()));
  auto y = ag::conv2d(x, ctx.param(layer.name + ".conv.weight"), layer.stride, layer.kernel / 2);
  y = ag::batch_norm(y, ctx.param(layer.name + ".bn.weight"), ctx.param(layer.name + ".bn.bias"),
                     ctx.bn_buffers(layer.name + ".bn"), ctx.bn_options());
  return layer.relu ? ag::relu(y) : y;
}

ag::Var linear(ForwardContext& ctx, const Linear& layer, const ag::Var& x) {
  return ag::linear(x, ctx.param(layer.name + ".weight"), ctx.param(layer.name + ".bias"));
}

}  // namespace crowdcount

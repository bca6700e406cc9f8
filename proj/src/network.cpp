#include "crowdcount/network.hpp"

#include <cmath>
#include <random>

#include "crowdcount/error.hpp"

namespace crowdcount {

namespace {

ArchConfig validated(const ArchConfig& a) {
  a.validate();
  return a;
}

}  // namespace

Network::Network(const ArchConfig& a)
    : arch(validated(a)), registry(), backbone(arch, registry), heads(arch, registry) {}

ModelState init_model(const ArchConfig& arch, uint64_t seed) {
  Network net(arch);
  ModelState state;
  state.arch = arch;
  state.meta.seed = seed;
  std::mt19937_64 rng(seed);
  for (const auto& spec : net.registry.params()) {
    Tensor t(spec.shape, 0.0);
    switch (spec.kind) {
      case ParamKind::ConvWeight:
      case ParamKind::LinearWeight: {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(spec.fan_in)));
        for (auto& v : t.data) v = dist(rng);
        break;
      }
      case ParamKind::BnScale: t.fill(1.0); break;
      case ParamKind::BnShift:
      case ParamKind::LinearBias: break;
    }
    round_to_float(t);
    state.params.emplace(spec.name, std::move(t));
    state.kinds.emplace(spec.name, spec.kind);
  }
  for (const auto& [name, t] : net.registry.buffers()) state.buffers.emplace(name, t);
  return state;
}

int64_t parameter_count(const ArchConfig& arch) {
  Network net(arch);
  int64_t n = 0;
  for (const auto& spec : net.registry.params()) n += shape_numel(spec.shape);
  return n;
}

void check_state_matches(const ModelState& state, const Network& net) {
  require(state.arch == net.arch, ErrorCode::Inference, "model architecture does not match");
  for (const auto& spec : net.registry.params()) {
    auto it = state.params.find(spec.name);
    require(it != state.params.end(), ErrorCode::Inference, "model is missing parameter '" + spec.name + "'");
    require(it->second.shape == spec.shape, ErrorCode::Inference,
            "parameter '" + spec.name + "' has shape " + shape_string(it->second.shape) +
                ", expected " + shape_string(spec.shape));
  }
  for (const auto& [name, t] : net.registry.buffers()) {
    auto it = state.buffers.find(name);
    require(it != state.buffers.end() && it->second.shape == t.shape, ErrorCode::Inference,
            "model is missing or mis-shapes buffer '" + name + "'");
  }
  require(state.params.size() == net.registry.params().size(), ErrorCode::Inference,
          "model carries parameters the architecture does not use");
}

Tensor input_tensor(std::span<const Image* const> patches, const Normalization& norm) {
  require(!patches.empty(), ErrorCode::Argument, "input_tensor: empty batch");
  const int h = patches[0]->height, w = patches[0]->width;
  Tensor t(Shape{static_cast<int64_t>(patches.size()), 3, h, w});
  size_t k = 0;
  for (const Image* img : patches) {
    require(img->channels == 3 && img->height == h && img->width == w, ErrorCode::Argument,
            "input_tensor: patches differ in shape");
    for (int c = 0; c < 3; ++c) {
      const double m = norm.mean[static_cast<size_t>(c)], s = norm.stddev[static_cast<size_t>(c)];
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) t.data[k++] = (img->at(c, y, x) / 255.0 - m) / s;
    }
  }
  return t;
}

ag::Var detach(const ag::Var& x) { return ag::constant(x.value()); }

ContinuationOut run_continuation(ForwardContext& ctx, const Network& net, const TrunkCursor& cursor,
                                 const ag::Var& rescaled, std::span<const int64_t> source,
                                 bool detach_attention_input) {
  require(static_cast<int64_t>(source.size()) == rescaled.value().n(), ErrorCode::Argument,
          "continuation: one source index per rescaled patch");
  std::vector<ag::Var> hook;
  for (const auto& h : cursor.hook) hook.push_back(ag::gather_batch(h, source));
  auto cm = cmod_forward(ctx, net.backbone, rescaled);
  auto tail = trunk_finish(ctx, net.backbone, std::move(hook), cm);

  const int nb = net.arch.num_branches;
  ContinuationOut out;
  out.sm.resize(static_cast<size_t>(nb));
  out.sm_on_source.assign(static_cast<size_t>(nb), false);
  std::vector<ag::Var> ffm;
  for (int b = 0; b < nb; ++b) {
    const auto i = static_cast<size_t>(b);
    if (!net.arch.vacm_enabled) {
      ffm.push_back(tail.lfm[i]);
      continue;
    }
    const bool early = cursor.efm[i].defined();
    const ag::Var& efm = early ? cursor.efm[i] : tail.efm[i];
    ag::Var sm_in = detach_attention_input ? detach(efm) : efm;
    ag::Var a = sm_in;
    for (const auto& layer : net.heads.vacm[i].attention) a = conv_bn(ctx, layer, a);
    ag::Var sm = ag::sigmoid(a);
    ag::Var vafm = ag::mul_channels(efm, sm);
    if (early) vafm = ag::gather_batch(vafm, source);
    out.sm[i] = sm;
    out.sm_on_source[i] = early;
    ffm.push_back(vacm_merge(ctx, net.heads, b, vafm, tail.lfm[i]));
  }
  out.counts = crh_forward(ctx, net.heads, ffm);
  return out;
}

PatchInference infer_patch(const ModelState& state, const Network& net, const Image& patch,
                           const PatchInferenceOptions& opts) {
  const int s = net.arch.input_size;
  require(patch.channels == 3 && patch.height == s && patch.width == s, ErrorCode::Inference,
          "patch must be 3x" + std::to_string(s) + "x" + std::to_string(s));
  ForwardContext ctx(state, false, false);
  const Image* one[] = {&patch};
  auto input = ag::constant(input_tensor(one, state.norm));

  auto cursor = trunk_start(ctx, net.backbone, input);
  trunk_run_to_branchout(ctx, net.backbone, cursor);
  auto ch = ch_forward(ctx, net.heads, cursor.branchout);

  PatchInference out;
  out.prediction = predict_class(ch.logits.value().data);
  out.routed = opts.forced_class.value_or(out.prediction.label);
  if (out.routed == CrowdClass::NCP) return out;

  trunk_run_to_hook(ctx, net.backbone, cursor);
  auto rescaled = prm_rescale(patch, out.routed, opts.prm);
  std::vector<const Image*> ptrs;
  for (const auto& img : rescaled.patches) ptrs.push_back(&img);
  std::vector<int64_t> source(ptrs.size(), 0);
  auto cont = run_continuation(ctx, net, cursor, ag::constant(input_tensor(ptrs, state.norm)), source);

  for (double v : cont.counts.value().data) {
    out.sub_counts.push_back(v);
    out.count += std::max(0.0, v);
  }
  if (opts.keep_segmentation && net.arch.vacm_enabled && cont.sm_on_source[0]) {
    out.sm = cont.sm[0].value().data;
    out.sm_side = net.arch.branch_side(0);
  }
  return out;
}

}  // namespace crowdcount

#pragma once

#include <random>
#include <vector>

#include "crowdcount/network.hpp"

namespace crowdcount::test {

inline Shape chw(int c, int h, int w) { return {1, c, h, w}; }

inline ag::Var random_input(int n, int s, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor t(Shape{n, 3, s, s});
  for (auto& v : t.data) v = d(rng);
  return ag::constant(std::move(t));
}

// Runs every stage once and keeps the intermediate maps.
struct Trace {
  BackboneOutputs bb;
  std::vector<Shape> ch;
  std::vector<Shape> crh;
  std::vector<AttentionOutput> att;
  Shape cmod;
};

inline Trace trace(const ArchConfig& arch) {
  Network net(arch);
  ModelState state = init_model(arch, 1);
  ForwardContext ctx(state, false, false);
  const auto x = random_input(1, arch.input_size, 2);
  Trace t;
  t.bb = backbone_forward(ctx, net.backbone, x, x);
  t.cmod = cmod_forward(ctx, net.backbone, x).shape();

  const auto& ch = net.heads.ch;
  auto y = conv_bn(ctx, ch.conv1, t.bb.branchout);
  t.ch.push_back(y.shape());
  y = conv_bn(ctx, ch.conv2, y);
  t.ch.push_back(y.shape());
  y = ag::avg_pool2(y);
  t.ch.push_back(y.shape());
  y = ag::relu(linear(ctx, ch.fc1, ag::flatten(y)));
  t.ch.push_back(y.shape());
  t.ch.push_back(linear(ctx, ch.fc2, y).shape());

  std::vector<ag::Var> ffm;
  for (int b = 0; b < arch.num_branches; ++b) {
    t.att.push_back(vacm(ctx, net.heads, b, t.bb.efm[static_cast<size_t>(b)], t.bb.lfm[static_cast<size_t>(b)]));
    ffm.push_back(t.att.back().ffm);
  }
  std::vector<ag::Var> parts{ffm[0]};
  for (int b = 1; b < arch.num_branches; ++b)
    parts.push_back(ag::resize_bilinear(ffm[static_cast<size_t>(b)], arch.branch_side(0), arch.branch_side(0)));
  const auto cat = ag::concat_channels(parts);
  t.crh.push_back(cat.shape());
  const auto& crh = net.heads.crh;
  auto z = conv_bn(ctx, crh.conv1, cat);
  t.crh.push_back(z.shape());
  z = conv_bn(ctx, crh.conv2, z);
  t.crh.push_back(z.shape());
  z = ag::avg_pool2(z);
  t.crh.push_back(z.shape());
  z = ag::relu(linear(ctx, crh.fc1, ag::flatten(z)));
  t.crh.push_back(z.shape());
  t.crh.push_back(linear(ctx, crh.fc2, z).shape());
  return t;
}

}  // namespace crowdcount::test

#include "crowdcount/backbone.hpp"

#include "crowdcount/error.hpp"

namespace crowdcount {

ArchConfig ArchConfig::tiny() {
  ArchConfig a;
  a.base_channels = 4;
  a.input_size = 64;
  a.stem_channels = 8;
  a.head_hidden = 32;
  a.bottleneck_divisor = 2;
  a.seg_radius = 2.0;
  return a;
}

int ArchConfig::num_ranks() const { return num_branches == 1 ? 2 : 1 + 2 * (num_branches - 1); }

int ArchConfig::phase_of_rank(int rank) const {
  if (rank == 0 || num_branches == 1) return 1;
  return 2 + (rank - 1) / 2;
}

bool ArchConfig::rank_opens_phase(int rank) const {
  return rank == 0 || (num_branches > 1 && rank % 2 == 1);
}

void ArchConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) { require(ok, ErrorCode::Config, msg); };
  check(base_channels >= 1, "base_channels must be >= 1");
  check(num_branches >= 1 && num_branches <= 4, "num_branches must be in 1..4");
  check(residual_units_per_block >= 1, "residual_units_per_block must be >= 1");
  check(unit_depth == UnitDepth::TwoLayer || unit_depth == UnitDepth::ThreeLayer,
        "unit_depth must be 2 or 3");
  check(input_size >= 32 && input_size % 32 == 0 && input_size % (4 << (num_branches - 1)) == 0,
        "input_size must be a multiple of 32 and of 4*2^(num_branches-1)");
  check(stem_channels >= 1 && head_hidden >= 1 && bottleneck_divisor >= 1,
        "stem_channels, head_hidden and bottleneck_divisor must be >= 1");
  check(branch_out_rb >= 0 && branch_out_rb + 1 < num_ranks(),
        "branch_out_rb must leave a later Branch-1 block for re-entry (have " +
            std::to_string(num_ranks()) + " blocks)");
  check(bn_eps > 0 && bn_momentum > 0 && bn_momentum <= 1, "invalid batch-norm constants");
  check(seg_radius > 0, "seg_radius must be positive");
}

ResidualBlock::ResidualBlock(std::string n, int ch, const ArchConfig& arch, ParamRegistry& reg)
    : name(std::move(n)), channels(ch) {
  for (int u = 0; u < arch.residual_units_per_block; ++u) {
    const std::string un = name + ".unit" + std::to_string(u);
    ResidualUnit unit;
    if (arch.unit_depth == UnitDepth::ThreeLayer) {
      const int inner = std::max(1, ch / arch.bottleneck_divisor);
      unit.layers.emplace_back(un + ".conv1", ch, inner, 1, 1, true, reg);
      unit.layers.emplace_back(un + ".conv2", inner, inner, 3, 1, true, reg);
      unit.layers.emplace_back(un + ".conv3", inner, ch, 1, 1, false, reg);
    } else {
      unit.layers.emplace_back(un + ".conv1", ch, ch, 3, 1, true, reg);
      unit.layers.emplace_back(un + ".conv2", ch, ch, 3, 1, false, reg);
    }
    units.push_back(std::move(unit));
  }
}

int ResidualBlock::conv_count() const {
  int n = 0;
  for (const auto& u : units) n += static_cast<int>(u.layers.size());
  return n;
}

const FusionPath* FusionLayer::path(int source, int target) const {
  for (const auto& p : paths)
    if (p.source == source && p.target == target) return &p;
  return nullptr;
}

Backbone::Backbone(const ArchConfig& arch, ParamRegistry& reg) {
  const int c = arch.base_channels;
  idl.emplace_back("idl.conv1", 3, arch.stem_channels, 3, 2, true, reg);
  idl.emplace_back("idl.conv2", arch.stem_channels, arch.stem_channels, 3, 2, true, reg);
  idl.emplace_back("idl.conv3", arch.stem_channels, c, 1, 1, true, reg);

  int live = 1;
  for (int r = 0; r < arch.num_ranks(); ++r) {
    TrunkRank rank;
    rank.index = r;
    rank.phase = arch.phase_of_rank(r);
    const std::string rn = "trunk.rank" + std::to_string(r);
    if (r > 0 && arch.rank_opens_phase(r) && live < arch.num_branches) {
      rank.transition.emplace(rn + ".transition", arch.branch_channels(live - 1),
                              arch.branch_channels(live), 3, 2, true, reg);
      ++live;
    }
    rank.live = live;
    for (int b = 0; b < live; ++b)
      rank.blocks.emplace_back(rn + ".b" + std::to_string(b), arch.branch_channels(b), arch, reg);
    rank.fusion.live = live;
    if (live > 1) {
      for (int t = 0; t < live; ++t) {
        for (int s = 0; s < live; ++s) {
          if (s == t) continue;
          FusionPath path;
          path.source = s;
          path.target = t;
          const std::string pn = rn + ".fuse.t" + std::to_string(t) + ".s" + std::to_string(s);
          if (s < t) {
            for (int k = s; k < t; ++k)
              path.down.emplace_back(pn + ".down" + std::to_string(k - s), arch.branch_channels(k),
                                     arch.branch_channels(k + 1), 3, 2, true, reg);
          } else {
            path.up.emplace(pn + ".up", arch.branch_channels(s), arch.branch_channels(t), 1, 1,
                            false, reg);
            path.up_factor = 1 << (s - t);
          }
          rank.fusion.paths.push_back(std::move(path));
        }
      }
    }
    ranks.push_back(std::move(rank));
  }

  cmod_conv1 = ConvBn("cmod.conv1", 3, arch.stem_channels, 3, 2, true, reg);
  cmod_conv2 = ConvBn("cmod.conv2", arch.stem_channels, c, 3, 2, true, reg);
  cmod_block = ResidualBlock("cmod.rb", c, arch, reg);
  bottleneck = ConvBn("bottleneck", 2 * c, c, 1, 1, true, reg);

  branch_out_rank = arch.branch_out_rb;
  reentry_rank = arch.branch_out_rb + 1;
}

ag::Var idl_forward(ForwardContext& ctx, const Backbone& bb, const ag::Var& x) {
  const auto& arch = ctx.arch();
  require(x.value().rank() == 4 && x.value().c() == 3 && x.value().h() == arch.input_size &&
              x.value().w() == arch.input_size,
          ErrorCode::Argument,
          "idl: expected N×3×" + std::to_string(arch.input_size) + "×" +
              std::to_string(arch.input_size) + " input, got " + shape_string(x.shape()));
  ag::Var y = x;
  for (const auto& layer : bb.idl) y = conv_bn(ctx, layer, y);
  return y;
}

ag::Var residual_block(ForwardContext& ctx, const ResidualBlock& block, const ag::Var& x) {
  require(x.value().rank() == 4 && x.value().c() == block.channels, ErrorCode::Argument,
          block.name + ": expected " + std::to_string(block.channels) + " channels, got " +
              shape_string(x.shape()));
  ag::Var y = x;
  for (const auto& unit : block.units) {
    ag::Var f = y;
    for (const auto& layer : unit.layers) f = conv_bn(ctx, layer, f);
    y = ag::relu(ag::add(y, f));
  }
  return y;
}

namespace {

void check_branch(const ArchConfig& arch, const ag::Var& x, int branch, const char* where) {
  const auto& v = x.value();
  const int side = arch.branch_side(branch);
  require(v.rank() == 4 && v.c() == arch.branch_channels(branch) && v.h() == side && v.w() == side,
          ErrorCode::Argument,
          std::string(where) + ": branch " + std::to_string(branch + 1) + " expects " +
              std::to_string(arch.branch_channels(branch)) + "×" + std::to_string(side) + "×" +
              std::to_string(side) + ", got " + shape_string(x.shape()));
}

}  // namespace

ag::Var fuse(ForwardContext& ctx, const FusionLayer& layer, std::span<const ag::Var> inputs,
             int target) {
  require(static_cast<int>(inputs.size()) == layer.live, ErrorCode::Argument,
          "fuse: expected one input per live branch");
  require(target >= 0 && target < layer.live, ErrorCode::Argument, "fuse: bad target branch");
  for (int b = 0; b < layer.live; ++b) check_branch(ctx.arch(), inputs[static_cast<size_t>(b)], b, "fuse");
  if (layer.live == 1) return inputs[0];

  std::vector<ag::Var> terms;
  for (int s = 0; s < layer.live; ++s) {
    const auto& in = inputs[static_cast<size_t>(s)];
    if (s == target) {
      terms.push_back(in);
      continue;
    }
    const FusionPath* path = layer.path(s, target);
    require(path != nullptr, ErrorCode::Internal, "fuse: missing path");
    ag::Var y = in;
    if (s < target) {
      for (const auto& conv : path->down) y = conv_bn(ctx, conv, y);
    } else {
      const int side = ctx.arch().branch_side(target);
      y = conv_bn(ctx, *path->up, ag::resize_bilinear(y, side, side));
    }
    terms.push_back(y);
  }
  return ag::relu(ag::add_all(terms));
}

std::vector<ag::Var> fuse_all(ForwardContext& ctx, const FusionLayer& layer,
                              std::span<const ag::Var> inputs) {
  std::vector<ag::Var> out;
  for (int t = 0; t < layer.live; ++t) out.push_back(fuse(ctx, layer, inputs, t));
  return out;
}

ag::Var cmod_forward(ForwardContext& ctx, const Backbone& bb, const ag::Var& rescaled) {
  const auto& arch = ctx.arch();
  require(rescaled.value().rank() == 4 && rescaled.value().c() == 3 &&
              rescaled.value().h() == arch.input_size && rescaled.value().w() == arch.input_size,
          ErrorCode::Argument, "cmod: expected rescaled patches of the input size, got " +
                                   shape_string(rescaled.shape()));
  auto y = conv_bn(ctx, bb.cmod_conv1, rescaled);
  y = conv_bn(ctx, bb.cmod_conv2, y);
  return residual_block(ctx, bb.cmod_block, y);
}

ag::Var bottleneck_concat(ForwardContext& ctx, const Backbone& bb, const ag::Var& branch1,
                          const ag::Var& cmod_feats) {
  check_branch(ctx.arch(), branch1, 0, "bottleneck");
  check_branch(ctx.arch(), cmod_feats, 0, "bottleneck");
  const ag::Var parts[] = {branch1, cmod_feats};
  return conv_bn(ctx, bb.bottleneck, ag::concat_channels(parts));
}

namespace {

// Transition (if the rank opens a phase) plus one residual block per branch.
std::vector<ag::Var> run_rank_blocks(ForwardContext& ctx, const TrunkRank& rank,
                                     std::vector<ag::Var>& branches, std::vector<ag::Var>& efm) {
  if (rank.transition) {
    auto created = conv_bn(ctx, *rank.transition, branches.back());
    efm[branches.size()] = created;
    branches.push_back(created);
  }
  std::vector<ag::Var> outs;
  for (int b = 0; b < rank.live; ++b)
    outs.push_back(residual_block(ctx, rank.blocks[static_cast<size_t>(b)], branches[static_cast<size_t>(b)]));
  if (rank.index == 0) efm[0] = outs[0];
  return outs;
}

}  // namespace

TrunkCursor trunk_start(ForwardContext& ctx, const Backbone& bb, const ag::Var& input) {
  TrunkCursor cur;
  cur.ifm = idl_forward(ctx, bb, input);
  cur.branches = {cur.ifm};
  cur.efm.resize(static_cast<size_t>(ctx.arch().num_branches));
  return cur;
}

void trunk_run_to_branchout(ForwardContext& ctx, const Backbone& bb, TrunkCursor& cur) {
  while (cur.next_rank <= bb.branch_out_rank) {
    const auto& rank = bb.ranks[static_cast<size_t>(cur.next_rank)];
    auto outs = run_rank_blocks(ctx, rank, cur.branches, cur.efm);
    if (rank.index == bb.branch_out_rank) cur.branchout = outs[0];
    cur.branches = fuse_all(ctx, rank.fusion, outs);
    ++cur.next_rank;
  }
}

void trunk_run_to_hook(ForwardContext& ctx, const Backbone& bb, TrunkCursor& cur) {
  trunk_run_to_branchout(ctx, bb, cur);
  require(cur.next_rank == bb.reentry_rank, ErrorCode::Internal, "trunk cursor past re-entry");
  cur.hook = run_rank_blocks(ctx, bb.ranks[static_cast<size_t>(cur.next_rank)], cur.branches, cur.efm);
  ++cur.next_rank;
}

TrunkTail trunk_finish(ForwardContext& ctx, const Backbone& bb, std::vector<ag::Var> hook,
                       const ag::Var& cmod_feats) {
  const auto& arch = ctx.arch();
  const auto& reentry = bb.ranks[static_cast<size_t>(bb.reentry_rank)];
  require(static_cast<int>(hook.size()) == reentry.live, ErrorCode::Argument,
          "trunk_finish: hook must hold one tensor per live branch");
  TrunkTail tail;
  tail.efm.resize(static_cast<size_t>(arch.num_branches));
  hook[0] = bottleneck_concat(ctx, bb, hook[0], cmod_feats);
  auto branches = fuse_all(ctx, reentry.fusion, hook);
  for (size_t r = static_cast<size_t>(bb.reentry_rank) + 1; r < bb.ranks.size(); ++r) {
    auto outs = run_rank_blocks(ctx, bb.ranks[r], branches, tail.efm);
    branches = fuse_all(ctx, bb.ranks[r].fusion, outs);
  }
  tail.lfm = std::move(branches);
  return tail;
}

BackboneOutputs backbone_forward(ForwardContext& ctx, const Backbone& bb, const ag::Var& input,
                                 const ag::Var& rescaled) {
  auto cur = trunk_start(ctx, bb, input);
  trunk_run_to_hook(ctx, bb, cur);
  auto cm = cmod_forward(ctx, bb, rescaled);
  auto tail = trunk_finish(ctx, bb, cur.hook, cm);
  BackboneOutputs out;
  out.ifm = cur.ifm;
  out.branchout = cur.branchout;
  out.hook = cur.hook;
  out.efm = cur.efm;
  for (size_t b = 0; b < out.efm.size(); ++b)
    if (!out.efm[b].defined()) out.efm[b] = tail.efm[b];
  out.lfm = std::move(tail.lfm);
  return out;
}

}  // namespace crowdcount

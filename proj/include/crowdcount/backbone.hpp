#pragma once

#include <optional>
#include <span>
#include <vector>

#include "crowdcount/arch_config.hpp"
#include "crowdcount/layers.hpp"

namespace crowdcount {

struct ResidualUnit {
  std::vector<ConvBn> layers;  // last layer has no ReLU; ReLU follows the skip sum
};

struct ResidualBlock {
  std::string name;
  int channels = 0;
  std::vector<ResidualUnit> units;

  ResidualBlock() = default;
  ResidualBlock(std::string n, int ch, const ArchConfig& arch, ParamRegistry& reg);
  int conv_count() const;
};

// Maps source branch `source` onto branch `target`: stride-2 convs when the
// source is finer, bilinear upsample + 1×1 conv-BN when it is coarser.
struct FusionPath {
  int source = 0;
  int target = 0;
  std::vector<ConvBn> down;
  std::optional<ConvBn> up;
  int up_factor = 1;
};

struct FusionLayer {
  int live = 1;
  std::vector<FusionPath> paths;

  const FusionPath* path(int source, int target) const;
};

struct TrunkRank {
  int index = 0;
  int phase = 1;
  int live = 1;
  std::optional<ConvBn> transition;  // creates branch live-1 when the rank opens a phase
  std::vector<ResidualBlock> blocks;  // one per live branch
  FusionLayer fusion;
};

struct Backbone {
  std::vector<ConvBn> idl;
  std::vector<TrunkRank> ranks;
  ConvBn cmod_conv1;
  ConvBn cmod_conv2;
  ResidualBlock cmod_block;
  ConvBn bottleneck;

  Backbone(const ArchConfig& arch, ParamRegistry& reg);

  int branch_out_rank = 1;
  int reentry_rank = 2;
};

ag::Var idl_forward(ForwardContext& ctx, const Backbone& bb, const ag::Var& x);
ag::Var residual_block(ForwardContext& ctx, const ResidualBlock& block, const ag::Var& x);

// Fuses every live branch into `target`, then applies ReLU. With one live
// branch this is the identity.
ag::Var fuse(ForwardContext& ctx, const FusionLayer& layer, std::span<const ag::Var> inputs,
             int target);
std::vector<ag::Var> fuse_all(ForwardContext& ctx, const FusionLayer& layer,
                              std::span<const ag::Var> inputs);

ag::Var cmod_forward(ForwardContext& ctx, const Backbone& bb, const ag::Var& rescaled);
ag::Var bottleneck_concat(ForwardContext& ctx, const Backbone& bb, const ag::Var& branch1,
                          const ag::Var& cmod_feats);

// Progress through the trunk on the original patch batch.
struct TrunkCursor {
  int next_rank = 0;
  std::vector<ag::Var> branches;  // post-fusion outputs feeding next_rank
  std::vector<ag::Var> efm;       // early feature maps, indexed by branch (may be undefined)
  ag::Var ifm;
  ag::Var branchout;              // Branch-1 output of the branch-out block, pre-fusion
  std::vector<ag::Var> hook;      // pre-fusion outputs of the re-entry rank
};

TrunkCursor trunk_start(ForwardContext& ctx, const Backbone& bb, const ag::Var& input);
void trunk_run_to_branchout(ForwardContext& ctx, const Backbone& bb, TrunkCursor& cursor);
void trunk_run_to_hook(ForwardContext& ctx, const Backbone& bb, TrunkCursor& cursor);

struct TrunkTail {
  std::vector<ag::Var> lfm;
  std::vector<ag::Var> efm;  // only branches created after re-entry are defined
};

// Re-enters the trunk with CMod features replacing Branch-1 at the hook, and
// runs to the last phase's output. `hook` holds one tensor per branch live at
// the re-entry rank, batch-aligned with `cmod_feats`.
TrunkTail trunk_finish(ForwardContext& ctx, const Backbone& bb, std::vector<ag::Var> hook,
                       const ag::Var& cmod_feats);

struct BackboneOutputs {
  ag::Var ifm;
  ag::Var branchout;
  std::vector<ag::Var> efm;
  std::vector<ag::Var> hook;
  std::vector<ag::Var> lfm;
};

// Single pass where `rescaled` (same batch as `input`) is the PRM output fed
// to CMod.
BackboneOutputs backbone_forward(ForwardContext& ctx, const Backbone& bb, const ag::Var& input,
                                 const ag::Var& rescaled);

}  // namespace crowdcount

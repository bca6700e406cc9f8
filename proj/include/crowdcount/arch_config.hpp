#pragma once

#include <string>

namespace crowdcount {

enum class UnitDepth { TwoLayer = 2, ThreeLayer = 3 };

// Architecture hyperparameters. Branch b (0-based) carries
// base_channels·2^b channels at input_size / (4·2^b) spatial side.
struct ArchConfig {
  int base_channels = 32;
  int num_branches = 3;
  int residual_units_per_block = 4;
  UnitDepth unit_depth = UnitDepth::ThreeLayer;
  int input_size = 256;
  // Index into the Branch-1 residual-block sequence (P1-RB1, P2-RB1, P2-RB2,
  // P3-RB1, ...). The classifier taps this block; rescaled patches re-enter at
  // the next one.
  int branch_out_rb = 1;
  bool vacm_enabled = true;

  // Widths the fixed-size layer tables pin at 64 / 1024 for the default build.
  int stem_channels = 64;
  int head_hidden = 1024;
  // 3-layer unit inner width = channels / bottleneck_divisor (at least 1).
  int bottleneck_divisor = 4;

  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  // Disk radius of the segmentation target, in input pixels.
  double seg_radius = 8.0;

  // C=4, 64-pixel inputs; used for gradient checks and desk-scale training.
  static ArchConfig tiny();

  // Throws Error(Config) when the combination cannot be built.
  void validate() const;

  int branch_channels(int branch) const { return base_channels << branch; }
  int branch_side(int branch) const { return input_size / (4 << branch); }

  // Residual-block ranks: phase 1 has one (two when it is the only phase),
  // every later phase two. Each rank runs one block per live branch.
  int num_ranks() const;
  int phase_of_rank(int rank) const;  // 1-based phase
  bool rank_opens_phase(int rank) const;

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

}  // namespace crowdcount

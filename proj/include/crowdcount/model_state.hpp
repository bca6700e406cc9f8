#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>

#include "crowdcount/arch_config.hpp"
#include "crowdcount/tensor.hpp"
#include "crowdcount/types.hpp"

namespace crowdcount {

// Per-channel standardisation applied after scaling pixels to [0, 1].
struct Normalization {
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> stddev{0.25, 0.25, 0.25};
  friend bool operator==(const Normalization&, const Normalization&) = default;
};

struct TrainingMeta {
  int64_t epochs_completed = 0;
  int64_t steps = 0;
  uint64_t seed = 0;
};

enum class ParamKind { ConvWeight, LinearWeight, LinearBias, BnScale, BnShift };

bool is_batchnorm(ParamKind kind);

// Learnable arrays, BN running statistics and optimiser momentum, keyed by a
// stable hierarchical name. All stored values are float32-representable, so
// a checkpoint round-trip is exact.
struct ModelState {
  ArchConfig arch;
  DatasetStats stats;
  Normalization norm;
  TrainingMeta meta;
  std::map<std::string, Tensor> params;
  std::map<std::string, ParamKind> kinds;
  std::map<std::string, Tensor> buffers;
  std::map<std::string, Tensor> momentum;

  int64_t parameter_count() const;
};

// Rounds every stored value to the nearest float32.
void round_to_float(Tensor& t);
void round_state_to_float(ModelState& state);

}  // namespace crowdcount

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "crowdcount/model_state.hpp"

namespace crowdcount {

inline constexpr uint32_t kCheckpointVersion = 1;

// Layout: 8-byte magic, u32 format version, u64 header length, JSON header
// (architecture, dataset stats, normalisation, training metadata, tensor
// table with 64-bit shapes), then little-endian float32 tensor data.
std::string serialize_checkpoint(const ModelState& state);
ModelState deserialize_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
// Errors: unreadable file → Io; bad magic, version mismatch, or tensors that
// disagree with the stored architecture → Load.
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace crowdcount

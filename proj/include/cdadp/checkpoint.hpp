#pragma once

// Binary network checkpoints.
//
// Layout (all integers little-endian uint64 unless noted):
//   magic "CDADPNET" (8 bytes), format version (uint32),
//   input_dim, hidden_layers, hidden_width, output_dim,
//   one activation byte per layer, output_scale as float64,
//   layer count, then (rows, cols, offset) per layer,
//   parameter count, then the parameters as little-endian float64.
// A JSON sidecar (<file>.meta.json) carries iteration, seed and config hash.

#include "cdadp/netcore.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace cdadp {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::uint64_t iteration = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string role;  // "policy" or "value"
};

void write_checkpoint(const std::filesystem::path& path, const Network& net);
Network read_checkpoint(const std::filesystem::path& path);

void write_checkpoint_meta(const std::filesystem::path& checkpoint_path, const CheckpointMeta& meta);
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& checkpoint_path);

}  // namespace cdadp

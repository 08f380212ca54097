#pragma once

// Binary level checkpoints.
//
// Layout (little-endian):
//   "MTEX1"
//   u32 level, u32 embed_dim, u32 num_layers, u32 num_vertices, f64 noise_sigma
//   u32 tensor_count, then per tensor: u32 rows, u32 cols, f32[rows * cols]
//     generator layers (w_neighbors, w_self, bias, norm_gain, norm_shift as
//     present), generator output scale, critic layers, fixed noise c
//   u32 byte count, RNG state text
//
// A sidecar `<file>.manifest` (key = value) records the header fields and,
// when given, the training config.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "meshtex/gan.hpp"

namespace meshtex {

inline constexpr std::string_view kCheckpointMagic = "MTEX1";

std::string serialize_checkpoint(const LevelCheckpoint& checkpoint);
// Throws ParseError on a malformed or truncated blob.
LevelCheckpoint deserialize_checkpoint(std::string_view bytes, const std::string& source_name = "<memory>");

std::filesystem::path checkpoint_manifest_path(const std::filesystem::path& file);

void save_checkpoint(const std::filesystem::path& file, const LevelCheckpoint& checkpoint,
                     const TrainConfig* config = nullptr);
LevelCheckpoint load_checkpoint(const std::filesystem::path& file);

// level_{k}.mtex for every level under `dir`.
std::filesystem::path checkpoint_file(const std::filesystem::path& dir, int level);
void save_checkpoints(const std::filesystem::path& dir, const std::vector<LevelCheckpoint>& checkpoints,
                      const TrainConfig* config = nullptr);
// Loads level_0.mtex, level_1.mtex, ... until the first missing file.
std::vector<LevelCheckpoint> load_checkpoints(const std::filesystem::path& dir);

// Levels must run 0, 1, ..., L-1 and each generator must match its level's
// layer count. Throws ValidationError otherwise.
void validate_checkpoint_chain(const std::vector<LevelCheckpoint>& checkpoints);

}  // namespace meshtex

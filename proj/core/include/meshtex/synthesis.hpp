#pragma once

// Inference: run a trained generator chain on a new mesh.
//
// The target is scaled to mean edge length 1; generators from the start level
// up to the finest level are applied in turn, each followed (except the
// last) by a 1->4 subdivision rescaled to the previous mean edge length.
// Each pass takes its own Gaussian noise tensor at that level's sigma.

#include <cstdint>
#include <vector>

#include "meshtex/gan.hpp"
#include "meshtex/mesh.hpp"

namespace meshtex {

struct SynthesisNoise {
  int start_level = 1;                    // 1-based, as in synthesize()
  std::vector<ad::Matrix<float>> levels;  // one V_l x 3 tensor per generator pass
};

// Output face count of a synthesis run.
std::size_t synthesized_face_count(std::size_t target_faces, std::size_t num_levels, int start_level);

// start_level is 1-based in [1, checkpoints.size()]. Throws ValidationError on
// an invalid chain or start level.
SynthesisNoise draw_synthesis_noise(const std::vector<LevelCheckpoint>& checkpoints, const Mesh& target,
                                    int start_level, std::uint64_t seed);

Mesh synthesize(const std::vector<LevelCheckpoint>& checkpoints, const Mesh& target, int start_level,
                std::uint64_t seed);
Mesh synthesize(const std::vector<LevelCheckpoint>& checkpoints, const Mesh& target, const SynthesisNoise& noise);

// (1 - t) * a + t * b per tensor; t = 0 and t = 1 return a and b exactly.
SynthesisNoise lerp_noise(const SynthesisNoise& a, const SynthesisNoise& b, float t);

// `steps` meshes at t = i / (steps - 1). Throws ValidationError when steps < 2.
std::vector<Mesh> interpolate_latents(const std::vector<LevelCheckpoint>& checkpoints, const Mesh& target,
                                      int start_level, std::uint64_t seed_a, std::uint64_t seed_b, int steps);

}  // namespace meshtex

#include "meshtex/synthesis.hpp"

#include <random>

#include <fmt/format.h>

#include "meshtex/checkpoint.hpp"
#include "meshtex/errors.hpp"
#include "meshtex/seeding.hpp"
#include "meshtex/subdivision.hpp"

namespace meshtex {

namespace {

constexpr std::uint64_t kStreamSynthesis = 21;

void check_start(const std::vector<LevelCheckpoint>& checkpoints, int start_level) {
  validate_checkpoint_chain(checkpoints);
  if (start_level < 1 || start_level > static_cast<int>(checkpoints.size())) {
    throw ValidationError(
        fmt::format("start level {} is outside the trained range 1..{}", start_level, checkpoints.size()));
  }
}

}  // namespace

std::size_t synthesized_face_count(std::size_t target_faces, std::size_t num_levels, int start_level) {
  std::size_t faces = target_faces;
  for (std::size_t l = static_cast<std::size_t>(start_level); l < num_levels; ++l) faces *= 4;
  return faces;
}

SynthesisNoise draw_synthesis_noise(const std::vector<LevelCheckpoint>& checkpoints, const Mesh& target,
                                    int start_level, std::uint64_t seed) {
  check_start(checkpoints, start_level);
  SynthesisNoise noise{.start_level = start_level, .levels = {}};
  // Closed triangle meshes: V' = V + E, E' = 2E + 3F, F' = 4F.
  std::size_t v = target.num_vertices(), e = target.num_edges(), f = target.num_faces();
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = static_cast<std::size_t>(start_level - 1); l < checkpoints.size(); ++l) {
    std::mt19937_64 rng(derive_seed(seed, kStreamSynthesis, l));
    ad::Matrix<float> z(v, 3);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = static_cast<float>(checkpoints[l].noise_sigma * normal(rng));
    noise.levels.push_back(std::move(z));
    v += e;
    e = 2 * e + 3 * f;
    f *= 4;
  }
  return noise;
}

Mesh synthesize(const std::vector<LevelCheckpoint>& checkpoints, const Mesh& target, int start_level,
                std::uint64_t seed) {
  return synthesize(checkpoints, target, draw_synthesis_noise(checkpoints, target, start_level, seed));
}

Mesh synthesize(const std::vector<LevelCheckpoint>& checkpoints, const Mesh& target, const SynthesisNoise& noise) {
  check_start(checkpoints, noise.start_level);
  const std::size_t first = static_cast<std::size_t>(noise.start_level - 1);
  if (noise.levels.size() != checkpoints.size() - first) {
    throw ValidationError(fmt::format("synthesis noise has {} tensors for {} generator passes", noise.levels.size(),
                                      checkpoints.size() - first));
  }
  Mesh mesh = normalize_mean_edge(target);
  for (std::size_t l = first; l < checkpoints.size(); ++l) {
    mesh = checkpoints[l].generator.forward(mesh, noise.levels[l - first]);
    if (l + 1 < checkpoints.size()) mesh = uniform_subdivide(mesh, true).mesh;
  }
  return mesh;
}

SynthesisNoise lerp_noise(const SynthesisNoise& a, const SynthesisNoise& b, float t) {
  if (a.start_level != b.start_level || a.levels.size() != b.levels.size()) {
    throw ValidationError("cannot interpolate noise drawn for different synthesis runs");
  }
  if (t == 0.0f) return a;
  if (t == 1.0f) return b;
  SynthesisNoise out{.start_level = a.start_level, .levels = {}};
  for (std::size_t l = 0; l < a.levels.size(); ++l) {
    const auto& za = a.levels[l];
    const auto& zb = b.levels[l];
    if (za.rows() != zb.rows() || za.cols() != zb.cols()) throw ShapeError("noise tensors differ in shape");
    ad::Matrix<float> z(za.rows(), za.cols());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = (1.0f - t) * za[i] + t * zb[i];
    out.levels.push_back(std::move(z));
  }
  return out;
}

std::vector<Mesh> interpolate_latents(const std::vector<LevelCheckpoint>& checkpoints, const Mesh& target,
                                      int start_level, std::uint64_t seed_a, std::uint64_t seed_b, int steps) {
  if (steps < 2) throw ValidationError(fmt::format("interpolation needs at least 2 steps, got {}", steps));
  const SynthesisNoise za = draw_synthesis_noise(checkpoints, target, start_level, seed_a);
  const SynthesisNoise zb = draw_synthesis_noise(checkpoints, target, start_level, seed_b);
  std::vector<Mesh> out;
  out.reserve(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const float t = i + 1 == steps ? 1.0f : static_cast<float>(i) / static_cast<float>(steps - 1);
    out.push_back(synthesize(checkpoints, target, lerp_noise(za, zb, t)));
  }
  return out;
}

}  // namespace meshtex

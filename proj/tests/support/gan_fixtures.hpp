#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "meshtex/gan.hpp"
#include "meshtex/shapes.hpp"
#include "meshtex/subdivision.hpp"

namespace meshtex::testing {

// Untrained checkpoint chain sized for an icosahedron pyramid.
inline std::vector<LevelCheckpoint> random_chain(int levels, int embed_dim, int num_layers, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<LevelCheckpoint> out;
  Mesh mesh = shapes::icosahedron();
  for (int l = 0; l < levels; ++l) {
    LevelCheckpoint ck;
    ck.level = l;
    ck.embed_dim = embed_dim;
    ck.num_layers = num_layers;
    ck.noise_sigma = 0.1 * std::pow(0.5, l);
    ck.generator = Generator<float>::random(embed_dim, rng, num_layers);
    ck.discriminator = Discriminator<float>::random(embed_dim, rng, num_layers);
    ck.fixed_noise = ad::Matrix<float>(mesh.num_vertices(), 3);
    ck.rng_state = "state";
    out.push_back(std::move(ck));
    mesh = uniform_subdivide(mesh, false).mesh;
  }
  return out;
}

}  // namespace meshtex::testing

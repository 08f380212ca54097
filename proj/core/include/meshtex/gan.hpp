#pragma once

// Hierarchical single-mesh adversarial training. Each level trains a
// generator/critic pair on the pyramid mesh of that level with a WGAN-GP
// objective plus a reconstruction term at a fixed noise tensor c.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "meshtex/autodiff.hpp"
#include "meshtex/faceconv.hpp"
#include "meshtex/mesh.hpp"
#include "meshtex/remesh.hpp"

namespace meshtex {

struct TrainConfig {
  int iters_per_level = 2000;
  double learning_rate = 5e-4;
  double lr_decay = 0.5;
  int decay_interval = 500;
  double gamma = 5.0;  // reconstruction weight
  double gp_lambda = 10.0;
  int d_steps = 3;
  int g_steps = 3;
  double noise_sigma = 0.1;  // level-0 noise in mean-edge units, halved per level
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  int num_layers = 7;
  // 0-based level from which weights are copied from the previous level.
  int inherit_from_level = 3;
  bool adversarial = true;
  std::uint64_t seed = 0;

  void validate() const;
  double sigma_for_level(int level) const;
  double learning_rate_at(int iter) const;
  bool inherits(int level) const { return level >= inherit_from_level; }
};

struct LevelCheckpoint {
  int level = 0;
  int embed_dim = 0;
  int num_layers = 0;
  double noise_sigma = 0.0;
  Generator<float> generator;
  Discriminator<float> discriminator;
  ad::Matrix<float> fixed_noise;  // V x 3; zeros above level 0
  std::string rng_state;          // std::mt19937_64 text state after training

  std::size_t num_vertices() const { return fixed_noise.rows(); }
};

struct TrainLogRow {
  int iter = 0;
  int level = 0;
  double d_loss = 0.0;
  double g_loss = 0.0;
  double gp = 0.0;
  double recon_mse = 0.0;  // at the fixed noise c, before this iteration's generator updates
};

using TrainLogSink = std::function<void(const TrainLogRow&)>;

struct LevelTrainResult {
  LevelCheckpoint checkpoint;
  std::vector<TrainLogRow> log;
  double final_recon_mse = 0.0;
  bool inherited = false;  // started from the previous level's weights
};

// lambda * (|grad_x critic(x_hat)| - 1)^2 with x_hat = eps * real + (1 - eps) * fake.
// Differentiable with respect to whatever `critic` closes over.
template <typename T>
ad::Var<T> gradient_penalty(const std::function<ad::Var<T>(const ad::Var<T>&)>& critic, const ad::Matrix<T>& real,
                            const ad::Matrix<T>& fake, T lambda, T epsilon);

// Draws eps uniformly from `seed`. Throws TopologyError when the meshes do not
// share connectivity.
template <typename T>
ad::Var<T> gradient_penalty(const Discriminator<T>& critic, const Mesh& real, const Mesh& fake, double lambda,
                            std::uint64_t seed);

// Mean over vertices of the squared distance.
double reconstruction_mse(const Mesh& a, const Mesh& b);

// `init` supplies starting weights (copied, never modified). Throws
// TopologyError on a connectivity mismatch and DivergenceError on a
// non-finite loss.
LevelTrainResult train_level(int level, const Mesh& input, const Mesh& real, const LevelCheckpoint* init,
                             const TrainConfig& config, const TrainLogSink& sink = {});

// Normalized training targets and the level-0 input derived from a pyramid.
struct TrainingMeshes {
  Mesh input0;
  std::vector<Mesh> real;
};
TrainingMeshes training_meshes(const MultiscalePyramid& pyramid);

// Level l > 0 trains on subdivide(G_{l-1}(input, c)) rescaled to the
// previous mean edge length.
Mesh next_level_input(const LevelCheckpoint& checkpoint, const Mesh& input);

struct HierarchyResult {
  std::vector<LevelTrainResult> levels;
  std::vector<LevelCheckpoint> checkpoints() const;
};

HierarchyResult train_hierarchy(const MultiscalePyramid& pyramid, const TrainConfig& config,
                                const TrainLogSink& sink = {});

}  // namespace meshtex

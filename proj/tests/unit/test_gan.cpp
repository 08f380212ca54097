#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "meshtex/checkpoint.hpp"
#include "meshtex/config_io.hpp"
#include "meshtex/errors.hpp"
#include "meshtex/gan.hpp"
#include "meshtex/shapes.hpp"
#include "meshtex/subdivision.hpp"
#include "test_support.hpp"

namespace mt = meshtex;
namespace ad = meshtex::ad;
using M = ad::Matrix<double>;
using V = ad::Var<double>;

namespace {

M random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  M m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = g(rng);
  return m;
}

mt::TrainConfig quick_config(int iters) {
  mt::TrainConfig c;
  c.iters_per_level = iters;
  c.seed = 3;
  return c;
}

double mean_vertex_error(const mt::Mesh& a, const mt::Mesh& b) {
  double s = 0.0;
  for (std::size_t v = 0; v < a.num_vertices(); ++v) s += mt::norm(a.vertices()[v] - b.vertices()[v]);
  return s / static_cast<double>(a.num_vertices());
}

mt::MultiscalePyramid icosahedron_pyramid(std::mt19937_64& rng) {
  mt::MultiscalePyramid p{"icosahedron", "", {}, 0, mt::shapes::icosahedron(), {}, {}};
  p.levels.push_back(mt::testing::jitter(p.template_mesh, 0.03, rng));
  return p;
}

}  // namespace

TEST(TrainConfig, DefaultsAndSchedule) {
  const mt::TrainConfig c;
  EXPECT_EQ(c.iters_per_level, 2000);
  EXPECT_DOUBLE_EQ(c.gamma, 5.0);
  EXPECT_DOUBLE_EQ(c.learning_rate, 5e-4);
  EXPECT_DOUBLE_EQ(c.lr_decay, 0.5);
  EXPECT_EQ(c.decay_interval, 500);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(0), 5e-4);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(499), 5e-4);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(500), 2.5e-4);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(1999), 5e-4 / 8);
  EXPECT_DOUBLE_EQ(c.sigma_for_level(0), 0.1);
  EXPECT_DOUBLE_EQ(c.sigma_for_level(2), 0.025);
  // Levels are 0-based here: the fourth level is index 3.
  EXPECT_FALSE(c.inherits(2));
  EXPECT_TRUE(c.inherits(3));
  EXPECT_TRUE(c.inherits(6));
}

TEST(TrainConfig, ValidationAndRoundTrip) {
  mt::TrainConfig bad;
  bad.gamma = -1;
  EXPECT_THROW(bad.validate(), mt::ValidationError);
  bad = {};
  bad.d_steps = 0;
  EXPECT_THROW(bad.validate(), mt::ValidationError);

  mt::TrainConfig c;
  c.gamma = 7.25;
  c.seed = 123456789012345ull;
  c.adversarial = false;
  mt::KeyValueFile kv;
  mt::store_train_config(kv, "train", c);
  const auto back = mt::read_train_config(mt::KeyValueFile::parse(kv.to_string()), "train");
  EXPECT_DOUBLE_EQ(back.gamma, 7.25);
  EXPECT_EQ(back.seed, c.seed);
  EXPECT_FALSE(back.adversarial);

  const auto partial = mt::read_train_config(mt::KeyValueFile::parse("[train]\ngamma = 2\n"), "train");
  EXPECT_DOUBLE_EQ(partial.gamma, 2.0);
  EXPECT_EQ(partial.iters_per_level, 2000);
  EXPECT_THROW(mt::read_train_config(mt::KeyValueFile::parse("[train]\ngama = 2\n"), "train"), mt::ValidationError);
  EXPECT_THROW(mt::read_train_config(mt::KeyValueFile::parse("[train]\nd_steps = 0\n"), "train"),
               mt::ValidationError);
}

TEST(GradientPenalty, UnitNormCriticGivesZero) {
  const V w = V::constant(M{{0, 0, 0}, {0, 1, 0}, {0, 0, 0}});
  const auto critic = [&](const V& x) { return ad::sum(ad::mul(x, w)); };
  std::mt19937_64 rng(1);
  const auto gp = mt::gradient_penalty<double>(critic, random_matrix(3, 3, rng), random_matrix(3, 3, rng), 10.0, 0.4);
  EXPECT_EQ(gp.item(), 0.0);
}

TEST(GradientPenalty, LinearCriticWithNormThree) {
  const V w = V::constant(M{{1, 2, 2}, {0, 0, 0}});
  const auto critic = [&](const V& x) { return ad::sum(ad::mul(x, w)); };
  std::mt19937_64 rng(2);
  const auto gp = mt::gradient_penalty<double>(critic, random_matrix(2, 3, rng), random_matrix(2, 3, rng), 10.0, 0.7);
  EXPECT_DOUBLE_EQ(gp.item(), 40.0);
}

TEST(GradientPenalty, WeightGradientOfTwoLayerCritic) {
  std::mt19937_64 rng(3);
  const V w1 = V::parameter(random_matrix(3, 8, rng));
  const V b1 = V::parameter(random_matrix(1, 8, rng));
  const V w2 = V::parameter(random_matrix(8, 1, rng));
  const M real = random_matrix(6, 3, rng), fake = random_matrix(6, 3, rng);
  const auto critic = [&](const V& x) {
    return ad::mean(ad::matmul(ad::leaky_relu(ad::add(ad::matmul(x, w1), b1), 0.2), w2));
  };
  const auto r = ad::grad_check<double>([&] { return mt::gradient_penalty<double>(critic, real, fake, 10.0, 0.35); },
                                        std::vector<V>{w1, b1, w2}, 1e-6);
  EXPECT_FALSE(r.non_smooth);
  EXPECT_GT(r.checked, 25u);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(GradientPenalty, WeightGradientOfSevenLayerDiscriminator) {
  std::mt19937_64 rng(4);
  const auto disc = mt::Discriminator<double>::random(6, rng);
  const mt::Mesh real = mt::testing::jitter(mt::shapes::icosahedron(), 0.05, rng);
  const mt::Mesh fake = mt::testing::jitter(real, 0.05, rng);
  const auto r = ad::grad_check<double>([&] { return mt::gradient_penalty(disc, real, fake, 10.0, 17); },
                                        disc.parameters(), 1e-6, 6, 5);
  EXPECT_FALSE(r.non_smooth);
  EXPECT_GT(r.checked, 20u);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(GradientPenalty, ConnectivityMismatch) {
  std::mt19937_64 rng(5);
  const auto disc = mt::Discriminator<double>::random(4, rng, 2);
  EXPECT_THROW(mt::gradient_penalty(disc, mt::shapes::icosahedron(), mt::shapes::icosphere(1), 10.0, 1),
               mt::TopologyError);
}

TEST(TrainLevel, ReconstructionIdentityWithoutAdversary) {
  std::mt19937_64 rng(6);
  const mt::Mesh m = mt::normalize_mean_edge(mt::testing::jitter(mt::shapes::icosphere(1), 0.03, rng));
  auto config = quick_config(150);
  config.adversarial = false;
  config.gamma = 100.0;
  const auto r = mt::train_level(0, m, m, nullptr, config);
  const mt::Mesh out = r.checkpoint.generator.forward(m, r.checkpoint.fixed_noise);
  EXPECT_LT(mean_vertex_error(out, m), 1e-3);
  EXPECT_NEAR(r.final_recon_mse, mt::reconstruction_mse(out, m), 1e-12);
}

TEST(TrainLevel, LogIsFiniteAndComplete) {
  std::mt19937_64 rng(7);
  const mt::Mesh real = mt::normalize_mean_edge(mt::testing::jitter(mt::shapes::icosahedron(), 0.05, rng));
  const mt::Mesh input = mt::normalize_mean_edge(mt::shapes::icosahedron());
  int seen = 0;
  const auto r = mt::train_level(0, input, real, nullptr, quick_config(12), [&](const mt::TrainLogRow&) { ++seen; });
  ASSERT_EQ(r.log.size(), 12u);
  EXPECT_EQ(seen, 12);
  for (std::size_t i = 0; i < r.log.size(); ++i) {
    const auto& row = r.log[i];
    EXPECT_EQ(row.iter, static_cast<int>(i));
    EXPECT_EQ(row.level, 0);
    // The Wasserstein estimate D(real) - D(fake) is d_loss - gp up to sign.
    EXPECT_TRUE(std::isfinite(row.d_loss - row.gp));
    EXPECT_TRUE(std::isfinite(row.g_loss) && std::isfinite(row.recon_mse));
    EXPECT_GE(row.gp, 0.0);
  }
  EXPECT_EQ(r.checkpoint.embed_dim, 32);
  EXPECT_EQ(r.checkpoint.fixed_noise.rows(), 12u);
  double noise = 0.0;
  for (float x : r.checkpoint.fixed_noise.data()) noise += std::abs(x);
  EXPECT_GT(noise, 0.0);
  EXPECT_FALSE(r.checkpoint.rng_state.empty());
}

TEST(TrainLevel, HigherLevelsUseZeroNoise) {
  std::mt19937_64 rng(8);
  const mt::Mesh m = mt::normalize_mean_edge(mt::testing::jitter(mt::shapes::icosahedron(), 0.05, rng));
  const auto r = mt::train_level(1, m, m, nullptr, quick_config(1));
  EXPECT_EQ(r.checkpoint.fixed_noise, ad::Matrix<float>(12, 3));
  EXPECT_EQ(r.checkpoint.embed_dim, 64);
  EXPECT_DOUBLE_EQ(r.checkpoint.noise_sigma, 0.05);
}

TEST(TrainLevel, DeterministicPerSeed) {
  std::mt19937_64 rng(9);
  const mt::Mesh real = mt::normalize_mean_edge(mt::testing::jitter(mt::shapes::icosahedron(), 0.05, rng));
  const mt::Mesh input = mt::normalize_mean_edge(mt::shapes::icosahedron());
  const auto a = mt::train_level(0, input, real, nullptr, quick_config(4));
  const auto b = mt::train_level(0, input, real, nullptr, quick_config(4));
  EXPECT_EQ(mt::serialize_checkpoint(a.checkpoint), mt::serialize_checkpoint(b.checkpoint));
  auto other = quick_config(4);
  other.seed = 4;
  const auto c = mt::train_level(0, input, real, nullptr, other);
  EXPECT_NE(mt::serialize_checkpoint(a.checkpoint), mt::serialize_checkpoint(c.checkpoint));
}

TEST(TrainLevel, InheritedWeightsLeaveSourceUntouched) {
  std::mt19937_64 rng(10);
  const mt::Mesh real = mt::normalize_mean_edge(mt::testing::jitter(mt::shapes::icosahedron(), 0.05, rng));
  const mt::Mesh input = mt::normalize_mean_edge(mt::shapes::icosahedron());
  const auto first = mt::train_level(2, input, real, nullptr, quick_config(3));
  const std::string before = mt::serialize_checkpoint(first.checkpoint);
  const auto second = mt::train_level(3, input, real, &first.checkpoint, quick_config(3));
  EXPECT_TRUE(second.inherited);
  EXPECT_EQ(second.checkpoint.embed_dim, first.checkpoint.embed_dim);
  EXPECT_EQ(mt::serialize_checkpoint(first.checkpoint), before);
  EXPECT_NE(second.checkpoint.generator.parameters()[0].value(), first.checkpoint.generator.parameters()[0].value());
}

TEST(TrainLevel, Errors) {
  const mt::Mesh ico = mt::normalize_mean_edge(mt::shapes::icosahedron());
  EXPECT_THROW(mt::train_level(0, ico, mt::shapes::icosphere(1), nullptr, quick_config(1)), mt::TopologyError);
  auto config = quick_config(40);
  config.learning_rate = 1e30;
  std::mt19937_64 rng(11);
  EXPECT_THROW(mt::train_level(0, ico, mt::testing::jitter(ico, 0.1, rng), nullptr, config), mt::DivergenceError);
}

TEST(TrainHierarchy, InheritanceStartsAtTheFourthLevel) {
  // Hand-built pyramid; only the schedule and bookkeeping are under test.
  std::mt19937_64 rng(12);
  mt::MultiscalePyramid pyramid = icosahedron_pyramid(rng);
  for (int l = 1; l < 5; ++l) {
    pyramid.levels.push_back(mt::testing::jitter(mt::uniform_subdivide(pyramid.levels.back(), false).mesh, 0.01, rng));
  }
  auto config = quick_config(1);
  config.num_layers = 2;
  config.d_steps = 1;
  config.g_steps = 1;
  const auto r = mt::train_hierarchy(pyramid, config);
  ASSERT_EQ(r.levels.size(), 5u);
  const std::vector<int> dims{32, 64, 128, 128, 128};
  for (int l = 0; l < 5; ++l) {
    const auto& level = r.levels[static_cast<std::size_t>(l)];
    EXPECT_EQ(level.inherited, l >= 3) << "level " << l;
    EXPECT_EQ(level.checkpoint.level, l);
    EXPECT_EQ(level.checkpoint.embed_dim, dims[static_cast<std::size_t>(l)]);
    EXPECT_EQ(level.checkpoint.num_vertices(), pyramid.levels[static_cast<std::size_t>(l)].num_vertices());
  }
  EXPECT_NO_THROW(mt::validate_checkpoint_chain(r.checkpoints()));

  pyramid.levels.erase(pyramid.levels.begin() + 1, pyramid.levels.end());
  EXPECT_THROW(mt::train_hierarchy(pyramid, config), mt::ValidationError);
}

TEST(TrainHierarchy, LevelInputsFollowTheFrozenGenerator) {
  std::mt19937_64 rng(13);
  mt::MultiscalePyramid pyramid = icosahedron_pyramid(rng);
  pyramid.levels.push_back(mt::testing::jitter(mt::uniform_subdivide(pyramid.levels.back(), false).mesh, 0.01, rng));
  auto config = quick_config(2);
  config.num_layers = 3;
  const auto r = mt::train_hierarchy(pyramid, config);
  const auto meshes = mt::training_meshes(pyramid);
  const mt::Mesh input1 = mt::next_level_input(r.levels[0].checkpoint, meshes.input0);
  EXPECT_EQ(input1.num_faces(), 80u);
  EXPECT_NEAR(mt::mean_edge_length(input1),
              mt::mean_edge_length(r.levels[0].checkpoint.generator.forward(meshes.input0,
                                                                            r.levels[0].checkpoint.fixed_noise)),
              1e-12);
  // Retraining level 1 alone from that input reproduces the hierarchy's checkpoint.
  const auto again = mt::train_level(1, input1, meshes.real[1], nullptr, config);
  EXPECT_EQ(mt::serialize_checkpoint(again.checkpoint), mt::serialize_checkpoint(r.levels[1].checkpoint));
}

#include <benchmark/benchmark.h>

#include <random>

#include "meshtex/faceconv.hpp"
#include "meshtex/features.hpp"
#include "meshtex/gan.hpp"
#include "meshtex/nearest.hpp"
#include "meshtex/remesh.hpp"
#include "meshtex/shapes.hpp"
#include "meshtex/subdivision.hpp"

namespace mt = meshtex;
namespace ad = meshtex::ad;

namespace {

// Faces: 80 * 4^(level - 1).
mt::Mesh sphere(int level) { return mt::shapes::icosphere(static_cast<int>(level)); }

void BM_Subdivide(benchmark::State& state) {
  const mt::Mesh mesh = sphere(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(mt::uniform_subdivide(mesh, true));
  state.counters["faces"] = static_cast<double>(mesh.num_faces());
}
BENCHMARK(BM_Subdivide)->DenseRange(2, 5)->Unit(benchmark::kMicrosecond);

void BM_Features(benchmark::State& state) {
  const mt::Mesh mesh = sphere(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(mt::extract_features(mesh));
  state.counters["faces"] = static_cast<double>(mesh.num_faces());
}
BENCHMARK(BM_Features)->DenseRange(2, 5)->Unit(benchmark::kMicrosecond);

// Forward and backward through one 7-layer generator, float32.
void BM_GeneratorStep(benchmark::State& state) {
  const mt::Mesh mesh = mt::normalize_mean_edge(sphere(static_cast<int>(state.range(0))));
  const int dim = static_cast<int>(state.range(1));
  std::mt19937_64 rng(1);
  const auto gen = mt::Generator<float>::random(dim, rng);
  const auto topo = mt::FaceTopology::from(mesh.connectivity());
  const ad::Matrix<float> noise(mesh.num_vertices(), 3);
  const auto params = gen.parameters();
  for (auto _ : state) {
    const auto loss = ad::mean(ad::square(gen.displace(mesh, topo, noise)));
    benchmark::DoNotOptimize(ad::grad(loss, std::span<const ad::Var<float>>(params)));
  }
  state.counters["faces"] = static_cast<double>(mesh.num_faces());
}
BENCHMARK(BM_GeneratorStep)->Args({1, 32})->Args({2, 64})->Args({2, 128})->Args({3, 128})->Unit(benchmark::kMillisecond);

// Critic loss plus gradient penalty, differentiated w.r.t. critic weights.
void BM_CriticStepWithPenalty(benchmark::State& state) {
  const mt::Mesh mesh = mt::normalize_mean_edge(sphere(static_cast<int>(state.range(0))));
  const int dim = static_cast<int>(state.range(1));
  std::mt19937_64 rng(2);
  const auto disc = mt::Discriminator<float>::random(dim, rng);
  const auto params = disc.parameters();
  std::uint64_t seed = 0;
  for (auto _ : state) {
    const auto gp = mt::gradient_penalty(disc, mesh, mesh, 10.0, ++seed);
    benchmark::DoNotOptimize(ad::grad(gp, std::span<const ad::Var<float>>(params)));
  }
  state.counters["faces"] = static_cast<double>(mesh.num_faces());
}
BENCHMARK(BM_CriticStepWithPenalty)->Args({1, 32})->Args({2, 64})->Args({2, 128})->Unit(benchmark::kMillisecond);

void BM_Chamfer(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = mt::sample_surface(mt::shapes::ellipsoid(4, {1.6, 1.0, 0.6}), n, 1);
  const auto b = mt::sample_surface(mt::shapes::icosphere(3), n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(mt::chamfer_terms(a, b));
  state.counters["samples"] = static_cast<double>(n);
}
BENCHMARK(BM_Chamfer)->Arg(1000)->Arg(5000)->Arg(20000)->Arg(50000)->Unit(benchmark::kMillisecond);

void BM_NearestBuild(benchmark::State& state) {
  const auto samples = mt::sample_surface(mt::shapes::icosphere(3), static_cast<std::size_t>(state.range(0)), 3);
  std::vector<mt::Vec3> points;
  for (const auto& s : samples) points.push_back(s.position);
  for (auto _ : state) benchmark::DoNotOptimize(mt::NearestNeighbors(points, mt::NearestNeighbors::Strategy::grid));
}
BENCHMARK(BM_NearestBuild)->Arg(20000)->Arg(100000)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();

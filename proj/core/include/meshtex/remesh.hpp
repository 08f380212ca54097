#pragma once

// Multi-scale training inputs: fit a template to a reference surface, then
// repeatedly subdivide and refit.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "meshtex/autodiff.hpp"
#include "meshtex/mesh.hpp"

namespace meshtex {

struct FitConfig {
  std::size_t samples_per_side = 5000;
  int iters_per_level = 1000;
  double learning_rate = 5e-3;
  double weight_normal = 0.1;
  double weight_uniform = 1.0;
  double weight_smooth = 0.5;
  int levels = 5;
  // The best iterate is chosen on a fixed evaluation sample set every
  // eval_interval iterations (and at both ends).
  int eval_interval = 10;

  void validate() const;
};

struct ChamferTerms {
  double distance = 0.0;  // mean NN distance A->B plus B->A
  double normal = 0.0;    // mean -cos A->B plus B->A
  double total(double weight_normal) const { return distance + weight_normal * normal; }
};

ChamferTerms chamfer_terms(std::span<const SurfaceSample> a, std::span<const SurfaceSample> b);
double chamfer_normal_loss(std::span<const SurfaceSample> a, std::span<const SurfaceSample> b, double weight_normal);

struct Regularizers {
  double uniform = 0.0;  // variance of undirected edge lengths
  double smooth = 0.0;   // mean |v - one-ring average|
};

Regularizers regularizers(const Mesh& mesh);
// Population variance.
double length_variance(std::span<const double> lengths);

// Differentiable objective for one draw of samples. `ours` must be sampled on
// the mesh (vertices, connectivity); their positions are rebuilt from
// `vertices` through the stored face index and barycentric weights.
struct FitTerms {
  ad::Var<double> chamfer;
  ad::Var<double> normal;
  ad::Var<double> uniform;
  ad::Var<double> smooth;
  ad::Var<double> total;
};

FitTerms fit_objective(const ad::Var<double>& vertices, const Connectivity& connectivity,
                       std::span<const SurfaceSample> ours, std::span<const SurfaceSample> theirs,
                       const FitConfig& config);

struct FitEvaluation {
  ChamferTerms chamfer;
  Regularizers regularizers;
  double loss = 0.0;
};

struct FitLogEntry {
  int iter = 0;
  double loss = 0.0;  // stochastic objective on this iteration's samples
  double chamfer = 0.0;
  double normal = 0.0;
  double uniform = 0.0;
  double smooth = 0.0;
};

struct FitResult {
  Mesh mesh;
  FitEvaluation initial;
  FitEvaluation final;  // evaluation of the returned iterate
  int best_iter = 0;
  std::vector<FitLogEntry> log;
  bool diverged = false;
  std::string diagnostic;
};

using FitLogSink = std::function<void(int level, const FitLogEntry&)>;

// Deterministic objective estimate on fixed sample sets (seeded by `seed`).
FitEvaluation evaluate_fit(const Mesh& current, const Mesh& reference, const FitConfig& config, std::uint64_t seed);

// Adam on vertex positions, fresh samples every iteration. Returns the best
// evaluated iterate. A non-finite loss stops the fit and sets `diverged`.
FitResult fit_level(const Mesh& current, const Mesh& reference, const FitConfig& config, std::uint64_t seed,
                    const FitLogSink& sink = {}, int level = 0);

struct MultiscalePyramid {
  std::string template_id;
  std::string reference_hash;
  FitConfig config;
  std::uint64_t seed = 0;
  Mesh template_mesh;
  std::vector<Mesh> levels;  // levels[0] is the fitted template
  std::vector<FitEvaluation> final_evaluations;
};

// Translates and uniformly scales `templ` so its centroid and RMS vertex
// radius match the reference's.
Mesh place_template(const Mesh& templ, const Mesh& reference);

// Throws ValidationError when levels < 2 and DivergenceError when a level
// diverges. Warns when template and reference genus differ.
MultiscalePyramid build_multiscale(const Mesh& templ, const Mesh& reference, int levels, const FitConfig& config,
                                   std::uint64_t seed, std::string template_id = "custom",
                                   const FitLogSink& sink = {});

std::string mesh_hash(const Mesh& mesh);

// level_{k}.obj, template.obj and pyramid.manifest under `dir`.
void save_pyramid(const std::filesystem::path& dir, const MultiscalePyramid& pyramid);
MultiscalePyramid load_pyramid(const std::filesystem::path& dir);

}  // namespace meshtex

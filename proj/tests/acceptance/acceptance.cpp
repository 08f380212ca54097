// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "autodiff_cases.hpp"
#include "faceconv_oracle.hpp"
#include "meshtex/checkpoint.hpp"
#include "meshtex/features.hpp"
#include "meshtex/gan.hpp"
#include "meshtex/kv_file.hpp"
#include "meshtex/obj_io.hpp"
#include "meshtex/remesh.hpp"
#include "meshtex/shapes.hpp"
#include "meshtex/subdivision.hpp"
#include "meshtex/synthesis.hpp"
#include "meshtex_cli/app.hpp"
#include "test_support.hpp"

namespace mt = meshtex;
namespace ad = meshtex::ad;
namespace fs = std::filesystem;
using M = ad::Matrix<double>;
using V = ad::Var<double>;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

fs::path work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "meshtex_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// ---- 1 ---------------------------------------------------------------------

Verdict combinatorics() {
  Verdict v;
  const auto t0 = Clock::now();
  const auto ico = mt::shapes::icosahedron();
  const auto sub = mt::uniform_subdivide(ico, false).mesh;
  const auto a = mt::mesh_stats(ico), b = mt::mesh_stats(sub);
  v.require(a.vertices == 12 && a.edges == 30 && a.faces == 20, "icosahedron counts");
  v.require(b.vertices == 42 && b.edges == 120 && b.faces == 80,
            fmt::format("subdivided counts {}/{}/{}", b.vertices, b.edges, b.faces));
  v.require(a.euler_characteristic == 2 && b.euler_characteristic == 2, "icosahedron chi");
  const auto torus = mt::shapes::torus(1.0, 0.4, 8, 5);
  const auto t1 = mt::mesh_stats(torus), t2 = mt::mesh_stats(mt::uniform_subdivide(torus, false).mesh);
  v.require(t1.euler_characteristic == 0 && t2.euler_characteristic == 0, "torus chi");
  const double secs = seconds_since(t0);
  v.require(secs < 1.0, fmt::format("runtime {:.3f}s", secs));
  v.note(fmt::format("(12,30,20)->({},{},{}), chi {}/{} , {:.3f}s", b.vertices, b.edges, b.faces,
                     b.euler_characteristic, t2.euler_characteristic, secs));
  return v;
}

// ---- 2 ---------------------------------------------------------------------

Verdict feature_invariance() {
  Verdict v;
  std::mt19937_64 rng(2);
  double worst = 0.0;
  for (const mt::Mesh& m : {mt::shapes::icosahedron(), mt::shapes::torus(2.0, 0.6, 10, 7),
                            mt::shapes::spiky_ball(2, 0.6, 0.3)}) {
    const auto base = mt::extract_features(m);
    for (int trial = 0; trial < 100; ++trial) {
      const auto moved = mt::extract_features(mt::testing::transform(m, mt::testing::random_rigid_motion(rng)));
      for (std::size_t i = 0; i < base.values().size(); ++i) {
        worst = std::max(worst, std::abs(moved.values()[i] - base.values()[i]));
      }
    }
  }
  v.require(worst < 1e-6, "deviation too large");
  v.note(fmt::format("max deviation {:.3g} over 300 motions", worst));
  return v;
}

// ---- shared smoke model (criteria 3, 7, 8, 9) --------------------------------

struct SmokeModel {
  mt::MultiscalePyramid pyramid;
  mt::TrainConfig config;
  mt::HierarchyResult result;
  std::vector<mt::LevelCheckpoint> checkpoints;
  double pyramid_seconds = 0.0;
  double train_seconds = 0.0;
};

const SmokeModel& smoke_model() {
  static const SmokeModel model = [] {
    mt::FitConfig fit;
    fit.samples_per_side = 3000;
    fit.iters_per_level = 150;
    const auto t0 = Clock::now();
    auto pyramid = mt::build_multiscale(mt::shapes::icosahedron(), mt::shapes::bumpy_sphere(4, 0.15, 4.0), 3, fit, 1,
                                        "icosahedron");
    const double pyramid_seconds = seconds_since(t0);
    mt::TrainConfig config;
    config.iters_per_level = 200;
    config.seed = 1;
    const auto t1 = Clock::now();
    auto result = mt::train_hierarchy(pyramid, config);
    const double train_seconds = seconds_since(t1);
    auto checkpoints = result.checkpoints();
    return SmokeModel{std::move(pyramid), config, std::move(result), std::move(checkpoints), pyramid_seconds,
                      train_seconds};
  }();
  return model;
}

mt::Mesh torus_target() { return mt::shapes::torus(1.0, 0.45, 12, 7); }

// ---- 3 ---------------------------------------------------------------------

Verdict permutation_equivariance() {
  Verdict v;
  const auto& model = smoke_model();
  std::mt19937_64 rng(3);
  const mt::Mesh target = mt::testing::jitter(torus_target(), 0.01, rng);
  const auto perm = mt::testing::random_permutation(target.num_faces(), rng);
  const mt::Mesh relabeled = mt::testing::permute_faces(target, perm);

  double score_dev = 0.0;
  for (const auto& ck : model.checkpoints) {
    const auto s = ck.discriminator.face_scores(target);
    const auto sp = ck.discriminator.face_scores(relabeled);
    for (std::size_t i = 0; i < perm.size(); ++i) {
      score_dev = std::max(score_dev, std::abs(sp[i] - s[perm[i]]) / std::max(1.0, std::abs(s[perm[i]])));
    }
  }
  const mt::Mesh a = mt::synthesize(model.checkpoints, target, 1, 5);
  const mt::Mesh b = mt::synthesize(model.checkpoints, relabeled, 1, 5);
  const double vertex_dev = mt::testing::max_vertex_distance(a.vertices(), b.vertices());
  v.require(score_dev < 1e-5, "critic scores not permuted");
  v.require(vertex_dev < 1e-5, "synthesized vertices moved");
  v.note(fmt::format("score deviation {:.3g}, vertex deviation {:.3g}", score_dev, vertex_dev));
  return v;
}

// ---- 4 ---------------------------------------------------------------------

Verdict gradient_correctness() {
  Verdict v;
  const auto t0 = Clock::now();
  double worst_primitive = 0.0;
  const mt::testing::PrimitiveCases cases(4);
  for (const auto& [name, f] : cases.cases) {
    const auto r = ad::grad_check<double>(f, cases.params, 1e-5);
    v.require(!r.non_smooth && r.checked > 0, name + " not checkable");
    worst_primitive = std::max(worst_primitive, r.max_rel_error);
  }
  v.require(worst_primitive < 1e-4, "primitive gradient error");

  std::mt19937_64 rng(44);
  const auto gen = mt::Generator<double>::random(6, rng);
  const mt::Mesh tet = mt::shapes::tetrahedron();
  const auto tet_topo = mt::FaceTopology::from(tet.connectivity());
  const M noise = mt::testing::gaussian_matrix(4, 3, rng);
  const V proj = V::constant(mt::testing::gaussian_matrix(4, 3, rng));
  const auto g = ad::grad_check<double>([&] { return ad::sum(ad::mul(gen.displace(tet, tet_topo, noise), proj)); },
                                        gen.parameters(), 1e-6);
  v.require(!g.non_smooth && g.max_rel_error < 1e-4, fmt::format("generator error {:.3g}", g.max_rel_error));

  const auto disc = mt::Discriminator<double>::random(8, rng);
  const mt::Mesh ico = mt::testing::jitter(mt::shapes::icosahedron(), 0.05, rng);
  const auto topo = mt::FaceTopology::from(ico.connectivity());
  const V verts = V::parameter(mt::vertex_matrix<double>(ico));
  std::vector<V> params = disc.parameters();
  params.push_back(verts);
  const auto d = ad::grad_check<double>([&] { return disc.critic(verts, topo); }, params, 1e-6, 12, 99);
  v.require(!d.non_smooth && d.max_rel_error < 1e-4, fmt::format("discriminator error {:.3g}", d.max_rel_error));

  const mt::Mesh fake = mt::testing::jitter(ico, 0.05, rng);
  const auto gp = ad::grad_check<double>([&] { return mt::gradient_penalty(disc, ico, fake, 10.0, 17); },
                                         disc.parameters(), 1e-6, 6, 5);
  v.require(!gp.non_smooth && gp.max_rel_error < 1e-3, fmt::format("penalty error {:.3g}", gp.max_rel_error));

  const double secs = seconds_since(t0);
  v.require(secs < 120.0, fmt::format("runtime {:.1f}s", secs));
  v.note(fmt::format("{} primitives max {:.2g}, generator {:.2g}, discriminator {:.2g}, penalty {:.2g}, {:.1f}s",
                     cases.cases.size(), worst_primitive, g.max_rel_error, d.max_rel_error, gp.max_rel_error, secs));
  return v;
}

// ---- 5 ---------------------------------------------------------------------

Verdict oracle_equivalence() {
  Verdict v;
  std::mt19937_64 rng(5);
  const mt::Mesh ico = mt::shapes::icosahedron();
  const auto topo = mt::FaceTopology::from(ico.connectivity());
  int equal = 0;
  for (int draw = 0; draw < 50; ++draw) {
    const M e = mt::testing::gaussian_matrix(20, 16, rng);
    const auto p = mt::testing::conv_params(16, 24, rng);
    if (mt::face_conv(V::constant(e), topo, p).value() == mt::testing::naive_face_conv(e, ico, p)) ++equal;
  }
  v.require(equal == 50, "mismatch");
  v.note(fmt::format("{}/50 draws bitwise equal", equal));
  return v;
}

// ---- 6 ---------------------------------------------------------------------

Verdict remesh_convergence() {
  Verdict v;
  mt::FitConfig config;
  config.samples_per_side = 5000;
  config.iters_per_level = 400;
  const mt::Mesh reference = mt::shapes::ellipsoid(4, {1.6, 1.0, 0.6});
  const mt::Mesh templ = mt::place_template(mt::shapes::icosphere(2), reference);
  const auto t0 = Clock::now();
  const auto r = mt::fit_level(templ, reference, config, 6);
  const double secs = seconds_since(t0);
  bool finite = !r.log.empty();
  for (const auto& e : r.log) finite = finite && std::isfinite(e.loss);
  const double ratio = r.initial.chamfer.distance / r.final.chamfer.distance;
  v.require(!r.diverged && finite, "non-finite loss log");
  v.require(ratio >= 5.0, "insufficient reduction");
  v.require(secs < 300.0, fmt::format("runtime {:.1f}s", secs));
  v.note(fmt::format("chamfer {:.4f} -> {:.4f} ({:.2f}x), {:.1f}s", r.initial.chamfer.distance,
                     r.final.chamfer.distance, ratio, secs));
  return v;
}

// ---- 7 ---------------------------------------------------------------------

Verdict training_smoke() {
  Verdict v;
  const auto t0 = Clock::now();
  const auto& model = smoke_model();
  v.require(model.checkpoints.size() == 3, "expected 3 checkpoints");
  v.require(model.pyramid.levels.back().num_faces() <= 1280, "top level too large");
  for (const auto& level : model.result.levels) {
    const auto& log = level.log;
    if (log.size() <= 10) {
      v.require(false, "log too short");
      continue;
    }
    const double ratio = log[10].recon_mse / level.final_recon_mse;
    v.require(ratio >= 5.0, fmt::format("level {} reconstruction only {:.2f}x", level.checkpoint.level, ratio));
    v.note(fmt::format("L{} {:.3g}->{:.3g} ({:.2f}x)", level.checkpoint.level, log[10].recon_mse,
                       level.final_recon_mse, ratio));
  }
  const fs::path dir = work_dir() / "smoke_checkpoints";
  mt::save_checkpoints(dir, model.checkpoints, &model.config);
  const auto loaded = mt::load_checkpoints(dir);
  bool bitwise = loaded.size() == model.checkpoints.size();
  for (std::size_t l = 0; bitwise && l < loaded.size(); ++l) {
    bitwise = mt::serialize_checkpoint(loaded[l]) == mt::serialize_checkpoint(model.checkpoints[l]);
  }
  v.require(bitwise, "checkpoint round trip");
  const double secs = model.pyramid_seconds + model.train_seconds + seconds_since(t0);
  v.require(secs < 1800.0, fmt::format("runtime {:.0f}s", secs));
  v.note(fmt::format("faces {}, round trip {}, {:.0f}s", model.pyramid.levels.back().num_faces(),
                     bitwise ? "bitwise" : "differs", secs));
  return v;
}

// ---- 8 ---------------------------------------------------------------------

Verdict inference_contract() {
  Verdict v;
  const auto& model = smoke_model();
  const mt::Mesh target = torus_target();
  const int start = 2;
  const mt::Mesh a = mt::synthesize(model.checkpoints, target, start, 101);
  const mt::Mesh b = mt::synthesize(model.checkpoints, target, start, 202);
  const auto stats = mt::mesh_stats(a);
  const std::size_t expected = mt::synthesized_face_count(target.num_faces(), model.checkpoints.size(), start);
  v.require(expected == 4 * target.num_faces(), "face count formula");
  v.require(stats.genus == 1, fmt::format("genus {}", stats.genus));
  v.require(stats.faces == expected, fmt::format("faces {} != {}", stats.faces, expected));
  v.require(a.faces() == b.faces(), "connectivity differs between seeds");
  const double spread = mt::testing::max_vertex_distance(a.vertices(), b.vertices());
  v.require(spread > 0.0, "seeds gave identical geometry");
  v.note(fmt::format("{} -> {} faces, genus {}, seed spread {:.3g}", target.num_faces(), stats.faces, stats.genus,
                     spread));
  return v;
}

// ---- 9 ---------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Runs a command, replays it from its manifest and compares every output.
void check_replay(Verdict& v, const std::string& name, std::vector<std::string> args, const fs::path& out) {
  std::ostringstream sink;
  args.insert(args.end(), {"--deterministic", "--out", out.string()});
  if (mt::cli::run(args, sink, sink) != 0) {
    v.require(false, name + " failed: " + sink.str());
    return;
  }
  const fs::path manifest = out / mt::cli::kRunManifestName;
  const fs::path again = out.string() + "_replay";
  const std::vector<std::string> replay{args.front(), "--config", manifest.string(), "--out", again.string()};
  if (mt::cli::run(replay, sink, sink) != 0) {
    v.require(false, name + " replay failed: " + sink.str());
    return;
  }
  std::istringstream files(mt::KeyValueFile::load(manifest).require("outputs", "files"));
  int compared = 0;
  for (std::string f; std::getline(files, f, ',');) {
    v.require(slurp(out / f) == slurp(again / f), name + "/" + f + " differs");
    ++compared;
  }
  v.require(compared > 0, name + " listed no outputs");
}

Verdict determinism() {
  Verdict v;
  const fs::path dir = work_dir() / "determinism";
  fs::create_directories(dir);
  const auto& model = smoke_model();
  const fs::path ckpt = work_dir() / "smoke_checkpoints";
  mt::save_checkpoints(ckpt, model.checkpoints, &model.config);
  mt::save_obj(dir / "torus.obj", torus_target());
  mt::save_obj(dir / "reference.obj", mt::shapes::bumpy_sphere(3, 0.15, 4.0));
  std::ofstream(dir / "small.cfg") << "[fit]\nsamples_per_side = 500\niters_per_level = 20\n"
                                   << "[train]\niters_per_level = 3\n";
  const std::string torus = (dir / "torus.obj").string();
  check_replay(v, "remesh", {"remesh", (dir / "reference.obj").string(), "--config", (dir / "small.cfg").string(),
                             "--levels", "2", "--seed", "9"},
               dir / "remesh");
  check_replay(v, "train", {"train", (dir / "remesh").string(), "--config", (dir / "small.cfg").string(), "--seed", "9"},
               dir / "train");
  check_replay(v, "synthesize", {"synthesize", ckpt.string(), torus, "--seed", "9"}, dir / "synthesize");
  check_replay(v, "interpolate", {"interpolate", ckpt.string(), torus, "--steps", "3"}, dir / "interpolate");
  check_replay(v, "subdivide", {"subdivide", torus, "--levels", "2"}, dir / "subdivide");
  check_replay(v, "stats", {"stats", torus}, dir / "stats");
  check_replay(v, "validate", {"validate", ckpt.string()}, dir / "validate");
  if (v.pass) v.note("7 commands replayed bitwise from their manifests");
  return v;
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"combinatorics", combinatorics},
      {"feature invariance", feature_invariance},
      {"permutation equivariance", permutation_equivariance},
      {"gradient correctness", gradient_correctness},
      {"oracle equivalence", oracle_equivalence},
      {"remeshing convergence", remesh_convergence},
      {"training smoke", training_smoke},
      {"inference contract", inference_contract},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    failures += v.pass ? 0 : 1;
    std::cout << fmt::format("{} {} {}: {}", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, v.detail)
              << std::endl;
  }
  fs::remove_all(work_dir());
  return failures == 0 ? 0 : 1;
}

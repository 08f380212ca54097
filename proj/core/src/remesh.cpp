#include "meshtex/remesh.hpp"

#include <bit>
#include <cmath>
#include <limits>
#include <tuple>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "meshtex/adam.hpp"
#include "meshtex/autodiff.hpp"
#include "meshtex/errors.hpp"
#include "meshtex/config_io.hpp"
#include "meshtex/kv_file.hpp"
#include "meshtex/nearest.hpp"
#include "meshtex/obj_io.hpp"
#include "meshtex/seeding.hpp"
#include "meshtex/subdivision.hpp"

namespace meshtex {

using ad::IndexList;
using ad::Matrix;
using Var = ad::Var<double>;

namespace {

constexpr std::uint64_t kStreamTrainCurrent = 1;
constexpr std::uint64_t kStreamTrainReference = 2;
constexpr std::uint64_t kStreamEvalCurrent = 3;
constexpr std::uint64_t kStreamEvalReference = 4;
constexpr std::uint64_t kStreamLevel = 5;

std::vector<Vec3> positions_of(std::span<const SurfaceSample> samples) {
  std::vector<Vec3> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.position);
  return out;
}

// Mean over `from` of (distance, -cos) to the nearest sample of `to`.
std::pair<double, double> directed_terms(std::span<const SurfaceSample> from, std::span<const SurfaceSample> to) {
  const NearestNeighbors index(positions_of(to));
  const auto match = index.nearest_all(positions_of(from));
  double distance = 0.0, normal = 0.0;
  for (std::size_t i = 0; i < from.size(); ++i) {
    const SurfaceSample& other = to[match[i]];
    distance += norm(from[i].position - other.position);
    normal -= dot(from[i].normal, other.normal);
  }
  const auto n = static_cast<double>(from.size());
  return {distance / n, normal / n};
}

std::vector<std::uint32_t> directed_edge_list(const Connectivity& conn, bool source) {
  std::vector<std::uint32_t> out;
  out.reserve(conn.num_edges() * 2);
  for (const auto& e : conn.edges()) out.push_back(source ? e[0] : e[1]);
  for (const auto& e : conn.edges()) out.push_back(source ? e[1] : e[0]);
  return out;
}

const IndexList& cols_120() {
  static const IndexList idx = ad::make_index({1, 2, 0});
  return idx;
}
const IndexList& cols_201() {
  static const IndexList idx = ad::make_index({2, 0, 1});
  return idx;
}

Var cross_rows(const Var& a, const Var& b) {
  return ad::sub(ad::mul(ad::gather_cols(a, cols_120()), ad::gather_cols(b, cols_201())),
                 ad::mul(ad::gather_cols(a, cols_201()), ad::gather_cols(b, cols_120())));
}

Matrix<double> to_matrix(const std::vector<Vec3>& points) {
  Matrix<double> m(points.size(), 3);
  for (std::size_t i = 0; i < points.size(); ++i) {
    m(i, 0) = points[i].x;
    m(i, 1) = points[i].y;
    m(i, 2) = points[i].z;
  }
  return m;
}

std::vector<Vec3> from_matrix(const Matrix<double>& m) {
  std::vector<Vec3> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = {m(i, 0), m(i, 1), m(i, 2)};
  return out;
}

// Differentiable objective for one iteration's sample draw.
struct FitGraph {
  const Connectivity* conn;
  std::array<IndexList, 3> face_vertex;
  IndexList edge_a, edge_b;
  IndexList ring_src, ring_dst;

  explicit FitGraph(const Connectivity& c) : conn(&c) {
    for (int k = 0; k < 3; ++k) {
      std::vector<std::uint32_t> idx(c.num_faces());
      for (std::size_t f = 0; f < c.num_faces(); ++f) idx[f] = c.faces()[f][k];
      face_vertex[k] = ad::make_index(std::move(idx));
    }
    std::vector<std::uint32_t> a, b;
    for (const auto& e : c.edges()) {
      a.push_back(e[0]);
      b.push_back(e[1]);
    }
    edge_a = ad::make_index(std::move(a));
    edge_b = ad::make_index(std::move(b));
    ring_src = ad::make_index(directed_edge_list(c, true));
    ring_dst = ad::make_index(directed_edge_list(c, false));
  }

  Var uniform(const Var& v) const {
    const Var lengths = ad::row_norm(ad::sub(ad::gather_rows(v, edge_b), ad::gather_rows(v, edge_a)));
    return ad::mean(ad::square(ad::sub(lengths, ad::mean(lengths))));
  }

  Var smooth(const Var& v) const {
    const Var ring = ad::scatter_mean_rows(ad::gather_rows(v, ring_dst), ring_src, conn->num_vertices());
    return ad::mean(ad::row_norm(ad::sub(v, ring)));
  }

  // Returns (distance, normal) terms.
  std::pair<Var, Var> chamfer(const Var& v, std::span<const SurfaceSample> ours,
                              std::span<const SurfaceSample> theirs) const {
    const std::size_t n = ours.size();
    std::array<std::vector<std::uint32_t>, 3> corner;
    std::array<Matrix<double>, 3> weight{Matrix<double>(n, 1), Matrix<double>(n, 1), Matrix<double>(n, 1)};
    std::vector<std::uint32_t> face_of(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Face& f = conn->faces()[ours[i].face_index];
      for (int k = 0; k < 3; ++k) {
        corner[k].push_back(f[k]);
        weight[k](i, 0) = ours[i].barycentric[k];
      }
      face_of[i] = ours[i].face_index;
    }
    Var points;
    for (int k = 0; k < 3; ++k) {
      const Var term =
          ad::mul(ad::gather_rows(v, ad::make_index(std::move(corner[k]))), Var::constant(std::move(weight[k])));
      points = points.defined() ? ad::add(points, term) : term;
    }
    const Var p0 = ad::gather_rows(v, face_vertex[0]);
    const Var raw = cross_rows(ad::sub(ad::gather_rows(v, face_vertex[1]), p0),
                               ad::sub(ad::gather_rows(v, face_vertex[2]), p0));
    // Guarded normalization: collapsed faces get a zero normal instead of NaN.
    const Var unit = ad::div(raw, ad::add_scalar(ad::row_norm(raw), 1e-12));
    const Var normals = ad::gather_rows(unit, ad::make_index(std::move(face_of)));

    const std::vector<Vec3> our_positions = from_matrix(points.value());
    const NearestNeighbors their_index(positions_of(theirs));
    const NearestNeighbors our_index(our_positions);

    // ours -> theirs
    const auto match_ab = their_index.nearest_all(our_positions);
    Matrix<double> target_ab(n, 3), normal_ab(n, 3);
    for (std::size_t i = 0; i < n; ++i) {
      const SurfaceSample& s = theirs[match_ab[i]];
      for (int c = 0; c < 3; ++c) {
        target_ab(i, c) = s.position[c];
        normal_ab(i, c) = s.normal[c];
      }
    }
    const Var dist_ab = ad::mean(ad::row_norm(ad::sub(points, Var::constant(std::move(target_ab)))));
    const Var cos_ab = ad::mean(ad::sum_cols(ad::mul(normals, Var::constant(std::move(normal_ab)))));

    // theirs -> ours
    const std::vector<Vec3> their_positions = positions_of(theirs);
    const auto match_ba = our_index.nearest_all(their_positions);
    const IndexList pick = ad::make_index(std::vector<std::uint32_t>(match_ba.begin(), match_ba.end()));
    Matrix<double> their_normals(theirs.size(), 3);
    for (std::size_t j = 0; j < theirs.size(); ++j) {
      for (int c = 0; c < 3; ++c) their_normals(j, c) = theirs[j].normal[c];
    }
    const Var dist_ba =
        ad::mean(ad::row_norm(ad::sub(ad::gather_rows(points, pick), Var::constant(to_matrix(their_positions)))));
    const Var cos_ba =
        ad::mean(ad::sum_cols(ad::mul(ad::gather_rows(normals, pick), Var::constant(std::move(their_normals)))));

    return {ad::add(dist_ab, dist_ba), ad::neg(ad::add(cos_ab, cos_ba))};
  }
};

bool finite(double x) { return std::isfinite(x); }

}  // namespace

FitTerms fit_objective(const Var& vertices, const Connectivity& connectivity, std::span<const SurfaceSample> ours,
                       std::span<const SurfaceSample> theirs, const FitConfig& config) {
  if (ours.empty() || theirs.empty()) throw ShapeError("chamfer loss needs non-empty sample sets");
  if (vertices.rows() != connectivity.num_vertices() || vertices.cols() != 3) {
    throw ShapeError("fit_objective: vertex matrix does not match the connectivity");
  }
  const FitGraph graph(connectivity);
  FitTerms t;
  std::tie(t.chamfer, t.normal) = graph.chamfer(vertices, ours, theirs);
  t.uniform = graph.uniform(vertices);
  t.smooth = graph.smooth(vertices);
  t.total = ad::add(ad::add(t.chamfer, ad::scale(t.normal, config.weight_normal)),
                    ad::add(ad::scale(t.uniform, config.weight_uniform), ad::scale(t.smooth, config.weight_smooth)));
  return t;
}

void FitConfig::validate() const {
  if (samples_per_side == 0) throw ValidationError("samples_per_side must be positive");
  if (iters_per_level < 0) throw ValidationError("iters_per_level must be non-negative");
  if (!(learning_rate > 0.0) || !finite(learning_rate)) throw ValidationError("learning_rate must be positive");
  for (double w : {weight_normal, weight_uniform, weight_smooth}) {
    if (!(w >= 0.0) || !finite(w)) throw ValidationError("fit weights must be finite and non-negative");
  }
  if (levels < 1) throw ValidationError("levels must be positive");
  if (eval_interval < 1) throw ValidationError("eval_interval must be positive");
}

ChamferTerms chamfer_terms(std::span<const SurfaceSample> a, std::span<const SurfaceSample> b) {
  if (a.empty() || b.empty()) throw ShapeError("chamfer loss needs non-empty sample sets");
  const auto [da, na] = directed_terms(a, b);
  const auto [db, nb] = directed_terms(b, a);
  return {da + db, na + nb};
}

double chamfer_normal_loss(std::span<const SurfaceSample> a, std::span<const SurfaceSample> b, double weight_normal) {
  return chamfer_terms(a, b).total(weight_normal);
}

double length_variance(std::span<const double> lengths) {
  if (lengths.empty()) return 0.0;
  double mean = 0.0;
  for (double l : lengths) mean += l;
  mean /= static_cast<double>(lengths.size());
  double var = 0.0;
  for (double l : lengths) var += (l - mean) * (l - mean);
  return var / static_cast<double>(lengths.size());
}

Regularizers regularizers(const Mesh& mesh) {
  const auto& conn = mesh.connectivity();
  const auto& p = mesh.vertices();
  std::vector<double> lengths;
  lengths.reserve(conn.num_edges());
  for (const auto& e : conn.edges()) lengths.push_back(norm(p[e[1]] - p[e[0]]));
  double smooth = 0.0;
  for (Index v = 0; v < mesh.num_vertices(); ++v) {
    const auto ring = conn.one_ring(v);
    Vec3 avg;
    for (Index u : ring) avg += p[u];
    avg = avg / static_cast<double>(ring.size());
    smooth += norm(p[v] - avg);
  }
  return {length_variance(lengths), smooth / static_cast<double>(mesh.num_vertices())};
}

FitEvaluation evaluate_fit(const Mesh& current, const Mesh& reference, const FitConfig& config, std::uint64_t seed) {
  const auto ours = sample_surface(current, config.samples_per_side, derive_seed(seed, kStreamEvalCurrent));
  const auto theirs = sample_surface(reference, config.samples_per_side, derive_seed(seed, kStreamEvalReference));
  FitEvaluation e;
  e.chamfer = chamfer_terms(ours, theirs);
  e.regularizers = regularizers(current);
  e.loss = e.chamfer.total(config.weight_normal) + config.weight_uniform * e.regularizers.uniform +
           config.weight_smooth * e.regularizers.smooth;
  return e;
}

namespace {
double surface_area(std::span<const Vec3> vertices, std::span<const Face> faces) {
  double total = 0.0;
  for (const Face& f : faces) total += 0.5 * norm(cross(vertices[f[1]] - vertices[f[0]], vertices[f[2]] - vertices[f[0]]));
  return total;
}
}  // namespace

FitResult fit_level(const Mesh& current, const Mesh& reference, const FitConfig& config, std::uint64_t seed,
                    const FitLogSink& sink, int level) {
  config.validate();
  const Var vertices = Var::parameter(to_matrix(current.vertices()));
  Adam<double> adam({vertices}, AdamOptions{.learning_rate = config.learning_rate});

  const FitEvaluation initial = evaluate_fit(current, reference, config, seed);
  FitResult result{.mesh = current, .initial = initial, .final = initial, .best_iter = 0, .log = {},
                   .diverged = false, .diagnostic = {}};
  if (!finite(result.initial.loss)) {
    result.diverged = true;
    result.diagnostic = "initial loss is not finite";
    return result;
  }

  for (int it = 0; it < config.iters_per_level; ++it) {
    const std::vector<Vec3> positions = from_matrix(vertices.value());
    if (const double area = surface_area(positions, current.faces()); !finite(area)) {
      result.diverged = true;
      result.diagnostic = fmt::format("level {} iteration {}: surface area {} after the optimizer step", level, it, area);
      spdlog::error("fit diverged: {}", result.diagnostic);
      return result;
    }
    std::vector<SurfaceSample> ours;
    try {
      ours = sample_surface(positions, current.faces(), config.samples_per_side,
                            derive_seed(seed, kStreamTrainCurrent, it));
    } catch (const GeometryError&) {
      spdlog::warn("level {} iteration {}: surface area vanished; stopping with the best iterate", level, it);
      break;
    }
    const auto theirs =
        sample_surface(reference, config.samples_per_side, derive_seed(seed, kStreamTrainReference, it));
    const FitTerms terms = fit_objective(vertices, current.connectivity(), ours, theirs, config);
    const Var& loss = terms.total;

    const FitLogEntry entry{it,          loss.item(),          terms.chamfer.item(), terms.normal.item(),
                            terms.uniform.item(), terms.smooth.item()};
    result.log.push_back(entry);
    if (sink) sink(level, entry);
    if (!finite(entry.loss)) {
      result.diverged = true;
      result.diagnostic = fmt::format("level {} iteration {}: loss {} (chamfer {}, normal {}, uniform {}, smooth {})",
                                      level, it, entry.loss, entry.chamfer, entry.normal, entry.uniform, entry.smooth);
      spdlog::error("fit diverged: {}", result.diagnostic);
      return result;
    }

    const Var g = ad::grad(loss, std::span<const Var>(&vertices, 1)).front();
    adam.step(std::span<const Var>(&g, 1));

    const bool last = it + 1 == config.iters_per_level;
    if ((it + 1) % config.eval_interval == 0 || last) {
      const Mesh candidate = current.with_vertices(from_matrix(vertices.value()));
      FitEvaluation e;
      try {
        e = evaluate_fit(candidate, reference, config, seed);
      } catch (const GeometryError&) {
        continue;  // collapsed surface; keep the previous best
      }
      if (finite(e.loss) && e.loss < result.final.loss) {
        result.final = e;
        result.mesh = candidate;
        result.best_iter = it + 1;
      }
    }
  }
  return result;
}

Mesh place_template(const Mesh& templ, const Mesh& reference) {
  auto rms_radius = [](const Mesh& m, const Vec3& c) {
    double s = 0.0;
    for (const Vec3& v : m.vertices()) s += dot(v - c, v - c);
    return std::sqrt(s / static_cast<double>(m.num_vertices()));
  };
  const Vec3 ct = vertex_centroid(templ.vertices());
  const Vec3 cr = vertex_centroid(reference.vertices());
  const double rt = rms_radius(templ, ct);
  if (!(rt > 0.0)) throw GeometryError("template has zero extent");
  const double factor = rms_radius(reference, cr) / rt;
  std::vector<Vec3> out;
  out.reserve(templ.num_vertices());
  for (const Vec3& v : templ.vertices()) out.push_back(cr + (v - ct) * factor);
  return templ.with_vertices(std::move(out));
}

MultiscalePyramid build_multiscale(const Mesh& templ, const Mesh& reference, int levels, const FitConfig& config,
                                   std::uint64_t seed, std::string template_id, const FitLogSink& sink) {
  if (levels < 2) throw ValidationError(fmt::format("a pyramid needs at least 2 levels, got {}", levels));
  config.validate();
  const long gt = mesh_stats(templ).genus, gr = mesh_stats(reference).genus;
  if (gt != gr) spdlog::warn("template genus {} differs from reference genus {}; the fit cannot be faithful", gt, gr);

  MultiscalePyramid pyramid{.template_id = std::move(template_id),
                            .reference_hash = mesh_hash(reference),
                            .config = config,
                            .seed = seed,
                            .template_mesh = templ,
                            .levels = {},
                            .final_evaluations = {}};
  pyramid.config.levels = levels;
  Mesh current = templ;
  for (int level = 0; level < levels; ++level) {
    if (level > 0) current = uniform_subdivide(current, false).mesh;
    FitResult fit = fit_level(current, reference, config, derive_seed(seed, kStreamLevel, level), sink, level);
    if (fit.diverged) throw DivergenceError(fit.diagnostic);
    spdlog::info("level {}: {} faces, chamfer {:.5f} -> {:.5f} (best iter {})", level, fit.mesh.num_faces(),
                 fit.initial.chamfer.distance, fit.final.chamfer.distance, fit.best_iter);
    current = fit.mesh;
    pyramid.levels.push_back(current);
    pyramid.final_evaluations.push_back(fit.final);
  }
  return pyramid;
}

std::string mesh_hash(const Mesh& mesh) {
  // FNV-1a over vertex bit patterns and face indices.
  std::uint64_t h = 1469598103934665603ull;
  auto feed = [&](std::uint64_t x) {
    for (int b = 0; b < 8; ++b) {
      h ^= (x >> (8 * b)) & 0xffu;
      h *= 1099511628211ull;
    }
  };
  feed(mesh.num_vertices());
  feed(mesh.num_faces());
  for (const Vec3& v : mesh.vertices()) {
    for (int c = 0; c < 3; ++c) feed(std::bit_cast<std::uint64_t>(v[c]));
  }
  for (const Face& f : mesh.faces()) {
    for (Index i : f) feed(i);
  }
  return fmt::format("{:016x}", h);
}

void save_pyramid(const std::filesystem::path& dir, const MultiscalePyramid& pyramid) {
  std::filesystem::create_directories(dir);
  save_obj(dir / "template.obj", pyramid.template_mesh);
  for (std::size_t k = 0; k < pyramid.levels.size(); ++k) {
    save_obj(dir / fmt::format("level_{}.obj", k), pyramid.levels[k]);
  }
  KeyValueFile m;
  m.set("", "template", pyramid.template_id);
  m.set("", "reference_hash", pyramid.reference_hash);
  m.set("", "levels", static_cast<std::int64_t>(pyramid.levels.size()));
  m.set("", "seed", pyramid.seed);
  store_fit_config(m, "fit", pyramid.config);
  std::vector<double> loss, chamfer;
  for (const auto& e : pyramid.final_evaluations) {
    loss.push_back(e.loss);
    chamfer.push_back(e.chamfer.distance);
  }
  m.set("losses", "final_loss", join_csv(loss));
  m.set("losses", "final_chamfer", join_csv(chamfer));
  m.save(dir / "pyramid.manifest");
}

MultiscalePyramid load_pyramid(const std::filesystem::path& dir) {
  const KeyValueFile m = KeyValueFile::load(dir / "pyramid.manifest");
  FitConfig c = read_fit_config(m, "fit");
  const auto levels = m.require_int("", "levels");
  if (levels < 1) throw ParseError("pyramid manifest: levels must be positive");
  c.levels = static_cast<int>(levels);

  MultiscalePyramid p{.template_id = m.require("", "template"),
                      .reference_hash = m.require("", "reference_hash"),
                      .config = c,
                      .seed = m.require_uint("", "seed"),
                      .template_mesh = load_obj(dir / "template.obj"),
                      .levels = {},
                      .final_evaluations = {}};
  const auto loss = split_csv_doubles(m.get("losses", "final_loss").value_or(""));
  const auto chamfer = split_csv_doubles(m.get("losses", "final_chamfer").value_or(""));
  for (int k = 0; k < levels; ++k) {
    Mesh mesh = load_obj(dir / fmt::format("level_{}.obj", k));
    if (k > 0) {
      const auto expected = subdivide_connectivity(p.levels.back().connectivity());
      if (!expected->same_faces(mesh.connectivity())) {
        throw TopologyError(fmt::format("level_{}.obj is not the subdivision of level_{}.obj", k, k - 1));
      }
      mesh = Mesh(mesh.vertices(), expected);
    }
    p.levels.push_back(std::move(mesh));
    FitEvaluation e;
    if (static_cast<std::size_t>(k) < loss.size()) e.loss = loss[k];
    if (static_cast<std::size_t>(k) < chamfer.size()) e.chamfer.distance = chamfer[k];
    p.final_evaluations.push_back(e);
  }
  return p;
}

}  // namespace meshtex

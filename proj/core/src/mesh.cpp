#include "meshtex/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <unordered_map>

#include <fmt/format.h>

#include "meshtex/errors.hpp"

namespace meshtex {

namespace {

constexpr std::uint64_t directed_key(Index a, Index b) {
  return (static_cast<std::uint64_t>(a) << 32) | b;
}

constexpr std::uint64_t undirected_key(Index a, Index b) {
  return a < b ? directed_key(a, b) : directed_key(b, a);
}

}  // namespace

Connectivity::Connectivity(std::size_t num_vertices, std::vector<Face> faces)
    : num_vertices_(num_vertices), faces_(std::move(faces)) {
  if (faces_.empty()) throw TopologyError("mesh has no faces");

  for (std::size_t f = 0; f < faces_.size(); ++f) {
    const Face& face = faces_[f];
    for (Index v : face) {
      if (v >= num_vertices_) {
        throw TopologyError(fmt::format("face {} references vertex {} but mesh has {} vertices", f, v,
                                        num_vertices_));
      }
    }
    if (face[0] == face[1] || face[1] == face[2] || face[2] == face[0]) {
      throw TopologyError(fmt::format("face {} repeats a vertex ({}, {}, {})", f, face[0], face[1], face[2]));
    }
  }

  // Undirected incidence counts decide manifoldness before orientation.
  std::unordered_map<std::uint64_t, Index> edge_id;
  std::vector<Index> edge_count;
  edge_id.reserve(faces_.size() * 2);
  for (const Face& face : faces_) {
    for (int k = 0; k < 3; ++k) {
      const Index a = face[k];
      const Index b = face[(k + 1) % 3];
      auto [it, inserted] = edge_id.try_emplace(undirected_key(a, b), static_cast<Index>(edges_.size()));
      if (inserted) {
        edges_.push_back({std::min(a, b), std::max(a, b)});
        edge_count.push_back(0);
      }
      ++edge_count[it->second];
    }
  }
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    if (edge_count[e] > 2) {
      throw TopologyError(fmt::format("non-manifold edge ({}, {}) shared by {} faces", edges_[e][0],
                                      edges_[e][1], edge_count[e]));
    }
    if (edge_count[e] < 2) {
      throw TopologyError(fmt::format("open mesh: boundary edge ({}, {})", edges_[e][0], edges_[e][1]));
    }
  }

  std::unordered_map<std::uint64_t, Index> directed;
  directed.reserve(faces_.size() * 3);
  for (std::size_t f = 0; f < faces_.size(); ++f) {
    for (int k = 0; k < 3; ++k) {
      const Index a = faces_[f][k];
      const Index b = faces_[f][(k + 1) % 3];
      if (!directed.emplace(directed_key(a, b), static_cast<Index>(f)).second) {
        throw TopologyError(fmt::format("inconsistent winding: directed edge ({}, {}) appears twice", a, b));
      }
    }
  }

  adjacency_.resize(faces_.size());
  for (std::size_t f = 0; f < faces_.size(); ++f) {
    for (int k = 0; k < 3; ++k) {
      const Index a = faces_[f][k];
      const Index b = faces_[f][(k + 1) % 3];
      adjacency_[f][k] = directed.at(directed_key(b, a));
    }
  }

  vertex_face_count_.assign(num_vertices_, 0);
  std::vector<Index> first_face(num_vertices_, 0);
  for (std::size_t f = 0; f < faces_.size(); ++f) {
    for (Index v : faces_[f]) {
      if (vertex_face_count_[v]++ == 0) first_face[v] = static_cast<Index>(f);
    }
  }
  for (std::size_t v = 0; v < num_vertices_; ++v) {
    if (vertex_face_count_[v] == 0) throw TopologyError(fmt::format("vertex {} is not referenced by any face", v));
  }

  // Each vertex must see a single fan of faces.
  for (Index v = 0; v < num_vertices_; ++v) {
    Index f = first_face[v];
    Index steps = 0;
    do {
      const Face& face = faces_[f];
      const int slot = face[0] == v ? 0 : (face[1] == v ? 1 : 2);
      f = adjacency_[f][slot];
      ++steps;
    } while (f != first_face[v] && steps <= vertex_face_count_[v]);
    if (steps != vertex_face_count_[v]) {
      throw TopologyError(fmt::format("non-manifold vertex {}: faces around it form more than one fan", v));
    }
  }

  std::vector<Index> degree(num_vertices_, 0);
  for (const auto& e : edges_) {
    ++degree[e[0]];
    ++degree[e[1]];
  }
  ring_offsets_.assign(num_vertices_ + 1, 0);
  for (std::size_t v = 0; v < num_vertices_; ++v) ring_offsets_[v + 1] = ring_offsets_[v] + degree[v];
  ring_indices_.resize(ring_offsets_.back());
  std::vector<std::size_t> cursor(ring_offsets_.begin(), ring_offsets_.end() - 1);
  for (const auto& e : edges_) {
    ring_indices_[cursor[e[0]]++] = e[1];
    ring_indices_[cursor[e[1]]++] = e[0];
  }
}

Mesh::Mesh(std::vector<Vec3> vertices, std::vector<Face> faces)
    : vertices_(std::move(vertices)),
      connectivity_(std::make_shared<const Connectivity>(vertices_.size(), std::move(faces))) {}

Mesh::Mesh(std::vector<Vec3> vertices, std::shared_ptr<const Connectivity> connectivity)
    : vertices_(std::move(vertices)), connectivity_(std::move(connectivity)) {
  if (!connectivity_) throw TopologyError("null connectivity");
  if (vertices_.size() != connectivity_->num_vertices()) {
    throw TopologyError(fmt::format("vertex count {} does not match connectivity ({})", vertices_.size(),
                                    connectivity_->num_vertices()));
  }
}

Mesh Mesh::with_vertices(std::vector<Vec3> vertices) const { return Mesh(std::move(vertices), connectivity_); }

MeshStats mesh_stats(const Mesh& mesh) {
  MeshStats s;
  s.vertices = mesh.num_vertices();
  s.edges = mesh.num_edges();
  s.faces = mesh.num_faces();
  s.euler_characteristic =
      static_cast<long>(s.vertices) - static_cast<long>(s.edges) + static_cast<long>(s.faces);
  s.genus = (2 - s.euler_characteristic) / 2;
  return s;
}

double mean_edge_length(const Mesh& mesh) {
  double total = 0.0;
  for (const auto& e : mesh.connectivity().edges()) total += norm(mesh.vertices()[e[1]] - mesh.vertices()[e[0]]);
  return total / static_cast<double>(mesh.num_edges());
}

Vec3 vertex_centroid(std::span<const Vec3> vertices) {
  Vec3 c;
  for (const Vec3& v : vertices) c += v;
  return c / static_cast<double>(vertices.size());
}

double face_area(const Mesh& mesh, Index face) {
  const auto& f = mesh.faces()[face];
  const auto& p = mesh.vertices();
  return 0.5 * norm(cross(p[f[1]] - p[f[0]], p[f[2]] - p[f[0]]));
}

Mesh scale_about_centroid(const Mesh& mesh, double factor) {
  const Vec3 c = vertex_centroid(mesh.vertices());
  std::vector<Vec3> out;
  out.reserve(mesh.num_vertices());
  for (const Vec3& v : mesh.vertices()) out.push_back(c + (v - c) * factor);
  return mesh.with_vertices(std::move(out));
}

Mesh normalize_mean_edge(const Mesh& mesh) {
  const double mean = mean_edge_length(mesh);
  if (!(mean > 0.0) || !std::isfinite(mean)) {
    throw GeometryError("cannot normalize: mean edge length is zero or not finite");
  }
  return scale_about_centroid(mesh, 1.0 / mean);
}

std::vector<SurfaceSample> sample_surface(std::span<const Vec3> vertices, std::span<const Face> faces,
                                          std::size_t count, std::uint64_t seed) {
  if (count == 0) throw ShapeError("sample count must be positive");
  std::vector<double> cumulative(faces.size());
  std::vector<Vec3> normals(faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < faces.size(); ++f) {
    for (Index v : faces[f]) {
      if (v >= vertices.size()) throw TopologyError(fmt::format("face {} references vertex {}", f, v));
    }
    const Vec3 n = cross(vertices[faces[f][1]] - vertices[faces[f][0]], vertices[faces[f][2]] - vertices[faces[f][0]]);
    const double twice_area = norm(n);
    total += 0.5 * twice_area;
    cumulative[f] = total;
    normals[f] = twice_area > 0.0 ? n / twice_area : Vec3{};
  }
  if (!(total > 0.0)) throw GeometryError("cannot sample a surface with zero total area");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<SurfaceSample> samples;
  samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double pick = uniform(rng) * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    if (it == cumulative.end()) --it;
    const auto f = static_cast<Index>(it - cumulative.begin());
    const double r1 = std::sqrt(uniform(rng));
    const double r2 = uniform(rng);
    const Vec3 bary{1.0 - r1, r1 * (1.0 - r2), r1 * r2};
    const Face& face = faces[f];
    const Vec3 p = vertices[face[0]] * bary.x + vertices[face[1]] * bary.y + vertices[face[2]] * bary.z;
    samples.push_back({p, normals[f], f, bary});
  }
  return samples;
}

std::vector<SurfaceSample> sample_surface(const Mesh& mesh, std::size_t count, std::uint64_t seed) {
  return sample_surface(mesh.vertices(), mesh.faces(), count, seed);
}

}  // namespace meshtex

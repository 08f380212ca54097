#pragma once

// Closed, consistently oriented triangle meshes.
//
// Conventions:
// - Indices are 0-based in memory; OBJ I/O converts from/to 1-based.
// - Neighbor k of face (v0, v1, v2) is the face across edge (v_k, v_{k+1 mod 3}).
// - Meshes are immutable after construction. Connectivity is shared between
//   meshes that differ only in vertex positions.

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "meshtex/vec3.hpp"

namespace meshtex {

using Index = std::uint32_t;
using Face = std::array<Index, 3>;

// Validated face list plus everything derived from it. Independent of
// vertex positions.
class Connectivity {
 public:
  // Throws TopologyError unless faces describe a closed, edge-manifold,
  // consistently oriented surface over exactly num_vertices vertices.
  Connectivity(std::size_t num_vertices, std::vector<Face> faces);

  std::size_t num_vertices() const { return num_vertices_; }
  std::size_t num_faces() const { return faces_.size(); }
  std::size_t num_edges() const { return edges_.size(); }

  const std::vector<Face>& faces() const { return faces_; }
  // adjacency()[f][k]: face across edge (v_k, v_{k+1}) of face f.
  const std::vector<std::array<Index, 3>>& adjacency() const { return adjacency_; }
  // Undirected edges as (min, max) pairs in order of first appearance.
  const std::vector<std::array<Index, 2>>& edges() const { return edges_; }
  // Number of incident faces (equals vertex degree on a closed mesh).
  const std::vector<Index>& vertex_face_count() const { return vertex_face_count_; }
  // One-ring neighbors of each vertex, CSR layout.
  std::span<const Index> one_ring(Index v) const {
    return {ring_indices_.data() + ring_offsets_[v], ring_offsets_[v + 1] - ring_offsets_[v]};
  }

  bool same_faces(const Connectivity& other) const { return faces_ == other.faces_; }

 private:
  std::size_t num_vertices_;
  std::vector<Face> faces_;
  std::vector<std::array<Index, 3>> adjacency_;
  std::vector<std::array<Index, 2>> edges_;
  std::vector<Index> vertex_face_count_;
  std::vector<std::size_t> ring_offsets_;
  std::vector<Index> ring_indices_;
};

class Mesh {
 public:
  Mesh(std::vector<Vec3> vertices, std::vector<Face> faces);
  Mesh(std::vector<Vec3> vertices, std::shared_ptr<const Connectivity> connectivity);

  // Same connectivity, new positions.
  Mesh with_vertices(std::vector<Vec3> vertices) const;

  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<Face>& faces() const { return connectivity_->faces(); }
  const std::vector<std::array<Index, 3>>& adjacency() const { return connectivity_->adjacency(); }
  const Connectivity& connectivity() const { return *connectivity_; }
  const std::shared_ptr<const Connectivity>& shared_connectivity() const { return connectivity_; }

  std::size_t num_vertices() const { return vertices_.size(); }
  std::size_t num_faces() const { return connectivity_->num_faces(); }
  std::size_t num_edges() const { return connectivity_->num_edges(); }

 private:
  std::vector<Vec3> vertices_;
  std::shared_ptr<const Connectivity> connectivity_;
};

struct SurfaceSample {
  Vec3 position;
  Vec3 normal;  // unit normal of the containing face
  Index face_index = 0;
  Vec3 barycentric;  // weights of the face's (v0, v1, v2)
};

struct MeshStats {
  std::size_t vertices = 0;
  std::size_t edges = 0;
  std::size_t faces = 0;
  long euler_characteristic = 0;
  long genus = 0;

  friend bool operator==(const MeshStats&, const MeshStats&) = default;
};

MeshStats mesh_stats(const Mesh& mesh);

double mean_edge_length(const Mesh& mesh);
Vec3 vertex_centroid(std::span<const Vec3> vertices);
double face_area(const Mesh& mesh, Index face);

// Uniform scale about the vertex centroid so the mean undirected edge
// length becomes 1. Throws GeometryError when every edge has zero length.
Mesh normalize_mean_edge(const Mesh& mesh);

// Uniform scale about the vertex centroid by `factor`.
Mesh scale_about_centroid(const Mesh& mesh, double factor);

// Area-weighted face choice and uniform barycentric placement; deterministic
// given seed. The span overload accepts open fragments (no validation beyond
// index range). Throws GeometryError on zero total area.
std::vector<SurfaceSample> sample_surface(const Mesh& mesh, std::size_t count, std::uint64_t seed);
std::vector<SurfaceSample> sample_surface(std::span<const Vec3> vertices, std::span<const Face> faces,
                                          std::size_t count, std::uint64_t seed);

}  // namespace meshtex

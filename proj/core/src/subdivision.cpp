#include "meshtex/subdivision.hpp"

#include <algorithm>
#include <unordered_map>

namespace meshtex {

namespace {

struct Split {
  std::vector<Face> faces;
  SubdivisionMap map;
};

Split split_faces(const Connectivity& conn) {
  const auto nv = static_cast<Index>(conn.num_vertices());
  Split out;
  // Midpoints are numbered by sorted (lo, hi) so that relabeling faces does
  // not renumber vertices.
  std::vector<std::array<Index, 2>> edges(conn.edges().begin(), conn.edges().end());
  std::sort(edges.begin(), edges.end());
  std::unordered_map<std::uint64_t, Index> midpoint;
  midpoint.reserve(edges.size() * 2);
  out.map.midpoint_of.reserve(edges.size());
  for (const auto& [lo, hi] : edges) {
    const Index m = nv + static_cast<Index>(out.map.midpoint_of.size());
    midpoint.emplace((static_cast<std::uint64_t>(lo) << 32) | hi, m);
    out.map.midpoint_of.push_back({lo, hi, m});
  }
  auto mid = [&](Index a, Index b) {
    const Index lo = std::min(a, b), hi = std::max(a, b);
    return midpoint.at((static_cast<std::uint64_t>(lo) << 32) | hi);
  };

  out.faces.reserve(conn.num_faces() * 4);
  out.map.parent_face.reserve(conn.num_faces() * 4);
  for (std::size_t f = 0; f < conn.num_faces(); ++f) {
    const auto [v0, v1, v2] = conn.faces()[f];
    const Index m01 = mid(v0, v1), m12 = mid(v1, v2), m20 = mid(v2, v0);
    out.faces.push_back({v0, m01, m20});
    out.faces.push_back({v1, m12, m01});
    out.faces.push_back({v2, m20, m12});
    out.faces.push_back({m01, m12, m20});
    for (int c = 0; c < 4; ++c) out.map.parent_face.push_back(static_cast<Index>(f));
  }
  return out;
}

}  // namespace

std::shared_ptr<const Connectivity> subdivide_connectivity(const Connectivity& connectivity) {
  Split split = split_faces(connectivity);
  return std::make_shared<const Connectivity>(connectivity.num_vertices() + split.map.midpoint_of.size(),
                                              std::move(split.faces));
}

Subdivided uniform_subdivide(const Mesh& mesh, bool rescale) {
  Split split = split_faces(mesh.connectivity());
  std::vector<Vec3> vertices = mesh.vertices();
  vertices.reserve(vertices.size() + split.map.midpoint_of.size());
  for (const auto& [a, b, m] : split.map.midpoint_of) {
    vertices.push_back((mesh.vertices()[a] + mesh.vertices()[b]) * 0.5);
  }
  Mesh out(std::move(vertices), std::move(split.faces));
  if (rescale) out = scale_about_centroid(out, mean_edge_length(mesh) / mean_edge_length(out));
  return {std::move(out), std::move(split.map)};
}

}  // namespace meshtex

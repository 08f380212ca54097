#pragma once

#include <array>
#include <vector>

#include "meshtex/mesh.hpp"

namespace meshtex {

struct SubdivisionMap {
  // parent_face[c]: level-l face that produced child face c.
  std::vector<Index> parent_face;
  // One entry per parent undirected edge, sorted: (min vertex, max vertex,
  // midpoint vertex).
  std::vector<std::array<Index, 3>> midpoint_of;
};

struct Subdivided {
  Mesh mesh;
  SubdivisionMap map;
};

// 1 -> 4 split with exact edge midpoints. Parent (v0, v1, v2) with midpoints
// m01, m12, m20 emits (v0, m01, m20), (v1, m12, m01), (v2, m20, m12),
// (m01, m12, m20). Midpoint vertices follow the input vertices, numbered in
// ascending (lo, hi) edge order. Output connectivity depends only on input
// connectivity.
// With rescale, the result is scaled about its centroid so that its mean edge
// length equals the input's.
Subdivided uniform_subdivide(const Mesh& mesh, bool rescale);

// Connectivity-only variant; positions are not needed.
std::shared_ptr<const Connectivity> subdivide_connectivity(const Connectivity& connectivity);

}  // namespace meshtex

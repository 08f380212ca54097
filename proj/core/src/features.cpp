#include "meshtex/features.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "meshtex/errors.hpp"

namespace meshtex {

std::vector<FaceFrames> edge_frames(std::span<const Vec3> vertices, std::span<const Face> faces) {
  std::vector<FaceFrames> frames(faces.size());
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const Vec3 p[3] = {vertices[faces[f][0]], vertices[faces[f][1]], vertices[faces[f][2]]};
    const Vec3 n = cross(p[1] - p[0], p[2] - p[0]);
    double longest = 0.0;
    for (int k = 0; k < 3; ++k) longest = std::max(longest, norm(p[(k + 1) % 3] - p[k]));
    const double twice_area = norm(n);
    if (!(twice_area > 1e-14 * longest * longest)) {
      throw GeometryError(fmt::format("face {} has zero area; its normal is undefined", f));
    }
    const Vec3 z = n / twice_area;
    for (int k = 0; k < 3; ++k) {
      const Vec3 edge = p[(k + 1) % 3] - p[k];
      const double length = norm(edge);
      if (!(length > 0.0)) throw GeometryError(fmt::format("face {} edge {} has zero length", f, k));
      const Vec3 x = edge / length;
      frames[f][k] = {(p[k] + p[(k + 1) % 3]) * 0.5, x, cross(z, x), z};
    }
  }
  return frames;
}

std::vector<FaceFrames> edge_frames(const Mesh& mesh) { return edge_frames(mesh.vertices(), mesh.faces()); }

Index neighbor_apex(const Connectivity& connectivity, std::size_t face, int edge) {
  const Face& own = connectivity.faces()[face];
  const Face& other = connectivity.faces()[connectivity.adjacency()[face][edge]];
  const Index a = own[edge], b = own[(edge + 1) % 3];
  for (Index v : other) {
    if (v != a && v != b) return v;
  }
  throw TopologyError(fmt::format("face {} edge {}: neighbor shares all vertices", face, edge));
}

FaceFeatureTensor features_from_frames(std::span<const Vec3> vertices, const Connectivity& connectivity,
                                       std::span<const FaceFrames> frames) {
  const auto& faces = connectivity.faces();
  FaceFeatureTensor s(faces.size());
  for (std::size_t f = 0; f < faces.size(); ++f) {
    for (int k = 0; k < 3; ++k) {
      const EdgeFrame& frame = frames[f][k];
      const Vec3 a = vertices[faces[f][k]];
      const Vec3 b = vertices[faces[f][(k + 1) % 3]];
      const Vec3 d = vertices[neighbor_apex(connectivity, f, k)] - frame.origin;
      s.at(f, k, 0) = norm(b - a);
      s.at(f, k, 1) = dot(d, frame.x_axis);
      s.at(f, k, 2) = dot(d, frame.y_axis);
      s.at(f, k, 3) = dot(d, frame.z_axis);
    }
  }
  return s;
}

FaceFeatureTensor extract_features(std::span<const Vec3> vertices, const Connectivity& connectivity) {
  const auto frames = edge_frames(vertices, connectivity.faces());
  return features_from_frames(vertices, connectivity, frames);
}

FaceFeatureTensor extract_features(const Mesh& mesh) {
  return extract_features(mesh.vertices(), mesh.connectivity());
}

}  // namespace meshtex

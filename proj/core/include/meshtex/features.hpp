#pragma once

// Rigid-invariant per-face input features.
//
// For face (v0, v1, v2) and edge k = (v_k, v_{k+1}), the edge frame has its
// origin at the edge midpoint, x along v_{k+1} - v_k, z along the CCW face
// normal and y = z cross x. Feature row k is
//   (|edge k|, (v_opp - origin) . x, (v_opp - origin) . y, (v_opp - origin) . z)
// where v_opp is the apex of the neighboring face across edge k, so the last
// two columns encode the fold between the face and that neighbor.

#include <array>
#include <span>
#include <vector>

#include "meshtex/mesh.hpp"

namespace meshtex {

struct EdgeFrame {
  Vec3 origin;
  Vec3 x_axis;
  Vec3 y_axis;
  Vec3 z_axis;
};

using FaceFrames = std::array<EdgeFrame, 3>;

// Throws GeometryError on zero-length edges or zero-area faces.
std::vector<FaceFrames> edge_frames(const Mesh& mesh);
std::vector<FaceFrames> edge_frames(std::span<const Vec3> vertices, std::span<const Face> faces);

inline constexpr int kFeatureColumns = 4;

// Row-major 3F x 4 matrix; row 3f + k holds edge k of face f.
class FaceFeatureTensor {
 public:
  explicit FaceFeatureTensor(std::size_t num_faces) : data_(num_faces * 3 * kFeatureColumns, 0.0) {}

  std::size_t num_faces() const { return data_.size() / (3 * kFeatureColumns); }
  std::size_t rows() const { return num_faces() * 3; }
  double& at(std::size_t face, int edge, int column) {
    return data_[(face * 3 + edge) * kFeatureColumns + column];
  }
  double at(std::size_t face, int edge, int column) const {
    return data_[(face * 3 + edge) * kFeatureColumns + column];
  }
  std::span<const double> values() const { return data_; }

 private:
  std::vector<double> data_;
};

FaceFeatureTensor extract_features(const Mesh& mesh);
FaceFeatureTensor extract_features(std::span<const Vec3> vertices, const Connectivity& connectivity);
FaceFeatureTensor features_from_frames(std::span<const Vec3> vertices, const Connectivity& connectivity,
                                       std::span<const FaceFrames> frames);

// Vertex of the face across edge `edge` of `face` that is not on that edge.
Index neighbor_apex(const Connectivity& connectivity, std::size_t face, int edge);

}  // namespace meshtex

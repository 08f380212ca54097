#pragma once

// Face-convolutional generator and critic.
//
// A network is a stack of layers over per-face embeddings:
//   layer 0 (embedding):  rowmax(S W + b) over the 3 edge rows of each face
//   layers 1..n-1:        rowmax(N W_S + (f W_f + b)) over the 3 neighbor rows
// Every layer except the last is followed by instance normalization across the
// faces of the mesh and a leaky rectifier with slope 0.2.

#include <cstdint>
#include <random>
#include <vector>

#include "meshtex/autodiff.hpp"
#include "meshtex/mesh.hpp"

namespace meshtex {

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kNormEpsilon = 1e-5;

// Index arrays over rows (f, k) = 3f + k shared by the network kernels.
struct FaceTopology {
  std::size_t num_faces = 0;
  std::size_t num_vertices = 0;
  ad::IndexList neighbor_rows;  // adjacency flattened: face across edge k
  ad::IndexList face_of_row;    // f, f, f, ...
  // Vertex v_k, v_{k+1}, v_{k+2} of row (f, k); corner[2] is the vertex
  // opposite edge k.
  std::array<ad::IndexList, 3> corner;
  // Apex of the neighbor across edge k (see neighbor_apex).
  ad::IndexList apex;
  // Vertex v0, v1, v2 of each face (F entries each).
  std::array<ad::IndexList, 3> face_vertex;

  static FaceTopology from(const Connectivity& connectivity);
};

// Differentiable version of extract_features: vertices (V x 3) -> 3F x 4.
template <typename T>
ad::Var<T> feature_graph(const ad::Var<T>& vertices, const FaceTopology& topology);

struct NetworkConfig {
  int num_layers = 7;
  int embed_dim = 32;
  int output_dim = 1;
};

// Embedding width for a 0-based hierarchy level: 32, 64, then 128.
int embed_dim_for_level(int level);

template <typename T>
struct LayerParams {
  ad::Var<T> w_neighbors;  // W (4 x d) on the embedding layer, W_S elsewhere
  ad::Var<T> w_self;       // W_f; undefined on the embedding layer
  ad::Var<T> bias;         // 1 x d_out
  ad::Var<T> norm_gain;    // 1 x d_out; undefined on the output head
  ad::Var<T> norm_shift;   // 1 x d_out; undefined on the output head

  bool is_embedding() const { return !w_self.defined(); }
  bool is_head() const { return !norm_gain.defined(); }
  // Defined tensors in serialization order.
  std::vector<ad::Var<T>> tensors() const;
};

template <typename T>
ad::Var<T> face_embedding(const ad::Var<T>& features, const LayerParams<T>& params);

// Linear map plus row max only; normalization/activation is applied by the
// caller (see FaceConvNet::forward).
template <typename T>
ad::Var<T> face_conv(const ad::Var<T>& embeddings, const FaceTopology& topology, const LayerParams<T>& params);

template <typename T>
class FaceConvNet {
 public:
  FaceConvNet() = default;
  FaceConvNet(NetworkConfig config, std::vector<LayerParams<T>> layers);

  static FaceConvNet random(const NetworkConfig& config, std::mt19937_64& rng);

  // features: 3F x 4 -> F x output_dim.
  ad::Var<T> forward(const ad::Var<T>& features, const FaceTopology& topology) const;

  const NetworkConfig& config() const { return config_; }
  const std::vector<LayerParams<T>>& layers() const { return layers_; }
  std::vector<LayerParams<T>>& layers() { return layers_; }
  std::vector<ad::Var<T>> parameters() const;
  // Deep copy with fresh parameter leaves.
  FaceConvNet clone() const;

 private:
  NetworkConfig config_;
  std::vector<LayerParams<T>> layers_;
};

template <typename T>
class Generator {
 public:
  Generator() = default;
  Generator(FaceConvNet<T> net, ad::Var<T> output_scale);

  static Generator random(int embed_dim, std::mt19937_64& rng, int num_layers = 7);

  // Features and edge frames come from vertices + noise; the per-face local
  // displacement u_f is mapped through frame k and assigned to the vertex
  // opposite edge k; each vertex averages its contributions and the mean is
  // added to the clean vertices. Returns V x 3 positions.
  ad::Var<T> displace(const Mesh& mesh, const FaceTopology& topology, const ad::Matrix<T>& noise) const;
  Mesh forward(const Mesh& mesh, const ad::Matrix<T>& noise) const;

  const FaceConvNet<T>& net() const { return net_; }
  FaceConvNet<T>& net() { return net_; }
  const ad::Var<T>& output_scale() const { return output_scale_; }
  std::vector<ad::Var<T>> parameters() const;
  Generator clone() const;

 private:
  FaceConvNet<T> net_;
  ad::Var<T> output_scale_;  // 1 x 1, starts at 0.1
};

template <typename T>
class Discriminator {
 public:
  Discriminator() = default;
  explicit Discriminator(FaceConvNet<T> net) : net_(std::move(net)) {}

  static Discriminator random(int embed_dim, std::mt19937_64& rng, int num_layers = 7);

  // Unbounded per-face critic scores (F x 1).
  ad::Var<T> face_scores(const ad::Var<T>& vertices, const FaceTopology& topology) const;
  // Mean of face scores (1 x 1).
  ad::Var<T> critic(const ad::Var<T>& vertices, const FaceTopology& topology) const;
  std::vector<double> face_scores(const Mesh& mesh) const;

  const FaceConvNet<T>& net() const { return net_; }
  FaceConvNet<T>& net() { return net_; }
  std::vector<ad::Var<T>> parameters() const { return net_.parameters(); }
  Discriminator clone() const { return Discriminator(net_.clone()); }

 private:
  FaceConvNet<T> net_;
};

template <typename T>
ad::Matrix<T> vertex_matrix(const Mesh& mesh);
std::vector<Vec3> to_vertices(const ad::Matrix<float>& m);
std::vector<Vec3> to_vertices(const ad::Matrix<double>& m);

}  // namespace meshtex

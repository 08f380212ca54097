#include "meshtex/faceconv.hpp"

#include <cmath>

#include <fmt/format.h>

#include "meshtex/errors.hpp"
#include "meshtex/features.hpp"

namespace meshtex {

using ad::IndexList;
using ad::Matrix;
using ad::Var;

FaceTopology FaceTopology::from(const Connectivity& connectivity) {
  const std::size_t nf = connectivity.num_faces();
  std::vector<std::uint32_t> neighbors(3 * nf), face_of_row(3 * nf);
  std::array<std::vector<std::uint32_t>, 3> corner, face_vertex;
  std::vector<std::uint32_t> apex(3 * nf);
  for (auto& c : corner) c.resize(3 * nf);
  for (auto& c : face_vertex) c.resize(nf);
  for (std::size_t f = 0; f < nf; ++f) {
    const Face& face = connectivity.faces()[f];
    for (int k = 0; k < 3; ++k) {
      const std::size_t row = 3 * f + k;
      neighbors[row] = connectivity.adjacency()[f][k];
      face_of_row[row] = static_cast<std::uint32_t>(f);
      for (int c = 0; c < 3; ++c) corner[c][row] = face[(k + c) % 3];
      face_vertex[k][f] = face[k];
      apex[row] = neighbor_apex(connectivity, f, k);
    }
  }
  FaceTopology t;
  t.num_faces = nf;
  t.num_vertices = connectivity.num_vertices();
  t.neighbor_rows = ad::make_index(std::move(neighbors));
  t.face_of_row = ad::make_index(std::move(face_of_row));
  t.apex = ad::make_index(std::move(apex));
  for (int c = 0; c < 3; ++c) {
    t.corner[c] = ad::make_index(std::move(corner[c]));
    t.face_vertex[c] = ad::make_index(std::move(face_vertex[c]));
  }
  return t;
}

namespace {

const IndexList& cols_120() {
  static const IndexList idx = ad::make_index({1, 2, 0});
  return idx;
}
const IndexList& cols_201() {
  static const IndexList idx = ad::make_index({2, 0, 1});
  return idx;
}
const IndexList& splat(int c) {
  static const std::array<IndexList, 3> idx{ad::make_index({0, 0, 0}), ad::make_index({1, 1, 1}),
                                            ad::make_index({2, 2, 2})};
  return idx[c];
}

template <typename T>
Var<T> cross_rows(const Var<T>& a, const Var<T>& b) {
  return sub(mul(gather_cols(a, cols_120()), gather_cols(b, cols_201())),
             mul(gather_cols(a, cols_201()), gather_cols(b, cols_120())));
}

template <typename T>
Var<T> unit_rows(const Var<T>& a) {
  return div(a, sqrt(sum_cols(square(a))));
}

template <typename T>
Matrix<T> random_uniform(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix<T> m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<T>(dist(rng));
  return m;
}

template <typename T>
Var<T> activate(const Var<T>& x, const LayerParams<T>& p) {
  return leaky_relu(instance_norm(x, p.norm_gain, p.norm_shift, static_cast<T>(kNormEpsilon)),
                    static_cast<T>(kLeakySlope));
}

template <typename T>
Var<T> copy_leaf(const Var<T>& v) {
  return v.defined() ? Var<T>::parameter(v.value()) : Var<T>();
}

}  // namespace

template <typename T>
Var<T> feature_graph(const Var<T>& vertices, const FaceTopology& topology) {
  if (vertices.cols() != 3 || vertices.rows() != topology.num_vertices) {
    throw ShapeError(fmt::format("feature_graph: vertices are {}x{}, expected {}x3", vertices.rows(),
                                 vertices.cols(), topology.num_vertices));
  }
  const Var<T> p0 = gather_rows(vertices, topology.corner[0]);
  const Var<T> p1 = gather_rows(vertices, topology.corner[1]);
  const Var<T> edge = sub(p1, p0);
  const Var<T> length = sqrt(sum_cols(square(edge)));
  const Var<T> x = div(edge, length);

  const Var<T> f0 = gather_rows(vertices, topology.face_vertex[0]);
  const Var<T> f1 = gather_rows(vertices, topology.face_vertex[1]);
  const Var<T> f2 = gather_rows(vertices, topology.face_vertex[2]);
  const Var<T> z = gather_rows(unit_rows(cross_rows(sub(f1, f0), sub(f2, f0))), topology.face_of_row);
  const Var<T> y = cross_rows(z, x);

  const Var<T> d = sub(gather_rows(vertices, topology.apex), scale(add(p0, p1), T(0.5)));
  const std::array<Var<T>, 4> columns{length, sum_cols(mul(d, x)), sum_cols(mul(d, y)), sum_cols(mul(d, z))};
  return concat_cols(std::span<const Var<T>>(columns));
}

int embed_dim_for_level(int level) {
  if (level <= 0) return 32;
  if (level == 1) return 64;
  return 128;
}

template <typename T>
std::vector<Var<T>> LayerParams<T>::tensors() const {
  std::vector<Var<T>> out;
  for (const Var<T>* v : {&w_neighbors, &w_self, &bias, &norm_gain, &norm_shift}) {
    if (v->defined()) out.push_back(*v);
  }
  return out;
}

template <typename T>
Var<T> face_embedding(const Var<T>& features, const LayerParams<T>& params) {
  if (features.cols() != static_cast<std::size_t>(kFeatureColumns) || features.rows() % 3 != 0) {
    throw ShapeError(fmt::format("face_embedding: features are {}x{}, expected 3F x 4", features.rows(),
                                 features.cols()));
  }
  return group_max(add(matmul(features, params.w_neighbors), params.bias), 3);
}

template <typename T>
Var<T> face_conv(const Var<T>& embeddings, const FaceTopology& topology, const LayerParams<T>& params) {
  if (embeddings.rows() != topology.num_faces) {
    throw ShapeError(fmt::format("face_conv: {} embeddings for {} faces", embeddings.rows(), topology.num_faces));
  }
  const Var<T> neighbor_term = matmul(gather_rows(embeddings, topology.neighbor_rows), params.w_neighbors);
  const Var<T> self_term = add(matmul(embeddings, params.w_self), params.bias);
  return group_max(add(neighbor_term, gather_rows(self_term, topology.face_of_row)), 3);
}

template <typename T>
FaceConvNet<T>::FaceConvNet(NetworkConfig config, std::vector<LayerParams<T>> layers)
    : config_(config), layers_(std::move(layers)) {
  if (config_.num_layers < 2 || config_.embed_dim <= 0 || config_.output_dim <= 0) {
    throw ShapeError("network needs at least 2 layers and positive widths");
  }
  if (layers_.size() != static_cast<std::size_t>(config_.num_layers)) {
    throw ShapeError(fmt::format("expected {} layers, got {}", config_.num_layers, layers_.size()));
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& p = layers_[l];
    const bool head = l + 1 == layers_.size();
    const std::size_t d_in = l == 0 ? kFeatureColumns : config_.embed_dim;
    const std::size_t d_out = head ? config_.output_dim : config_.embed_dim;
    const bool ok = p.w_neighbors.defined() && p.w_neighbors.rows() == d_in && p.w_neighbors.cols() == d_out &&
                    (l == 0) == !p.w_self.defined() &&
                    (l == 0 || (p.w_self.rows() == d_in && p.w_self.cols() == d_out)) && p.bias.defined() &&
                    p.bias.rows() == 1 && p.bias.cols() == d_out && head == !p.norm_gain.defined() &&
                    (head || (p.norm_gain.cols() == d_out && p.norm_shift.defined() && p.norm_shift.cols() == d_out));
    if (!ok) throw ShapeError(fmt::format("layer {} parameters do not match the layer schedule", l));
  }
}

template <typename T>
FaceConvNet<T> FaceConvNet<T>::random(const NetworkConfig& config, std::mt19937_64& rng) {
  std::vector<LayerParams<T>> layers;
  for (int l = 0; l < config.num_layers; ++l) {
    const bool head = l + 1 == config.num_layers;
    const std::size_t d_in = l == 0 ? kFeatureColumns : config.embed_dim;
    const std::size_t d_out = head ? config.output_dim : config.embed_dim;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
    LayerParams<T> p;
    p.w_neighbors = Var<T>::parameter(random_uniform<T>(d_in, d_out, bound, rng));
    if (l > 0) p.w_self = Var<T>::parameter(random_uniform<T>(d_in, d_out, bound, rng));
    p.bias = Var<T>::parameter(random_uniform<T>(1, d_out, bound, rng));
    if (!head) {
      p.norm_gain = Var<T>::parameter(Matrix<T>(1, d_out, T(1)));
      p.norm_shift = Var<T>::parameter(Matrix<T>(1, d_out, T(0)));
    }
    layers.push_back(std::move(p));
  }
  return FaceConvNet(config, std::move(layers));
}

template <typename T>
Var<T> FaceConvNet<T>::forward(const Var<T>& features, const FaceTopology& topology) const {
  Var<T> h = face_embedding(features, layers_.front());
  if (!layers_.front().is_head()) h = activate(h, layers_.front());
  for (std::size_t l = 1; l < layers_.size(); ++l) {
    h = face_conv(h, topology, layers_[l]);
    if (!layers_[l].is_head()) h = activate(h, layers_[l]);
  }
  return h;
}

template <typename T>
std::vector<Var<T>> FaceConvNet<T>::parameters() const {
  std::vector<Var<T>> out;
  for (const auto& layer : layers_) {
    for (auto& t : layer.tensors()) out.push_back(t);
  }
  return out;
}

template <typename T>
FaceConvNet<T> FaceConvNet<T>::clone() const {
  std::vector<LayerParams<T>> layers;
  for (const auto& p : layers_) {
    layers.push_back({copy_leaf(p.w_neighbors), copy_leaf(p.w_self), copy_leaf(p.bias), copy_leaf(p.norm_gain),
                      copy_leaf(p.norm_shift)});
  }
  return FaceConvNet(config_, std::move(layers));
}

template <typename T>
Generator<T>::Generator(FaceConvNet<T> net, Var<T> output_scale)
    : net_(std::move(net)), output_scale_(std::move(output_scale)) {
  if (net_.config().output_dim != 3) throw ShapeError("generator head must output 3 values per face");
  if (!output_scale_.defined() || output_scale_.rows() != 1 || output_scale_.cols() != 1) {
    throw ShapeError("generator output scale must be 1x1");
  }
}

template <typename T>
Generator<T> Generator<T>::random(int embed_dim, std::mt19937_64& rng, int num_layers) {
  return Generator(FaceConvNet<T>::random({num_layers, embed_dim, 3}, rng),
                   Var<T>::parameter(Matrix<T>(1, 1, T(0.1))));
}

template <typename T>
Var<T> Generator<T>::displace(const Mesh& mesh, const FaceTopology& topology, const Matrix<T>& noise) const {
  const std::size_t nv = mesh.num_vertices();
  if (noise.rows() != nv || noise.cols() != 3) {
    throw ShapeError(fmt::format("generator noise is {}x{}, expected {}x3", noise.rows(), noise.cols(), nv));
  }
  std::vector<Vec3> noisy(mesh.vertices());
  for (std::size_t v = 0; v < nv; ++v) {
    noisy[v] += Vec3{static_cast<double>(noise(v, 0)), static_cast<double>(noise(v, 1)),
                     static_cast<double>(noise(v, 2))};
  }
  const auto frames = edge_frames(noisy, mesh.faces());
  const FaceFeatureTensor s = features_from_frames(noisy, mesh.connectivity(), frames);

  const std::size_t rows = 3 * mesh.num_faces();
  Matrix<T> features(rows, kFeatureColumns);
  for (std::size_t i = 0; i < features.size(); ++i) features[i] = static_cast<T>(s.values()[i]);
  std::array<Matrix<T>, 3> axes{Matrix<T>(rows, 3), Matrix<T>(rows, 3), Matrix<T>(rows, 3)};
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
    for (int k = 0; k < 3; ++k) {
      const EdgeFrame& fr = frames[f][k];
      for (int c = 0; c < 3; ++c) {
        axes[0](3 * f + k, c) = static_cast<T>(fr.x_axis[c]);
        axes[1](3 * f + k, c) = static_cast<T>(fr.y_axis[c]);
        axes[2](3 * f + k, c) = static_cast<T>(fr.z_axis[c]);
      }
    }
  }

  const Var<T> local = mul(net_.forward(Var<T>::constant(std::move(features)), topology), output_scale_);
  const Var<T> per_row = gather_rows(local, topology.face_of_row);
  Var<T> world;
  for (int c = 0; c < 3; ++c) {
    Var<T> term = mul(gather_cols(per_row, splat(c)), Var<T>::constant(std::move(axes[c])));
    world = world.defined() ? add(world, term) : term;
  }
  const Var<T> displacement = scatter_mean_rows(world, topology.corner[2], nv);
  return add(Var<T>::constant(vertex_matrix<T>(mesh)), displacement);
}

template <typename T>
Mesh Generator<T>::forward(const Mesh& mesh, const Matrix<T>& noise) const {
  ad::NoGradGuard no_grad;
  const Var<T> out = displace(mesh, FaceTopology::from(mesh.connectivity()), noise);
  return mesh.with_vertices(to_vertices(out.value()));
}

template <typename T>
std::vector<Var<T>> Generator<T>::parameters() const {
  auto out = net_.parameters();
  out.push_back(output_scale_);
  return out;
}

template <typename T>
Generator<T> Generator<T>::clone() const {
  return Generator(net_.clone(), Var<T>::parameter(output_scale_.value()));
}

template <typename T>
Discriminator<T> Discriminator<T>::random(int embed_dim, std::mt19937_64& rng, int num_layers) {
  return Discriminator(FaceConvNet<T>::random({num_layers, embed_dim, 1}, rng));
}

template <typename T>
Var<T> Discriminator<T>::face_scores(const Var<T>& vertices, const FaceTopology& topology) const {
  return net_.forward(feature_graph(vertices, topology), topology);
}

template <typename T>
Var<T> Discriminator<T>::critic(const Var<T>& vertices, const FaceTopology& topology) const {
  return mean(face_scores(vertices, topology));
}

template <typename T>
std::vector<double> Discriminator<T>::face_scores(const Mesh& mesh) const {
  ad::NoGradGuard no_grad;
  const Var<T> scores =
      face_scores(Var<T>::constant(vertex_matrix<T>(mesh)), FaceTopology::from(mesh.connectivity()));
  std::vector<double> out(scores.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(scores.value()[i]);
  return out;
}

template <typename T>
Matrix<T> vertex_matrix(const Mesh& mesh) {
  Matrix<T> m(mesh.num_vertices(), 3);
  for (std::size_t v = 0; v < mesh.num_vertices(); ++v) {
    for (int c = 0; c < 3; ++c) m(v, c) = static_cast<T>(mesh.vertices()[v][c]);
  }
  return m;
}

namespace {
template <typename T>
std::vector<Vec3> to_vertices_impl(const Matrix<T>& m) {
  std::vector<Vec3> out(m.rows());
  for (std::size_t v = 0; v < m.rows(); ++v) {
    out[v] = {static_cast<double>(m(v, 0)), static_cast<double>(m(v, 1)), static_cast<double>(m(v, 2))};
  }
  return out;
}
}  // namespace

std::vector<Vec3> to_vertices(const Matrix<float>& m) { return to_vertices_impl(m); }
std::vector<Vec3> to_vertices(const Matrix<double>& m) { return to_vertices_impl(m); }

#define MESHTEX_NET_INSTANTIATE(T)                                                         \
  template Var<T> feature_graph(const Var<T>&, const FaceTopology&);                      \
  template struct LayerParams<T>;                                                         \
  template Var<T> face_embedding(const Var<T>&, const LayerParams<T>&);                   \
  template Var<T> face_conv(const Var<T>&, const FaceTopology&, const LayerParams<T>&);   \
  template class FaceConvNet<T>;                                                          \
  template class Generator<T>;                                                            \
  template class Discriminator<T>;                                                        \
  template Matrix<T> vertex_matrix(const Mesh&);

MESHTEX_NET_INSTANTIATE(float)
MESHTEX_NET_INSTANTIATE(double)

}  // namespace meshtex

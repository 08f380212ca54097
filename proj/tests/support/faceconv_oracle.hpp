#pragma once

#include <random>

#include "meshtex/faceconv.hpp"
#include "meshtex/mesh.hpp"

namespace meshtex::testing {

inline ad::Matrix<double> gaussian_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  ad::Matrix<double> m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = g(rng);
  return m;
}

inline LayerParams<double> conv_params(std::size_t d_in, std::size_t d_out, std::mt19937_64& rng) {
  LayerParams<double> p;
  p.w_neighbors = ad::Var<double>::parameter(gaussian_matrix(d_in, d_out, rng));
  p.w_self = ad::Var<double>::parameter(gaussian_matrix(d_in, d_out, rng));
  p.bias = ad::Var<double>::parameter(gaussian_matrix(1, d_out, rng));
  return p;
}

// Per-face loop in the same accumulation order as the batched kernels.
inline ad::Matrix<double> naive_face_conv(const ad::Matrix<double>& e, const Mesh& mesh, const LayerParams<double>& p) {
  const ad::Matrix<double>& ws = p.w_neighbors.value();
  const ad::Matrix<double>& wf = p.w_self.value();
  const ad::Matrix<double>& b = p.bias.value();
  const std::size_t d_in = e.cols(), d_out = ws.cols();
  ad::Matrix<double> out(mesh.num_faces(), d_out);
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
    for (std::size_t j = 0; j < d_out; ++j) {
      double self = 0.0;
      for (std::size_t i = 0; i < d_in; ++i) self += e(f, i) * wf(i, j);
      self = self + b(0, j);
      double best = 0.0;
      for (int k = 0; k < 3; ++k) {
        const std::size_t n = mesh.adjacency()[f][k];
        double acc = 0.0;
        for (std::size_t i = 0; i < d_in; ++i) acc += e(n, i) * ws(i, j);
        const double value = acc + self;
        if (k == 0 || value > best) best = value;
      }
      out(f, j) = best;
    }
  }
  return out;
}

}  // namespace meshtex::testing

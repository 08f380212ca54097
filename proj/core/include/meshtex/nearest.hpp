#pragma once

// Exact nearest-neighbor queries over a fixed point set. Small sets use a
// linear scan; large sets bucket points into a uniform grid and search shells
// outward. Both return the lowest index among equidistant points, so the two
// strategies agree exactly.

#include <cstdint>
#include <span>
#include <vector>

#include "meshtex/vec3.hpp"

namespace meshtex {

class NearestNeighbors {
 public:
  enum class Strategy { automatic, brute_force, grid };
  static constexpr std::size_t kGridThreshold = 20000;

  explicit NearestNeighbors(std::span<const Vec3> points, Strategy strategy = Strategy::automatic);

  bool uses_grid() const { return use_grid_; }
  std::size_t size() const { return xs_.size(); }
  std::uint32_t nearest(const Vec3& query) const;
  // One result per query; parallel over queries.
  std::vector<std::uint32_t> nearest_all(std::span<const Vec3> queries) const;

 private:
  std::uint32_t brute_force(const Vec3& q) const;
  std::uint32_t grid_search(const Vec3& q) const;

  std::vector<double> xs_, ys_, zs_;
  bool use_grid_ = false;
  Vec3 lo_;
  double cell_ = 1.0;
  int dims_[3] = {1, 1, 1};
  std::vector<std::uint32_t> cell_start_;  // CSR over cells
  std::vector<std::uint32_t> cell_points_;
};

}  // namespace meshtex

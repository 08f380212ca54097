#include "meshtex/nearest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "meshtex/autodiff.hpp"
#include "meshtex/errors.hpp"

namespace meshtex {

namespace {

inline double dist2(double x, double y, double z, const Vec3& q) {
  const double dx = x - q.x, dy = y - q.y, dz = z - q.z;
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace

NearestNeighbors::NearestNeighbors(std::span<const Vec3> points, Strategy strategy) {
  if (points.empty()) throw ShapeError("nearest-neighbor index over an empty point set");
  xs_.reserve(points.size());
  ys_.reserve(points.size());
  zs_.reserve(points.size());
  for (const Vec3& p : points) {
    xs_.push_back(p.x);
    ys_.push_back(p.y);
    zs_.push_back(p.z);
  }
  use_grid_ = strategy == Strategy::grid || (strategy == Strategy::automatic && points.size() >= kGridThreshold);
  if (!use_grid_) return;

  Vec3 hi = points[0];
  lo_ = points[0];
  for (const Vec3& p : points) {
    lo_ = {std::min(lo_.x, p.x), std::min(lo_.y, p.y), std::min(lo_.z, p.z)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
  }
  const Vec3 extent = hi - lo_;
  const double largest = std::max({extent.x, extent.y, extent.z});
  // Points sit on a surface, so aim for about sqrt(n) cells along the
  // largest axis and a few points per occupied cell.
  const double target = std::max(1.0, std::sqrt(static_cast<double>(points.size()) / 4.0));
  cell_ = largest > 0.0 ? largest / target : 1.0;
  const double ext[3] = {extent.x, extent.y, extent.z};
  for (int a = 0; a < 3; ++a) dims_[a] = std::clamp(static_cast<int>(ext[a] / cell_) + 1, 1, 1024);

  auto cell_of = [&](std::size_t i) {
    int c[3];
    const double p[3] = {xs_[i] - lo_.x, ys_[i] - lo_.y, zs_[i] - lo_.z};
    for (int a = 0; a < 3; ++a) c[a] = std::clamp(static_cast<int>(p[a] / cell_), 0, dims_[a] - 1);
    return (static_cast<std::size_t>(c[2]) * dims_[1] + c[1]) * dims_[0] + c[0];
  };
  const std::size_t num_cells = static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
  cell_start_.assign(num_cells + 1, 0);
  std::vector<std::size_t> cell_index(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    cell_index[i] = cell_of(i);
    ++cell_start_[cell_index[i] + 1];
  }
  for (std::size_t c = 0; c < num_cells; ++c) cell_start_[c + 1] += cell_start_[c];
  cell_points_.resize(points.size());
  std::vector<std::uint32_t> cursor(cell_start_.begin(), cell_start_.end() - 1);
  for (std::size_t i = 0; i < points.size(); ++i) cell_points_[cursor[cell_index[i]]++] = static_cast<std::uint32_t>(i);
}

std::uint32_t NearestNeighbors::nearest(const Vec3& query) const {
  return use_grid_ ? grid_search(query) : brute_force(query);
}

std::vector<std::uint32_t> NearestNeighbors::nearest_all(std::span<const Vec3> queries) const {
  std::vector<std::uint32_t> out(queries.size());
  const auto n = static_cast<std::ptrdiff_t>(queries.size());
  [[maybe_unused]] const int threads = ad::num_threads();
#pragma omp parallel for num_threads(threads) schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = nearest(queries[i]);
  return out;
}

std::uint32_t NearestNeighbors::brute_force(const Vec3& q) const {
  double best = std::numeric_limits<double>::infinity();
  std::uint32_t best_index = 0;
  const std::size_t n = xs_.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double d = dist2(xs_[i], ys_[i], zs_[i], q);
    if (d < best) {
      best = d;
      best_index = static_cast<std::uint32_t>(i);
    }
  }
  return best_index;
}

std::uint32_t NearestNeighbors::grid_search(const Vec3& q) const {
  const double rel[3] = {q.x - lo_.x, q.y - lo_.y, q.z - lo_.z};
  int center[3];
  for (int a = 0; a < 3; ++a) {
    center[a] = std::clamp(static_cast<int>(std::floor(rel[a] / cell_)), 0, dims_[a] - 1);
  }
  double best = std::numeric_limits<double>::infinity();
  std::uint32_t best_index = std::numeric_limits<std::uint32_t>::max();
  const int max_radius = std::max({dims_[0], dims_[1], dims_[2]});
  for (int r = 0; r <= max_radius; ++r) {
    for (int z = center[2] - r; z <= center[2] + r; ++z) {
      if (z < 0 || z >= dims_[2]) continue;
      for (int y = center[1] - r; y <= center[1] + r; ++y) {
        if (y < 0 || y >= dims_[1]) continue;
        const bool inner = std::abs(z - center[2]) < r && std::abs(y - center[1]) < r;
        // Only the shell: interior rows contribute their two end cells.
        const int step = inner ? 2 * r : 1;
        for (int x = center[0] - r; x <= center[0] + r; x += std::max(step, 1)) {
          if (x < 0 || x >= dims_[0]) continue;
          const std::size_t cell = (static_cast<std::size_t>(z) * dims_[1] + y) * dims_[0] + x;
          for (std::uint32_t k = cell_start_[cell]; k < cell_start_[cell + 1]; ++k) {
            const std::uint32_t i = cell_points_[k];
            const double d = dist2(xs_[i], ys_[i], zs_[i], q);
            if (d < best || (d == best && i < best_index)) {
              best = d;
              best_index = i;
            }
          }
        }
      }
    }
    // Any point outside the searched block is at least `bound` away.
    double bound = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
      if (center[a] - r > 0) bound = std::min(bound, rel[a] - (center[a] - r) * cell_);
      if (center[a] + r < dims_[a] - 1) bound = std::min(bound, (center[a] + r + 1) * cell_ - rel[a]);
    }
    if (bound == std::numeric_limits<double>::infinity()) break;  // block covers the grid
    bound *= 1.0 - 1e-12;  // cell assignment rounds p / cell
    if (bound > 0.0 && best < bound * bound) break;
  }
  return best_index;
}

}  // namespace meshtex

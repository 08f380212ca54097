#include "meshtex/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

#include "meshtex/errors.hpp"
#include "meshtex/subdivision.hpp"

namespace meshtex::shapes {

namespace {

double signed_volume(std::span<const Vec3> v, std::span<const Face> faces) {
  double vol = 0.0;
  for (const Face& f : faces) vol += dot(v[f[0]], cross(v[f[1]], v[f[2]]));
  return vol / 6.0;
}

Mesh oriented(std::vector<Vec3> vertices, std::vector<Face> faces) {
  if (signed_volume(vertices, faces) < 0.0) {
    for (Face& f : faces) std::swap(f[1], f[2]);
  }
  return Mesh(std::move(vertices), std::move(faces));
}

Mesh radial(const Mesh& sphere, const std::function<double(Vec3)>& radius_of) {
  std::vector<Vec3> out;
  out.reserve(sphere.num_vertices());
  for (const Vec3& v : sphere.vertices()) {
    const Vec3 dir = normalized(v);
    out.push_back(dir * radius_of(dir));
  }
  return sphere.with_vertices(std::move(out));
}

}  // namespace

double signed_volume(const Mesh& mesh) { return signed_volume(mesh.vertices(), mesh.faces()); }

Mesh tetrahedron(double edge) {
  const double s = edge / (2.0 * std::numbers::sqrt2);
  std::vector<Vec3> v{{s, s, s}, {s, -s, -s}, {-s, s, -s}, {-s, -s, s}};
  return oriented(std::move(v), {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}});
}

Mesh icosahedron(double edge) {
  const double p = std::numbers::phi;
  const double s = edge / 2.0;
  std::vector<Vec3> v{{-1, p, 0}, {1, p, 0}, {-1, -p, 0}, {1, -p, 0}, {0, -1, p},  {0, 1, p},
                      {0, -1, -p}, {0, 1, -p}, {p, 0, -1}, {p, 0, 1},  {-p, 0, -1}, {-p, 0, 1}};
  for (Vec3& x : v) x = x * s;
  std::vector<Face> f{{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                      {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                      {3, 8, 9},   {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  return oriented(std::move(v), std::move(f));
}

Mesh icosphere(int levels, double radius) {
  if (levels < 0) throw ShapeError("icosphere levels must be non-negative");
  Mesh mesh = icosahedron();
  for (int i = 0; i < levels; ++i) mesh = uniform_subdivide(mesh, false).mesh;
  return radial(mesh, [radius](Vec3) { return radius; });
}

Mesh ellipsoid(int levels, Vec3 semi_axes) {
  const Mesh sphere = icosphere(levels, 1.0);
  std::vector<Vec3> out;
  out.reserve(sphere.num_vertices());
  for (const Vec3& v : sphere.vertices()) out.push_back({v.x * semi_axes.x, v.y * semi_axes.y, v.z * semi_axes.z});
  return sphere.with_vertices(std::move(out));
}

Mesh torus(double major_radius, double minor_radius, int rings, int sides) {
  if (rings < 3 || sides < 3) throw ShapeError("torus needs at least 3 rings and 3 sides");
  std::vector<Vec3> v;
  v.reserve(static_cast<std::size_t>(rings * sides));
  for (int i = 0; i < rings; ++i) {
    const double theta = 2.0 * std::numbers::pi * i / rings;
    for (int j = 0; j < sides; ++j) {
      const double phi = 2.0 * std::numbers::pi * j / sides;
      const double r = major_radius + minor_radius * std::cos(phi);
      v.push_back({r * std::cos(theta), r * std::sin(theta), minor_radius * std::sin(phi)});
    }
  }
  std::vector<Face> f;
  f.reserve(static_cast<std::size_t>(2 * rings * sides));
  auto id = [&](int i, int j) { return static_cast<Index>(((i + rings) % rings) * sides + (j + sides) % sides); };
  for (int i = 0; i < rings; ++i) {
    for (int j = 0; j < sides; ++j) {
      const Index a = id(i, j), b = id(i + 1, j), c = id(i + 1, j + 1), d = id(i, j + 1);
      f.push_back({a, b, c});
      f.push_back({a, c, d});
    }
  }
  return oriented(std::move(v), std::move(f));
}

Mesh bumpy_sphere(int levels, double amplitude, double frequency) {
  return radial(icosphere(levels), [=](Vec3 d) {
    return 1.0 + amplitude * std::sin(frequency * d.x) * std::sin(frequency * d.y) * std::sin(frequency * d.z);
  });
}

Mesh spiky_ball(int levels, double spike_height, double spike_width) {
  const Mesh ico = icosahedron();
  std::vector<Vec3> dirs;
  for (const Vec3& v : ico.vertices()) dirs.push_back(normalized(v));
  return radial(icosphere(levels), [&](Vec3 d) {
    double r = 1.0;
    for (const Vec3& s : dirs) {
      const double angle = std::acos(std::clamp(dot(d, s), -1.0, 1.0));
      r += spike_height * std::exp(-(angle * angle) / (spike_width * spike_width));
    }
    return r;
  });
}

}  // namespace meshtex::shapes

#pragma once

// Procedural closed meshes used as remeshing templates, test fixtures and
// smoke-run references. All are outward oriented (positive signed volume).

#include <cstdint>

#include "meshtex/mesh.hpp"

namespace meshtex::shapes {

Mesh tetrahedron(double edge = 1.0);
Mesh icosahedron(double edge = 1.0);
// Icosahedron subdivided `levels` times with vertices projected to the sphere.
Mesh icosphere(int levels, double radius = 1.0);
Mesh ellipsoid(int levels, Vec3 semi_axes);
// Genus-1 ring; `rings` around the main axis, `sides` around the tube.
Mesh torus(double major_radius, double minor_radius, int rings, int sides);
// Sphere with smooth radial bumps: r = 1 + amplitude * sin(f x) sin(f y) sin(f z).
Mesh bumpy_sphere(int levels, double amplitude, double frequency);
// Sphere with Gaussian spikes along the 12 icosahedron vertex directions.
Mesh spiky_ball(int levels, double spike_height, double spike_width);

double signed_volume(const Mesh& mesh);

}  // namespace meshtex::shapes

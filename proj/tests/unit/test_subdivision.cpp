#include <gtest/gtest.h>

#include <set>

#include "meshtex/shapes.hpp"
#include "meshtex/subdivision.hpp"
#include "test_support.hpp"

namespace mt = meshtex;

TEST(Subdivision, IcosahedronCounts) {
  const auto out = mt::uniform_subdivide(mt::shapes::icosahedron(), false);
  EXPECT_EQ(mt::mesh_stats(out.mesh), (mt::MeshStats{42, 120, 80, 2, 0}));
  EXPECT_EQ(out.map.parent_face.size(), 80u);
  EXPECT_EQ(out.map.midpoint_of.size(), 30u);
}

TEST(Subdivision, TetrahedronCounts) {
  const auto out = mt::uniform_subdivide(mt::shapes::tetrahedron(), false);
  EXPECT_EQ(out.mesh.num_vertices(), 10u);
  EXPECT_EQ(out.mesh.num_faces(), 16u);
}

TEST(Subdivision, ConnectivityIndependentOfPositions) {
  const mt::Mesh a = mt::shapes::icosphere(1);
  const mt::Mesh b = mt::shapes::ellipsoid(1, {1, 2, 3});
  ASSERT_EQ(a.faces(), b.faces());
  EXPECT_EQ(mt::uniform_subdivide(a, false).mesh.faces(), mt::uniform_subdivide(b, true).mesh.faces());
  EXPECT_TRUE(mt::subdivide_connectivity(a.connectivity())->same_faces(mt::uniform_subdivide(a, false).mesh.connectivity()));
}

TEST(Subdivision, ChildOrderAndExactMidpoints) {
  const mt::Mesh tet = mt::shapes::tetrahedron();
  const auto out = mt::uniform_subdivide(tet, false);
  auto mid = [&](mt::Index a, mt::Index b) {
    for (const auto& m : out.map.midpoint_of) {
      if (m[0] == std::min(a, b) && m[1] == std::max(a, b)) return m[2];
    }
    ADD_FAILURE() << "missing midpoint";
    return mt::Index{0};
  };
  for (std::size_t f = 0; f < tet.num_faces(); ++f) {
    const auto [v0, v1, v2] = tet.faces()[f];
    const mt::Index m01 = mid(v0, v1), m12 = mid(v1, v2), m20 = mid(v2, v0);
    EXPECT_EQ(out.mesh.faces()[4 * f + 0], (mt::Face{v0, m01, m20}));
    EXPECT_EQ(out.mesh.faces()[4 * f + 1], (mt::Face{v1, m12, m01}));
    EXPECT_EQ(out.mesh.faces()[4 * f + 2], (mt::Face{v2, m20, m12}));
    EXPECT_EQ(out.mesh.faces()[4 * f + 3], (mt::Face{m01, m12, m20}));
    for (int c = 0; c < 4; ++c) EXPECT_EQ(out.map.parent_face[4 * f + c], f);
  }
  for (const auto& m : out.map.midpoint_of) {
    const mt::Vec3 expected = (tet.vertices()[m[0]] + tet.vertices()[m[1]]) * 0.5;
    EXPECT_EQ(out.mesh.vertices()[m[2]], expected);
  }
}

TEST(Subdivision, EulerCharacteristicAndRescale) {
  for (const mt::Mesh& m : {mt::shapes::icosahedron(), mt::shapes::torus(2.0, 0.6, 9, 6),
                            mt::shapes::bumpy_sphere(1, 0.2, 3.0)}) {
    const auto plain = mt::uniform_subdivide(m, false);
    EXPECT_EQ(mt::mesh_stats(plain.mesh).euler_characteristic, mt::mesh_stats(m).euler_characteristic);
    EXPECT_LE(plain.mesh.num_vertices(), m.num_vertices() + m.num_edges());
    const auto scaled = mt::uniform_subdivide(m, true);
    const double before = mt::mean_edge_length(m);
    EXPECT_LT(std::abs(mt::mean_edge_length(scaled.mesh) - before), 1e-9 * before);
    // Plain midpoint subdivision halves every edge.
    EXPECT_NEAR(mt::mean_edge_length(plain.mesh), 0.5 * before, 1e-12 * before);
  }
}

TEST(Subdivision, RepeatedLevelsGiveFourToTheLFaces) {
  mt::Mesh m = mt::shapes::icosahedron();
  for (int level = 1; level <= 3; ++level) {
    m = mt::uniform_subdivide(m, true).mesh;
    EXPECT_EQ(m.num_faces(), 20u * (1u << (2 * level)));
    EXPECT_EQ(mt::mesh_stats(m).genus, 0);
  }
}

TEST(Subdivision, FaceRelabelKeepsVertexNumbering) {
  std::mt19937_64 rng(21);
  const mt::Mesh m = mt::shapes::torus(1.0, 0.4, 8, 5);
  const auto perm = mt::testing::random_permutation(m.num_faces(), rng);
  const auto a = mt::uniform_subdivide(m, false);
  const auto b = mt::uniform_subdivide(mt::testing::permute_faces(m, perm), false);
  EXPECT_EQ(a.mesh.vertices(), b.mesh.vertices());
  EXPECT_EQ(a.map.midpoint_of, b.map.midpoint_of);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    for (int c = 0; c < 4; ++c) EXPECT_EQ(b.mesh.faces()[4 * i + c], a.mesh.faces()[4 * perm[i] + c]);
  }
}

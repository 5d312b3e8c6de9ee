#include "softocc/mesh_builders.hpp"

#include <gtest/gtest.h>

#include <filesystem>

namespace {

using namespace softocc;

// Independent references: segment/plane decomposition for point-triangle
// distance and the generalized winding number for containment.
double seg_dist(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (a + t * ab - p).norm();
}

double tri_dist(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 n = (b - a).cross(c - a).normalized();
  const Vec3 proj = p - (p - a).dot(n) * n;
  const double s1 = (b - a).cross(proj - a).dot(n);
  const double s2 = (c - b).cross(proj - b).dot(n);
  const double s3 = (a - c).cross(proj - c).dot(n);
  if ((s1 >= 0 && s2 >= 0 && s3 >= 0) || (s1 <= 0 && s2 <= 0 && s3 <= 0)) return std::abs((p - a).dot(n));
  return std::min({seg_dist(p, a, b), seg_dist(p, b, c), seg_dist(p, c, a)});
}

double winding_number(const TriMesh& m, const Vec3& p) {
  double total = 0;
  for (const auto& t : m.triangles) {
    const Vec3 a = m.vertices[t[0]] - p, b = m.vertices[t[1]] - p, c = m.vertices[t[2]] - p;
    const double la = a.norm(), lb = b.norm(), lc = c.norm();
    const double num = a.dot(b.cross(c));
    const double den = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
    total += 2.0 * std::atan2(num, den);
  }
  return total / (4.0 * kPi);
}

double oracle_distance(const SegmentedObject& o, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : o.segments())
    for (const auto& t : s.mesh.triangles)
      best = std::min(best, tri_dist(p, s.mesh.vertices[t[0]], s.mesh.vertices[t[1]], s.mesh.vertices[t[2]]));
  return best;
}

int oracle_label(const SegmentedObject& o, const Vec3& p) {
  for (int id = o.num_segments(); id >= 1; --id)
    if (winding_number(o.segment(id).mesh, p) > 0.5) return id;
  return 0;
}

SegmentedObject unit_sphere(int level = 4) { return SegmentedObject({{1, mesh::icosphere(level)}}); }

SegmentedObject nested_spheres() {
  return SegmentedObject({{1, mesh::icosphere(3, 1.0)}, {2, mesh::icosphere(2, 0.2)}});
}

std::vector<SegmentedObject> test_objects() {
  std::vector<SegmentedObject> out;
  out.push_back(nested_spheres());
  out.push_back(SegmentedObject({{1, mesh::box(Vec3(-1, -0.5, -0.3), Vec3(1, 0.5, 0.3), {6, 4, 3})}}));
  out.push_back(SegmentedObject({{1, mesh::cylinder(0.5, 1.5, 24, 8, 3)}, {2, mesh::icosphere(1, 0.1, Vec3(0.1, 0, 0.7))}}));
  return out;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("softocc_geometry_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

TEST(SignedDistance, UnitSphereCenterAndOutside) {
  const auto s = unit_sphere();
  EXPECT_NEAR(s.signed_distance(Vec3::Zero()), -1.0, 0.01);
  EXPECT_NEAR(s.signed_distance(Vec3(2, 0, 0)), 1.0, 0.01);
}

TEST(SignedDistance, IcosphereInteriorPointMatchesBruteForceOracle) {
  const auto s = unit_sphere(3);
  const Vec3 q(0.5, 0, 0);
  const double d = s.signed_distance(q);
  EXPECT_NEAR(d, -0.5, 0.01);
  EXPECT_NEAR(d, -oracle_distance(s, q), 1e-12);
  EXPECT_EQ(oracle_label(s, q), 1);
}

TEST(OccupancyLabel, NestedSpheres) {
  const auto o = nested_spheres();
  EXPECT_EQ(o.occupancy_label(Vec3(0, 0, 0)), 2);
  EXPECT_EQ(o.occupancy_label(Vec3(0.5, 0, 0)), 1);
  EXPECT_EQ(o.occupancy_label(Vec3(3, 0, 0)), 0);
}

TEST(SignedDistance, InsideRoiUsesNearestOfAllSurfaces) {
  const auto o = nested_spheres();
  const double d = o.signed_distance(Vec3(0.05, 0, 0));
  EXPECT_LT(d, 0);
  EXPECT_NEAR(-d, oracle_distance(o, Vec3(0.05, 0, 0)), 1e-12);
  EXPECT_LT(-d, 0.2);
}

TEST(SignedDistance, AcceleratedQueriesMatchOracles) {
  for (const auto& o : test_objects()) {
    const Aabb box = o.bounds().enlarged(0.2);
    Rng rng(21);
    for (int i = 0; i < 300; ++i) {
      const Vec3 q = rng.uniform_in_box(box.lo, box.hi);
      const double ref = oracle_distance(o, q);
      ASSERT_NEAR(std::abs(o.signed_distance(q)), ref, 1e-12);
      ASSERT_EQ(o.signed_distance(q), signed_distance_brute(o, q));
      if (ref > 1e-6) ASSERT_EQ(o.occupancy_label(q), oracle_label(o, q)) << q.transpose();
    }
  }
}

TEST(SignedDistance, SignAgreesWithLabel) {
  for (const auto& o : test_objects()) {
    const Aabb box = o.bounds().enlarged(0.2);
    Rng rng(22);
    for (int i = 0; i < 10000; ++i) {
      const Vec3 q = rng.uniform_in_box(box.lo, box.hi);
      ASSERT_EQ(o.occupancy_label(q) > 0, o.signed_distance(q) < 0) << q.transpose();
    }
  }
}

TEST(SignedDistance, IsOneLipschitz) {
  const auto objects = test_objects();
  for (const auto& o : objects) {
    const Aabb box = o.bounds().enlarged(0.3);
    Rng rng(23);
    for (int i = 0; i < 2000; ++i) {
      const Vec3 a = rng.uniform_in_box(box.lo, box.hi);
      const Vec3 b = i % 2 ? rng.uniform_in_box(box.lo, box.hi) : Vec3(a + 0.05 * rng.unit_vector());
      ASSERT_LE(std::abs(o.signed_distance(a) - o.signed_distance(b)), (a - b).norm() + 1e-12);
    }
  }
}

TEST(SignedDistance, SurfacePointsResolveDeterministically) {
  const auto s = unit_sphere(2);
  const auto& m = s.segment(1).mesh;
  for (const auto& v : m.vertices) {
    const int a = s.occupancy_label(v);
    EXPECT_EQ(a, s.occupancy_label(v));
    EXPECT_NEAR(s.signed_distance(v), 0.0, 1e-12);
  }
}

TEST(Validation, RejectsDegenerateTriangle) {
  TriMesh m = mesh::icosphere(1);
  m.vertices.push_back(m.vertices[0]);
  const int dup = static_cast<int>(m.vertices.size()) - 1;
  m.triangles.push_back({0, dup, m.triangles[0][1]});
  EXPECT_THROW(SegmentedObject({{1, m}}), Error);
}

TEST(Validation, RejectsOpenMesh) {
  TriMesh m = mesh::icosphere(1);
  m.triangles.pop_back();
  EXPECT_THROW(SegmentedObject({{1, m}}), Error);
}

TEST(Validation, RejectsRoiOutsideBody) {
  EXPECT_THROW(SegmentedObject({{1, mesh::icosphere(2, 1.0)}, {2, mesh::icosphere(1, 0.2, Vec3(0.95, 0, 0))}}), Error);
}

TEST(Validation, RejectsNonConsecutiveIds) {
  EXPECT_THROW(SegmentedObject({{1, mesh::icosphere(2, 1.0)}, {3, mesh::icosphere(1, 0.2)}}), Error);
}

TEST(Normalize, CubeCornersInUnitScale) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 8; ++i) pts.emplace_back(2.0 * (i & 1), 2.0 * ((i >> 1) & 1), 2.0 * ((i >> 2) & 1));
  const auto c = normalize_cloud(pts);
  EXPECT_DOUBLE_EQ(c.normalization.scale, 1.0);
  EXPECT_TRUE(c.normalization.offset.isApprox(Vec3(-1, -1, -1)));
  for (const auto& p : c.normalized_points()) EXPECT_DOUBLE_EQ(p.cwiseAbs().minCoeff(), 1.0);
}

TEST(Normalize, LargerCubeHalvesScale) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 8; ++i) pts.emplace_back(4.0 * (i & 1), 4.0 * ((i >> 1) & 1), 4.0 * ((i >> 2) & 1));
  EXPECT_DOUBLE_EQ(normalize_cloud(pts).normalization.scale, 0.5);
}

TEST(Normalize, LongestAxisGovernsAnisotropicBox) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 8; ++i) pts.emplace_back(4.0 * (i & 1), 2.0 * ((i >> 1) & 1), 1.0 * ((i >> 2) & 1));
  const auto c = normalize_cloud(pts);
  EXPECT_DOUBLE_EQ(c.normalization.scale, 0.5);
  for (const auto& p : c.normalized_points()) {
    EXPECT_DOUBLE_EQ(std::abs(p.x()), 1.0);
    EXPECT_DOUBLE_EQ(std::abs(p.y()), 0.5);
    EXPECT_DOUBLE_EQ(std::abs(p.z()), 0.25);
  }
}

TEST(Normalize, MapsIntoUnitCubeAndInvertsExactly) {
  Rng rng(24);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vec3> pts;
    const Vec3 center = 5.0 * rng.uniform_in_box(Vec3::Constant(-1), Vec3::Constant(1));
    const Vec3 extent(rng.uniform(0.01, 2), rng.uniform(0.01, 2), rng.uniform(0.01, 2));
    for (int i = 0; i < 100; ++i) pts.push_back(center + rng.uniform_in_box(-extent, extent));
    const auto c = normalize_cloud(pts);
    EXPECT_GT(c.normalization.scale, 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Vec3 n = c.normalization.to_normalized(pts[i]);
      ASSERT_LE(n.cwiseAbs().maxCoeff(), 1.0 + 1e-12);
      ASSERT_LT((c.normalization.to_world(n) - pts[i]).norm(), 1e-9);
    }
  }
}

TEST(Normalize, RejectsTinyAndPlanarClouds) {
  EXPECT_THROW(normalize_cloud({}), Error);
  EXPECT_THROW(normalize_cloud({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)}), Error);
  std::vector<Vec3> planar;
  for (int i = 0; i < 10; ++i) planar.emplace_back(i, i * i, 0);
  EXPECT_THROW(normalize_cloud(planar), Error);
}

TEST(Files, ObjRoundTripPreservesGeometry) {
  const auto dir = temp_dir("obj");
  const TriMesh m = mesh::icosphere(2, 0.3, Vec3(0.1, 0.2, 0.3));
  write_obj(dir / "a.obj", m);
  const TriMesh r = read_obj(dir / "a.obj");
  ASSERT_EQ(r.vertices.size(), m.vertices.size());
  ASSERT_EQ(r.triangles, m.triangles);
  for (std::size_t i = 0; i < m.vertices.size(); ++i) EXPECT_EQ(r.vertices[i], m.vertices[i]);
}

TEST(Files, SegmentedObjectLoadsFromManifest) {
  const auto dir = temp_dir("manifest");
  write_obj(dir / "body.obj", mesh::icosphere(2, 1.0));
  write_obj(dir / "roi.obj", mesh::icosphere(1, 0.2));
  std::ofstream(dir / "manifest.json") << R"({"segments": [{"id": 2, "obj": "roi.obj"}, {"id": 1, "obj": "body.obj"}]})";
  const auto o = load_segmented_object(dir);
  EXPECT_EQ(o.num_segments(), 2);
  EXPECT_EQ(o.occupancy_label(Vec3::Zero()), 2);
}

TEST(Files, PointTableRoundTripAndErrors) {
  const auto dir = temp_dir("points");
  PointTable t;
  t.comments.push_back(" header");
  t.rows = {{0.1, 0.2, 0.3, 1, -0.5}, {1, 2, 3}};
  write_point_table(dir / "p.txt", t, 17);
  const auto r = read_point_table(dir / "p.txt");
  EXPECT_EQ(r.comments, t.comments);
  EXPECT_EQ(r.rows, t.rows);
  std::ofstream(dir / "bad.txt") << "1 2\n";
  EXPECT_THROW(read_point_table(dir / "bad.txt"), Error);
  std::ofstream(dir / "bad2.txt") << "1 2 x\n";
  EXPECT_THROW(read_point_table(dir / "bad2.txt"), Error);
  EXPECT_THROW(read_points(dir / "missing.txt"), Error);
}

}  // namespace

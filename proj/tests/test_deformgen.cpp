#include "softocc/dataset.hpp"

#include <gtest/gtest.h>

#include <filesystem>

namespace {

using namespace softocc;

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("softocc_deformgen_" + name);
  std::filesystem::remove_all(d);
  return d;
}

SegmentedObject sphere_with_roi() {
  return SegmentedObject({{1, mesh::icosphere(3, 1.0)}, {2, mesh::icosphere(2, 0.25, Vec3(0.2, 0, 0))}});
}

FieldComponent push(const Vec3& c, const Vec3& dir, double a, double rho) {
  FieldComponent f;
  f.kind = FieldComponent::Kind::kGaussianPush;
  f.center = c;
  f.direction = dir;
  f.amplitude = a;
  f.radius = rho;
  return f;
}

VirtualCamera top_camera(double noise = 0.0, double drop = 0.0) {
  VirtualCamera cam;
  cam.position = Vec3(0, 0, 3);
  cam.look_at = Vec3::Zero();
  cam.width = 160;
  cam.height = 120;
  cam.focal_px = 200;
  cam.noise_sigma = noise;
  cam.drop = drop;
  cam.seed = 17;
  return cam;
}

TEST(Deform, ZeroAmplitudeIsIdentity) {
  const auto o = sphere_with_roi();
  DeformationField f;
  f.components.push_back(push(Vec3(1, 0, 0), -Vec3::UnitX(), 0.0, 0.3));
  const auto d = deform(o, f);
  for (int id = 1; id <= o.num_segments(); ++id) EXPECT_EQ(d.segment(id).mesh.vertices, o.segment(id).mesh.vertices);
}

TEST(Deform, RigidTranslationMovesEveryVertex) {
  const auto o = sphere_with_roi();
  DeformationField f;
  FieldComponent t;
  t.kind = FieldComponent::Kind::kTranslate;
  t.direction = Vec3(0.1, -0.2, 0.05);
  f.components.push_back(t);
  const auto d = deform(o, f);
  for (int id = 1; id <= o.num_segments(); ++id)
    for (std::size_t i = 0; i < o.segment(id).mesh.vertices.size(); ++i)
      EXPECT_LT((d.segment(id).mesh.vertices[i] - o.segment(id).mesh.vertices[i] - t.direction).norm(), 1e-15);
}

TEST(Deform, GaussianPushFalloff) {
  const Vec3 c(1, 0, 0), dir(-1, 0, 0);
  const double a = 0.05, rho = 0.1;
  DeformationField f;
  f.components.push_back(push(c, dir, a, rho));
  EXPECT_LT((f.apply(c) - (c + a * dir)).norm(), 1e-15);
  // Displacement magnitude a * exp(-r^2 / (2 rho^2)) along the push direction.
  for (double r : {0.5 * rho, rho, 2 * rho, 5 * rho}) {
    const Vec3 x = c + Vec3(0, r, 0);
    EXPECT_NEAR((f.apply(x) - x).norm(), a * std::exp(-r * r / (2 * rho * rho)), 1e-15);
  }
  // Below 1e-6 a from sqrt(2 ln 1e6) = 5.26 falloff radii on.
  for (double r : {5.26 * rho, 6 * rho, 10 * rho}) {
    const Vec3 x = c + Vec3(0, 0, r);
    EXPECT_LT((f.apply(x) - x).norm(), 1e-6 * a);
  }
}

TEST(Deform, AttachmentRegionStaysFixed) {
  DeformationField f;
  f.attachment = {Attachment::Kind::kPlane, Vec3::Zero(), Vec3::UnitZ(), 0.0, 0.2};
  FieldComponent t;
  t.kind = FieldComponent::Kind::kTranslate;
  t.direction = Vec3(0.3, 0, 0);
  f.components.push_back(t);
  for (double z : {-1.0, -0.1, 0.0}) EXPECT_EQ(f.apply(Vec3(0.2, 0.1, z)), Vec3(0.2, 0.1, z));
  EXPECT_LT((f.apply(Vec3(0, 0, 0.5)) - Vec3(0.3, 0, 0.5)).norm(), 1e-15);
}

TEST(Deform, FoldingFieldIsRejectedWithSeed) {
  DeformationField f;
  f.seed = 4242;
  f.components.push_back(push(Vec3::Zero(), Vec3::UnitX(), 5.0, 1.0));
  try {
    deform(sphere_with_roi(), f);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("4242"), std::string::npos) << e.what();
  }
}

TEST(Deform, SampledFieldsAreDeterministicAndWithinJacobianBounds) {
  for (const auto& name : phantom_names()) {
    const Prior p = builtin_phantom(name);
    for (std::uint64_t s = 0; s < 5; ++s) {
      const auto f = sample_deformation(p.deformation, p.object, s);
      EXPECT_EQ(to_json(f), to_json(sample_deformation(p.deformation, p.object, s)));
      EXPECT_TRUE(jacobian_within_bounds(f, all_vertices(p.object)));
      // The constructor re-validates watertightness and ROI containment.
      const SegmentedObject d = deform(p.object, f);
      EXPECT_EQ(d.num_segments(), 4);
    }
  }
}

TEST(Deform, FieldJsonRoundTrip) {
  const Prior p = builtin_phantom("cylinder-phantom");
  const auto f = sample_deformation(p.deformation, p.object, 9);
  const auto g = field_from_json(to_json(f));
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const Vec3 x = rng.uniform_in_box(Vec3(-0.05, -0.05, 0), Vec3(0.05, 0.05, 0.1));
    EXPECT_EQ(f.apply(x), g.apply(x));
  }
}

TEST(Render, BackHemisphereIsHidden) {
  const SegmentedObject s({{1, mesh::icosphere(3, 1.0)}});
  const auto pts = render_points(s, top_camera());
  ASSERT_GT(pts.size(), 1000u);
  for (const auto& p : pts) EXPECT_GE(p.z(), -1e-9);
}

TEST(Render, DropThinsCloudBinomially) {
  const SegmentedObject s({{1, mesh::icosphere(3, 1.0)}});
  const double n = static_cast<double>(render_points(s, top_camera()).size());
  const double kept = static_cast<double>(render_points(s, top_camera(0.0, 0.5)).size());
  EXPECT_NEAR(kept, 0.5 * n, 5.0 * std::sqrt(n * 0.25));
}

TEST(Render, DepthNoiseStaysNearSurface) {
  const SegmentedObject s({{1, mesh::icosphere(3, 1.0)}});
  const auto pts = render_points(s, top_camera(0.001));
  double total = 0;
  for (const auto& p : pts) total += std::abs(s.signed_distance(p));
  EXPECT_LE(total / static_cast<double>(pts.size()), 0.0015);
}

TEST(Render, CloudsContainNoInteriorPoints) {
  const Prior p = builtin_phantom("cylinder-phantom");
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Scene sc = simulate_scene(p, seed);
    const double tol = 3 * sc.camera.noise_sigma + 1e-4;
    for (const auto& q : sc.cloud.points) {
      ASSERT_LE(std::abs(sc.object.signed_distance(q)), tol);
      if (sc.object.signed_distance(q) < -1e-9) ASSERT_EQ(sc.object.occupancy_label(q), 1);
    }
    for (const auto& q : sc.cloud.normalized_points()) ASSERT_LE(q.cwiseAbs().maxCoeff(), 1.0 + 1e-12);
  }
}

TEST(Render, EmptyViewIsAnError) {
  const SegmentedObject s({{1, mesh::icosphere(2, 1.0)}});
  VirtualCamera cam = top_camera();
  cam.look_at = Vec3(0, 0, 10);
  EXPECT_THROW(render_cloud(s, cam), Error);
}

TEST(Iss, SingleSegmentIsBalanced) {
  const SegmentedObject s({{1, mesh::icosphere(3, 1.0)}});
  const auto samples = iss_sample(s, 128, 128, 3);
  ASSERT_EQ(samples.size(), 256u);
  int inside = 0;
  for (const auto& q : samples) inside += q.s == 1;
  EXPECT_EQ(inside, 128);
}

TEST(Iss, ThreeSegmentsGiveTwoKCSamples) {
  const SegmentedObject o({{1, mesh::icosphere(3, 1.0)},
                           {2, mesh::icosphere(2, 0.2, Vec3(0.4, 0, 0))},
                           {3, mesh::icosphere(2, 0.2, Vec3(-0.4, 0, 0))}});
  EXPECT_EQ(iss_sample(o, 128, 128, 4).size(), 768u);
}

TEST(Iss, KeepsClosestAndLabelsMatchOracle) {
  const Prior p = builtin_phantom("sphere-phantom");
  const auto r = iss_sample_detailed(p.object, 256, 128, 5);
  ASSERT_EQ(r.stats.size(), 4u);
  for (const auto& st : r.stats) {
    EXPECT_LE(st.kept_inside_max, st.discarded_inside_min);
    EXPECT_LE(st.kept_outside_max, st.discarded_outside_min);
  }
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    const auto& q = r.samples[i];
    ASSERT_EQ(q.s, occupancy_label_brute(p.object, q.q));
    ASSERT_EQ(q.d, signed_distance_brute(p.object, q.q));
    // Per segment: first k inside that segment, then k outside it.
    const int seg = static_cast<int>(i / 256) + 1;
    ASSERT_EQ(p.object.segment_contains(seg, q.q), i % 256 < 128);
  }
}

TEST(Iss, RejectsKAboveT) { EXPECT_THROW(iss_sample(sphere_with_roi(), 10, 20, 0), Error); }

TEST(Iss, NormalizedDistancesScaleWithCloud) {
  Normalization n{4.0, Vec3(1, 2, 3)};
  const std::vector<OccupancySample> w{{Vec3(0.1, 0.2, 0.3), 1, -0.05}};
  const auto out = to_normalized(w, n);
  EXPECT_EQ(out[0].q, n.to_normalized(w[0].q));
  EXPECT_DOUBLE_EQ(out[0].d, -0.2);
}

TEST(Dataset, GenerationIsByteIdenticalAndLabelsRecheck) {
  const Prior p = builtin_phantom("cylinder-phantom");
  const DatasetSpec spec{3, 128, 128, 11};
  const auto a = temp_dir("a"), b = temp_dir("b");
  generate_dataset(p, spec, a, 1);
  generate_dataset(p, spec, b, 2);
  EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    const std::string stem = detail::sample_stem(i);
    EXPECT_EQ(slurp(a / (stem + "_cloud.txt")), slurp(b / (stem + "_cloud.txt")));
    EXPECT_EQ(slurp(a / (stem + "_qgt.txt")), slurp(b / (stem + "_qgt.txt")));
  }

  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  EXPECT_EQ(manifest.at("count"), 3);
  const Dataset ds = load_dataset(a);
  ASSERT_EQ(ds.samples.size(), 3u);
  EXPECT_EQ(ds.num_segments, 4);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& rec = manifest.at("samples").at(i);
    const SegmentedObject deformed = deform(p.object, field_from_json(rec.at("deformation")));
    const Normalization n{rec.at("scale").get<double>(), json_vec(rec.at("offset"))};
    const auto& s = ds.samples[i];
    ASSERT_EQ(s.queries.rows(), 2 * 128 * 4);
    for (Eigen::Index j = 0; j < s.queries.rows(); ++j) {
      if (std::abs(s.sdist[j]) < 1e-5f) continue;
      const Vec3 w = n.to_world(s.queries.row(j).transpose().cast<double>());
      ASSERT_EQ(s.labels[static_cast<std::size_t>(j)], occupancy_label_brute(deformed, w));
    }
  }
}

TEST(Dataset, FarFieldSamplesCoverTheInferenceCube) {
  const Prior p = builtin_phantom("sphere-phantom");
  DatasetSpec spec{2, 32, 32, 12};
  spec.far_field = 200;
  const auto dir = temp_dir("far");
  generate_dataset(p, spec, dir, 1);
  const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(manifest.at("far_field"), 200);
  const Dataset ds = load_dataset(dir);
  const std::size_t sorted = 2 * 32 * 4;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& rec = manifest.at("samples").at(i);
    const SegmentedObject deformed = deform(p.object, field_from_json(rec.at("deformation")));
    const Normalization n{rec.at("scale").get<double>(), json_vec(rec.at("offset"))};
    const auto& s = ds.samples[i];
    ASSERT_EQ(static_cast<std::size_t>(s.queries.rows()), sorted + 200);
    int outside = 0;
    for (std::size_t j = sorted; j < sorted + 200; ++j) {
      const Vec3 q = s.queries.row(static_cast<Eigen::Index>(j)).transpose().cast<double>();
      ASSERT_LE(q.cwiseAbs().maxCoeff(), kFarFieldExtent + 1e-6);
      const Vec3 w = n.to_world(q);
      ASSERT_EQ(s.labels[j], occupancy_label_brute(deformed, w));
      EXPECT_NEAR(s.sdist[static_cast<Eigen::Index>(j)], signed_distance_brute(deformed, w) * n.scale, 1e-5);
      outside += s.labels[j] == 0;
    }
    EXPECT_GT(outside, 100);
  }
}

TEST(Dataset, LoadRejectsCorruptManifest) {
  const auto d = temp_dir("bad");
  std::filesystem::create_directories(d);
  EXPECT_THROW(load_dataset(d), Error);
  std::ofstream(d / "manifest.json") << R"({"format": "softocc-dataset", "version": 99})";
  EXPECT_THROW(load_dataset(d), Error);
}

TEST(Dataset, PointDropKeepsExactCountAndOrder) {
  PointsF cloud(101, 3);
  for (Eigen::Index i = 0; i < cloud.rows(); ++i) cloud.row(i) << static_cast<float>(i), 0.f, 0.f;
  const PointsF half = drop_points(cloud, 0.5, 3);
  EXPECT_EQ(half.rows(), 51);
  for (Eigen::Index i = 1; i < half.rows(); ++i) EXPECT_LT(half(i - 1, 0), half(i, 0));
  EXPECT_EQ(half, drop_points(cloud, 0.5, 3));
  EXPECT_NE(half, drop_points(cloud, 0.5, 4));
  EXPECT_EQ(drop_points(cloud, 0.95, 3).rows(), 16);
  EXPECT_EQ(drop_points(cloud, 0.0, 3), cloud);
}

}  // namespace

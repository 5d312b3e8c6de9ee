#pragma once

// Built-in synthetic phantoms: a lumpy blob, an upright cylinder, and a slab,
// each with three embedded 17 mm spheres, plus the deformation and camera
// envelopes used to generate training data for them.

#include "softocc/camera.hpp"
#include "softocc/deform.hpp"
#include "softocc/mesh_builders.hpp"

namespace softocc {

inline constexpr double kRoiDiameter = 0.017;

struct Prior {
  std::string name;
  SegmentedObject object;
  DeformationProfile deformation;
  CameraProfile camera;
};

inline std::vector<std::string> phantom_names() { return {"sphere-phantom", "cylinder-phantom", "slab-phantom"}; }

namespace detail {

inline std::vector<SegmentedObject::Segment> with_rois(TriMesh body, const std::vector<Vec3>& centers) {
  std::vector<SegmentedObject::Segment> segs;
  segs.push_back({1, std::move(body)});
  for (std::size_t i = 0; i < centers.size(); ++i)
    segs.push_back({static_cast<int>(i) + 2, mesh::icosphere(2, 0.5 * kRoiDiameter, centers[i])});
  return segs;
}

}  // namespace detail

// Upright cylinder (r = 30 mm, h = 100 mm) attached at its base; bends and
// side pushes near the top.
inline Prior cylinder_phantom() {
  Prior p;
  p.name = "cylinder-phantom";
  const double r = 0.03, h = 0.10;
  p.object = SegmentedObject(detail::with_rois(mesh::cylinder(r, h, 48, 20, 6),
                                               {{0.008, 0.0, 0.025}, {-0.006, 0.006, 0.05}, {0.0, -0.008, 0.075}}));
  auto& d = p.deformation;
  d.attachment = {Attachment::Kind::kPlane, Vec3::Zero(), Vec3::UnitZ(), 0.0, 0.02};
  d.bends.push_back({Vec3::Zero(), Vec3::UnitZ(), h, {0.0, 0.025}, Vec3::Zero(), 0.9});
  d.twists.push_back({Vec3::Zero(), Vec3::UnitZ(), h, {-0.3, 0.3}, 0.5});
  for (int i = 0; i < 4; ++i) {
    const double phi = kPi / 2 * i;
    const Vec3 n(std::cos(phi), std::sin(phi), 0.0);
    d.pushes.push_back({Vec3(r * n.x(), r * n.y(), 0.075), 0.012, -n, 0.3, {0.0, 0.012}, {0.015, 0.025}, 0.35});
  }
  d.pushes.push_back({Vec3(0, 0, h), 0.01, -Vec3::UnitZ(), 0.3, {0.0, 0.012}, {0.015, 0.025}, 0.35});
  p.camera.cap_axis = Vec3::UnitZ();
  p.camera.cap_min_angle = 0.35;
  p.camera.cap_max_angle = 1.05;
  return p;
}

// 160 x 70 x 30 mm slab attached along its middle; both tips bend and get
// pushed.
inline Prior slab_phantom() {
  Prior p;
  p.name = "slab-phantom";
  const Vec3 lo(-0.08, -0.035, 0.0), hi(0.08, 0.035, 0.03);
  p.object = SegmentedObject(detail::with_rois(mesh::box(lo, hi, {32, 14, 6}),
                                               {{-0.05, 0.006, 0.015}, {0.0, -0.008, 0.015}, {0.05, 0.004, 0.015}}));
  auto& d = p.deformation;
  d.attachment = {Attachment::Kind::kBand, Vec3::Zero(), Vec3::UnitX(), 0.015, 0.02};
  d.bends.push_back({Vec3::Zero(), Vec3::UnitX(), 0.08, {-0.015, 0.02}, Vec3::UnitZ(), 0.9});
  d.pushes.push_back({Vec3(-0.07, 0, 0.03), 0.01, -Vec3::UnitZ(), 0.4, {-0.012, 0.012}, {0.015, 0.025}, 0.6});
  d.pushes.push_back({Vec3(0.07, 0, 0.03), 0.01, -Vec3::UnitZ(), 0.4, {-0.012, 0.012}, {0.015, 0.025}, 0.6});
  p.camera.cap_axis = Vec3::UnitZ();
  p.camera.cap_min_angle = 0.2;
  p.camera.cap_max_angle = 0.9;
  p.camera.distance = {0.45, 0.6};
  return p;
}

// Blob of radius ~45 mm with a bump on top and a flattened base.
inline Prior sphere_phantom() {
  Prior p;
  p.name = "sphere-phantom";
  TriMesh body = mesh::icosphere(3, 1.0);
  const Vec3 bump_dirs[] = {Vec3(0.2, 0.1, 1).normalized(), Vec3(1, 0.3, 0.2).normalized(), Vec3(-0.6, -0.8, 0.1).normalized()};
  const double bump_amp[] = {0.22, 0.10, 0.12};
  for (auto& v : body.vertices) {
    const Vec3 n = v.normalized();
    double radial = 0.042;
    for (int i = 0; i < 3; ++i) radial *= 1.0 + bump_amp[i] * std::exp(-(n - bump_dirs[i]).squaredNorm() / (2 * 0.35 * 0.35));
    v = radial * n;
    if (v.z() < 0) v.z() *= 0.55;
  }
  double zmin = std::numeric_limits<double>::infinity();
  for (const auto& v : body.vertices) zmin = std::min(zmin, v.z());
  mesh::translate(body, Vec3(0, 0, -zmin));
  const double zc = -zmin;
  p.object = SegmentedObject(detail::with_rois(
      std::move(body), {{-0.016, 0.008, zc - 0.002}, {0.006, -0.01, zc + 0.022}, {0.018, 0.012, zc + 0.002}}));
  auto& d = p.deformation;
  d.attachment = {Attachment::Kind::kPlane, Vec3::Zero(), Vec3::UnitZ(), 0.0, 0.015};
  d.bends.push_back({Vec3::Zero(), Vec3::UnitZ(), 0.08, {0.0, 0.015}, Vec3::Zero(), 0.7});
  d.twists.push_back({Vec3::Zero(), Vec3::UnitZ(), 0.08, {-0.25, 0.25}, 0.5});
  for (int i = 0; i < 5; ++i) {
    const double phi = 2 * kPi * i / 5;
    const Vec3 n = Vec3(std::cos(phi), std::sin(phi), 0.8).normalized();
    d.pushes.push_back({Vec3(0, 0, zc) + 0.045 * n, 0.01, -n, 0.3, {0.0, 0.012}, {0.015, 0.025}, 0.35});
  }
  p.camera.cap_axis = Vec3::UnitZ();
  p.camera.cap_min_angle = 0.3;
  p.camera.cap_max_angle = 1.0;
  return p;
}

inline Prior builtin_phantom(const std::string& name) {
  if (name == "cylinder-phantom" || name == "cylinder") return cylinder_phantom();
  if (name == "slab-phantom" || name == "slab") return slab_phantom();
  if (name == "sphere-phantom" || name == "sphere" || name == "organ") return sphere_phantom();
  throw Error("unknown phantom '" + name + "' (expected sphere-phantom, cylinder-phantom, or slab-phantom)");
}

// Prior directory: manifest.json with segment OBJ files, deformation profile
// and camera profile.
inline void save_prior(const Prior& p, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["name"] = p.name;
  j["segments"] = nlohmann::json::array();
  for (const auto& s : p.object.segments()) {
    const std::string file = "segment_" + std::to_string(s.id) + ".obj";
    write_obj(dir / file, s.mesh);
    j["segments"].push_back({{"id", s.id}, {"obj", file}});
  }
  j["deformation"] = to_json(p.deformation);
  j["camera"] = to_json(p.camera);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error("cannot write " + (dir / "manifest.json").string());
  out << j.dump(2) << '\n';
}

inline Prior load_prior(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error("cannot open " + (dir / "manifest.json").string());
  const auto j = nlohmann::json::parse(in);
  Prior p;
  p.name = j.value("name", dir.filename().string());
  p.object = load_segmented_object(dir);
  if (j.contains("deformation")) p.deformation = profile_from_json(j.at("deformation"));
  if (j.contains("camera")) p.camera = camera_profile_from_json(j.at("camera"));
  return p;
}

// A directory path, or a built-in phantom name when no such directory exists.
inline Prior resolve_prior(const std::string& spec) {
  if (std::filesystem::is_directory(spec)) return load_prior(spec);
  return builtin_phantom(spec);
}

}  // namespace softocc

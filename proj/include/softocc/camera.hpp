#pragma once

// Pinhole depth camera that z-buffers the body surface, so only front-facing,
// unoccluded points survive, then adds depth noise and random dropout.

#include "softocc/geometry.hpp"
#include "softocc/deform.hpp"

namespace softocc {

struct VirtualCamera {
  Vec3 position = Vec3(0, 0, 1);
  Vec3 look_at = Vec3::Zero();
  Vec3 up = Vec3::UnitY();
  int width = 120;
  int height = 90;
  double focal_px = 160.0;
  double noise_sigma = 0.0;  // meters, along the viewing depth
  double drop = 0.0;         // fraction of pixels discarded
  std::uint64_t seed = 0;

  // Rows: camera x (right), y (down), z (forward) in world coordinates.
  Eigen::Matrix3d rotation() const {
    const Vec3 z = (look_at - position).normalized();
    Vec3 upv = up;
    if (std::abs(upv.normalized().dot(z)) > 0.999) upv = any_perpendicular(z);
    const Vec3 x = z.cross(upv).normalized();
    const Vec3 y = z.cross(x);
    Eigen::Matrix3d r;
    r.row(0) = x;
    r.row(1) = y;
    r.row(2) = z;
    return r;
  }
};

// Randomization envelope: camera on a spherical cap around `cap_axis`
// centered at the object's bounding-box center.
struct CameraProfile {
  Vec3 cap_axis = Vec3::UnitZ();
  double cap_min_angle = 0.0;  // radians from the cap axis
  double cap_max_angle = 1.0;
  Range distance{0.35, 0.5};
  double look_at_jitter = 0.005;
  int width = 120;
  int height = 90;
  double fov_deg = 40.0;  // horizontal
  double noise_sigma = 0.0005;
  double drop = 0.0;
};

inline VirtualCamera sample_camera(const CameraProfile& p, const Aabb& object_box, std::uint64_t seed) {
  Rng rng(hash_all(seed, 0xca3e));
  VirtualCamera cam;
  const Vec3 axis = p.cap_axis.normalized();
  const Vec3 u = any_perpendicular(axis), v = axis.cross(u);
  // Uniform on the cap's area between the two polar angles.
  const double cmin = std::cos(p.cap_min_angle), cmax = std::cos(p.cap_max_angle);
  const double ct = rng.uniform(cmax, cmin);
  const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
  const double phi = rng.uniform(0.0, 2.0 * kPi);
  const Vec3 dir = ct * axis + st * (std::cos(phi) * u + std::sin(phi) * v);
  const Vec3 target = object_box.center() + p.look_at_jitter * Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  cam.position = target + p.distance.sample(rng) * dir;
  cam.look_at = target;
  cam.up = axis;
  cam.width = p.width;
  cam.height = p.height;
  cam.focal_px = 0.5 * p.width / std::tan(0.5 * p.fov_deg * kPi / 180.0);
  cam.noise_sigma = p.noise_sigma;
  cam.drop = p.drop;
  cam.seed = hash_all(seed, 0xca3f);
  return cam;
}

struct DepthImage {
  int width = 0, height = 0;
  std::vector<double> depth;  // +inf where empty
};

inline DepthImage rasterize_depth(const TriMesh& mesh, const VirtualCamera& cam) {
  DepthImage img;
  img.width = cam.width;
  img.height = cam.height;
  img.depth.assign(static_cast<std::size_t>(cam.width) * cam.height, std::numeric_limits<double>::infinity());
  const Eigen::Matrix3d r = cam.rotation();
  const double cx = 0.5 * cam.width, cy = 0.5 * cam.height, f = cam.focal_px;
  constexpr double kNear = 1e-3;

  std::vector<Vec3> cv(mesh.vertices.size());
  for (std::size_t i = 0; i < cv.size(); ++i) cv[i] = r * (mesh.vertices[i] - cam.position);

  for (const auto& t : mesh.triangles) {
    const Vec3 &a = cv[t[0]], &b = cv[t[1]], &c = cv[t[2]];
    if (a.z() < kNear || b.z() < kNear || c.z() < kNear) continue;
    const Eigen::Vector2d pa(cx + f * a.x() / a.z(), cy + f * a.y() / a.z());
    const Eigen::Vector2d pb(cx + f * b.x() / b.z(), cy + f * b.y() / b.z());
    const Eigen::Vector2d pc(cx + f * c.x() / c.z(), cy + f * c.y() / c.z());
    const double area = (pb - pa).x() * (pc - pa).y() - (pb - pa).y() * (pc - pa).x();
    if (std::abs(area) < 1e-14) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({pa.x(), pb.x(), pc.x()}))));
    const int x1 = std::min(cam.width - 1, static_cast<int>(std::ceil(std::max({pa.x(), pb.x(), pc.x()}))));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({pa.y(), pb.y(), pc.y()}))));
    const int y1 = std::min(cam.height - 1, static_cast<int>(std::ceil(std::max({pa.y(), pb.y(), pc.y()}))));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const Eigen::Vector2d p(x + 0.5, y + 0.5);
        auto edge = [](const Eigen::Vector2d& u, const Eigen::Vector2d& v, const Eigen::Vector2d& w) {
          return (v - u).x() * (w - u).y() - (v - u).y() * (w - u).x();
        };
        const double w0 = edge(pb, pc, p) / area;
        const double w1 = edge(pc, pa, p) / area;
        const double w2 = edge(pa, pb, p) / area;
        if (w0 < 0 || w1 < 0 || w2 < 0) continue;
        // Perspective-correct depth: 1/z is affine in screen space.
        const double z = 1.0 / (w0 / a.z() + w1 / b.z() + w2 / c.z());
        double& slot = img.depth[static_cast<std::size_t>(y) * cam.width + x];
        if (z < slot) slot = z;
      }
    }
  }
  return img;
}

// Visible body surface as a world-space cloud. Only segment 1 is rasterized;
// internal segments are enclosed by it and can never be visible.
inline std::vector<Vec3> render_points(const SegmentedObject& object, const VirtualCamera& cam) {
  const DepthImage img = rasterize_depth(object.segment(1).mesh, cam);
  const Eigen::Matrix3d rt = cam.rotation().transpose();
  const double cx = 0.5 * cam.width, cy = 0.5 * cam.height, f = cam.focal_px;
  std::vector<Vec3> pts;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const std::size_t pix = static_cast<std::size_t>(y) * img.width + x;
      const double z = img.depth[pix];
      if (!std::isfinite(z)) continue;
      Rng rng(hash_all(cam.seed, pix));
      if (cam.drop > 0 && rng.uniform() < cam.drop) continue;
      const double zn = z + (cam.noise_sigma > 0 ? cam.noise_sigma * rng.normal() : 0.0);
      const Vec3 pc((x + 0.5 - cx) / f * zn, (y + 0.5 - cy) / f * zn, zn);
      pts.push_back(cam.position + rt * pc);
    }
  }
  return pts;
}

inline ObservationCloud render_cloud(const SegmentedObject& object, const VirtualCamera& cam) {
  auto pts = render_points(object, cam);
  if (pts.size() < 4) throw Error("render_cloud: camera does not see the object; re-randomize the pose");
  return normalize_cloud(std::move(pts));
}

inline nlohmann::json to_json(const VirtualCamera& c) {
  return {{"position", vec_json(c.position)}, {"look_at", vec_json(c.look_at)}, {"up", vec_json(c.up)},
          {"width", c.width}, {"height", c.height}, {"focal_px", c.focal_px},
          {"noise_sigma", c.noise_sigma}, {"drop", c.drop}, {"seed", c.seed}};
}

inline nlohmann::json to_json(const CameraProfile& p) {
  return {{"cap_axis", vec_json(p.cap_axis)}, {"cap_min_angle", p.cap_min_angle}, {"cap_max_angle", p.cap_max_angle},
          {"distance", to_json(p.distance)}, {"look_at_jitter", p.look_at_jitter}, {"width", p.width},
          {"height", p.height}, {"fov_deg", p.fov_deg}, {"noise_sigma", p.noise_sigma}, {"drop", p.drop}};
}

inline CameraProfile camera_profile_from_json(const nlohmann::json& j) {
  CameraProfile p;
  p.cap_axis = json_vec(j.at("cap_axis"));
  p.cap_min_angle = j.at("cap_min_angle").get<double>();
  p.cap_max_angle = j.at("cap_max_angle").get<double>();
  p.distance = range_from_json(j.at("distance"));
  p.look_at_jitter = j.at("look_at_jitter").get<double>();
  p.width = j.at("width").get<int>();
  p.height = j.at("height").get<int>();
  p.fov_deg = j.at("fov_deg").get<double>();
  p.noise_sigma = j.at("noise_sigma").get<double>();
  p.drop = j.at("drop").get<double>();
  return p;
}

}  // namespace softocc

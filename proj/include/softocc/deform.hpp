#pragma once

// Analytic deformation fields standing in for a physics simulation: Gaussian
// pushes at interaction regions, bends, twists, and rigid translation,
// composed in sequence and blended to zero over an attachment region.

#include "softocc/geometry.hpp"

#include "json.hpp"

namespace softocc {

// 3t^2 - 2t^3 on [edge0, edge1], clamped; C1 at both ends.
inline double smoothstep(double edge0, double edge1, double x) {
  if (edge1 <= edge0) return x < edge0 ? 0.0 : 1.0;
  const double t = std::clamp((x - edge0) / (edge1 - edge0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

struct Attachment {
  enum class Kind { kNone, kPlane, kBand };
  Kind kind = Kind::kNone;
  Vec3 origin = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  double width = 0.0;  // band half-width
  double blend = 0.01;

  // 0 inside the attachment region, 1 away from it.
  double weight(const Vec3& x) const {
    switch (kind) {
      case Kind::kNone: return 1.0;
      case Kind::kPlane: return smoothstep(0.0, blend, (x - origin).dot(normal));
      case Kind::kBand: return smoothstep(0.0, blend, std::abs((x - origin).dot(normal)) - width);
    }
    return 1.0;
  }
};

struct FieldComponent {
  enum class Kind { kGaussianPush, kBend, kTwist, kTranslate };
  Kind kind = Kind::kGaussianPush;
  Vec3 center = Vec3::Zero();     // push center / bend & twist origin
  Vec3 direction = Vec3::UnitX(); // push or bend displacement direction; translation vector
  Vec3 axis = Vec3::UnitZ();      // bend & twist axis
  double amplitude = 0.0;         // meters (push, bend) or radians (twist)
  double radius = 0.01;           // push falloff radius / bend & twist reference length

  Vec3 apply(const Vec3& x) const {
    switch (kind) {
      case Kind::kGaussianPush: {
        const double r2 = (x - center).squaredNorm();
        return x + amplitude * std::exp(-r2 / (2.0 * radius * radius)) * direction;
      }
      case Kind::kBend: {
        const double s = (x - center).dot(axis) / radius;
        return x + amplitude * s * s * direction;
      }
      case Kind::kTwist: {
        const double s = (x - center).dot(axis) / radius;
        const double angle = amplitude * s;
        const Vec3 rel = x - center;
        const Vec3 along = rel.dot(axis) * axis;
        const Vec3 perp = rel - along;
        const Vec3 rotated = std::cos(angle) * perp + std::sin(angle) * axis.cross(perp);
        return center + along + rotated;
      }
      case Kind::kTranslate: return x + direction;
    }
    return x;
  }
};

struct DeformationField {
  std::vector<FieldComponent> components;  // applied in order
  Attachment attachment;
  std::uint64_t seed = 0;

  Vec3 apply(const Vec3& x) const {
    Vec3 y = x;
    for (const auto& c : components) y = c.apply(y);
    return x + attachment.weight(x) * (y - x);
  }

  std::string kind() const {
    if (components.size() == 1) {
      switch (components[0].kind) {
        case FieldComponent::Kind::kGaussianPush: return "gaussian-push";
        case FieldComponent::Kind::kBend: return "bend";
        case FieldComponent::Kind::kTwist: return "twist";
        case FieldComponent::Kind::kTranslate: return "translate";
      }
    }
    return "composite";
  }
};

inline double jacobian_determinant(const DeformationField& f, const Vec3& x, double h = 1e-6) {
  Eigen::Matrix3d j;
  for (int a = 0; a < 3; ++a) {
    Vec3 e = Vec3::Zero();
    e[a] = h;
    j.col(a) = (f.apply(x + e) - f.apply(x - e)) / (2.0 * h);
  }
  return j.determinant();
}

inline constexpr double kJacobianMin = 0.2;
inline constexpr double kJacobianMax = 5.0;

inline bool jacobian_within_bounds(const DeformationField& f, const std::vector<Vec3>& pts) {
  for (const auto& p : pts) {
    const double d = jacobian_determinant(f, p);
    if (!(d >= kJacobianMin && d <= kJacobianMax)) return false;
  }
  return true;
}

inline std::vector<Vec3> all_vertices(const SegmentedObject& o) {
  std::vector<Vec3> pts;
  for (const auto& s : o.segments()) pts.insert(pts.end(), s.mesh.vertices.begin(), s.mesh.vertices.end());
  return pts;
}

// Displaces every segment by the same field. The result is re-validated, so
// a fold-over surfaces as an error rather than a corrupt object.
inline SegmentedObject deform(const SegmentedObject& object, const DeformationField& field) {
  if (!jacobian_within_bounds(field, all_vertices(object)))
    throw Error("deform: Jacobian determinant outside [0.2, 5] (seed " + std::to_string(field.seed) + ")");
  std::vector<SegmentedObject::Segment> segs = object.segments();
  for (auto& s : segs)
    for (auto& v : s.mesh.vertices) v = field.apply(v);
  return SegmentedObject(std::move(segs));
}

// -----------------------------------------------------------------------------
// Randomized deformation families
// -----------------------------------------------------------------------------

struct Range {
  double lo = 0, hi = 0;
  double sample(Rng& rng) const { return rng.uniform(lo, hi); }
};

// An interaction region: a surface patch where a push can be applied.
struct PushRegion {
  Vec3 center = Vec3::Zero();     // nominal center on the surface
  double spread = 0.0;            // center jitter (meters, per axis)
  Vec3 direction = -Vec3::UnitX();// nominal push direction (into the object)
  double cone = 0.3;              // direction jitter magnitude
  Range amplitude{0.0, 0.01};     // signed amplitudes allow pulls
  Range radius{0.015, 0.03};
  double probability = 1.0;
};

struct BendSpec {
  Vec3 origin = Vec3::Zero();
  Vec3 axis = Vec3::UnitZ();
  double length = 0.1;
  Range amplitude{-0.01, 0.01};   // displacement at s = 1
  Vec3 direction = Vec3::Zero();  // zero: random azimuth around the axis
  double probability = 1.0;
};

struct TwistSpec {
  Vec3 origin = Vec3::Zero();
  Vec3 axis = Vec3::UnitZ();
  double length = 0.1;
  Range angle{-0.2, 0.2};
  double probability = 1.0;
};

struct DeformationProfile {
  Attachment attachment;
  std::vector<PushRegion> pushes;
  std::vector<BendSpec> bends;
  std::vector<TwistSpec> twists;
};

inline Vec3 any_perpendicular(const Vec3& a) {
  const Vec3 t = std::abs(a.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  return (t - t.dot(a) * a).normalized();
}

// Draws one composite field; rejection-samples until the Jacobian bound holds
// on the object's vertices (20 attempts).
inline DeformationField sample_deformation(const DeformationProfile& profile, const SegmentedObject& object,
                                           std::uint64_t seed) {
  const auto verts = all_vertices(object);
  for (int attempt = 0; attempt < 20; ++attempt) {
    Rng rng(hash_all(seed, 0xdef0, attempt));
    DeformationField f;
    f.seed = seed;
    f.attachment = profile.attachment;
    for (const auto& b : profile.bends) {
      if (rng.uniform() >= b.probability) continue;
      FieldComponent c;
      c.kind = FieldComponent::Kind::kBend;
      c.center = b.origin;
      c.axis = b.axis.normalized();
      c.radius = b.length;
      const Vec3 u = any_perpendicular(c.axis), v = c.axis.cross(u);
      const double phi = rng.uniform(0.0, 2.0 * kPi);
      c.direction = b.direction.squaredNorm() > 0 ? b.direction.normalized() : Vec3(std::cos(phi) * u + std::sin(phi) * v);
      c.amplitude = b.amplitude.sample(rng);
      f.components.push_back(c);
    }
    for (const auto& t : profile.twists) {
      if (rng.uniform() >= t.probability) continue;
      FieldComponent c;
      c.kind = FieldComponent::Kind::kTwist;
      c.center = t.origin;
      c.axis = t.axis.normalized();
      c.radius = t.length;
      c.amplitude = t.angle.sample(rng);
      f.components.push_back(c);
    }
    for (const auto& p : profile.pushes) {
      if (rng.uniform() >= p.probability) continue;
      FieldComponent c;
      c.kind = FieldComponent::Kind::kGaussianPush;
      c.center = p.center + p.spread * Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
      c.direction = (p.direction.normalized() + p.cone * rng.unit_vector()).normalized();
      c.amplitude = p.amplitude.sample(rng);
      c.radius = p.radius.sample(rng);
      f.components.push_back(c);
    }
    if (jacobian_within_bounds(f, verts)) return f;
  }
  throw Error("sample_deformation: Jacobian bound violated after 20 attempts (seed " + std::to_string(seed) + ")");
}

// -----------------------------------------------------------------------------
// JSON
// -----------------------------------------------------------------------------

inline nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
inline Vec3 json_vec(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

inline nlohmann::json to_json(const Attachment& a) {
  static const char* kinds[] = {"none", "plane", "band"};
  return {{"kind", kinds[static_cast<int>(a.kind)]}, {"origin", vec_json(a.origin)}, {"normal", vec_json(a.normal)},
          {"width", a.width}, {"blend", a.blend}};
}

inline Attachment attachment_from_json(const nlohmann::json& j) {
  Attachment a;
  const auto k = j.at("kind").get<std::string>();
  a.kind = k == "plane" ? Attachment::Kind::kPlane : k == "band" ? Attachment::Kind::kBand : Attachment::Kind::kNone;
  a.origin = json_vec(j.at("origin"));
  a.normal = json_vec(j.at("normal"));
  a.width = j.at("width").get<double>();
  a.blend = j.at("blend").get<double>();
  return a;
}

inline nlohmann::json to_json(const DeformationField& f) {
  static const char* kinds[] = {"gaussian-push", "bend", "twist", "translate"};
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : f.components)
    comps.push_back({{"kind", kinds[static_cast<int>(c.kind)]}, {"center", vec_json(c.center)},
                     {"direction", vec_json(c.direction)}, {"axis", vec_json(c.axis)},
                     {"amplitude", c.amplitude}, {"radius", c.radius}});
  return {{"kind", f.kind()}, {"seed", f.seed}, {"attachment", to_json(f.attachment)}, {"components", comps}};
}

inline DeformationField field_from_json(const nlohmann::json& j) {
  DeformationField f;
  f.seed = j.at("seed").get<std::uint64_t>();
  f.attachment = attachment_from_json(j.at("attachment"));
  for (const auto& c : j.at("components")) {
    FieldComponent fc;
    const auto k = c.at("kind").get<std::string>();
    fc.kind = k == "gaussian-push" ? FieldComponent::Kind::kGaussianPush
              : k == "bend"        ? FieldComponent::Kind::kBend
              : k == "twist"       ? FieldComponent::Kind::kTwist
                                   : FieldComponent::Kind::kTranslate;
    fc.center = json_vec(c.at("center"));
    fc.direction = json_vec(c.at("direction"));
    fc.axis = json_vec(c.at("axis"));
    fc.amplitude = c.at("amplitude").get<double>();
    fc.radius = c.at("radius").get<double>();
    f.components.push_back(fc);
  }
  return f;
}

inline nlohmann::json to_json(const Range& r) { return {r.lo, r.hi}; }
inline Range range_from_json(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

inline nlohmann::json to_json(const DeformationProfile& p) {
  nlohmann::json j;
  j["attachment"] = to_json(p.attachment);
  j["pushes"] = nlohmann::json::array();
  for (const auto& r : p.pushes)
    j["pushes"].push_back({{"center", vec_json(r.center)}, {"spread", r.spread}, {"direction", vec_json(r.direction)},
                           {"cone", r.cone}, {"amplitude", to_json(r.amplitude)}, {"radius", to_json(r.radius)},
                           {"probability", r.probability}});
  j["bends"] = nlohmann::json::array();
  for (const auto& b : p.bends)
    j["bends"].push_back({{"origin", vec_json(b.origin)}, {"axis", vec_json(b.axis)}, {"length", b.length},
                          {"amplitude", to_json(b.amplitude)}, {"direction", vec_json(b.direction)},
                          {"probability", b.probability}});
  j["twists"] = nlohmann::json::array();
  for (const auto& t : p.twists)
    j["twists"].push_back({{"origin", vec_json(t.origin)}, {"axis", vec_json(t.axis)}, {"length", t.length},
                           {"angle", to_json(t.angle)}, {"probability", t.probability}});
  return j;
}

inline DeformationProfile profile_from_json(const nlohmann::json& j) {
  DeformationProfile p;
  p.attachment = attachment_from_json(j.at("attachment"));
  for (const auto& r : j.value("pushes", nlohmann::json::array())) {
    PushRegion pr;
    pr.center = json_vec(r.at("center"));
    pr.spread = r.at("spread").get<double>();
    pr.direction = json_vec(r.at("direction"));
    pr.cone = r.at("cone").get<double>();
    pr.amplitude = range_from_json(r.at("amplitude"));
    pr.radius = range_from_json(r.at("radius"));
    pr.probability = r.value("probability", 1.0);
    p.pushes.push_back(pr);
  }
  for (const auto& b : j.value("bends", nlohmann::json::array())) {
    BendSpec bs;
    bs.origin = json_vec(b.at("origin"));
    bs.axis = json_vec(b.at("axis"));
    bs.length = b.at("length").get<double>();
    bs.amplitude = range_from_json(b.at("amplitude"));
    if (b.contains("direction")) bs.direction = json_vec(b.at("direction"));
    bs.probability = b.value("probability", 1.0);
    p.bends.push_back(bs);
  }
  for (const auto& t : j.value("twists", nlohmann::json::array())) {
    TwistSpec ts;
    ts.origin = json_vec(t.at("origin"));
    ts.axis = json_vec(t.at("axis"));
    ts.length = t.at("length").get<double>();
    ts.angle = range_from_json(t.at("angle"));
    ts.probability = t.value("probability", 1.0);
    p.twists.push_back(ts);
  }
  return p;
}

}  // namespace softocc

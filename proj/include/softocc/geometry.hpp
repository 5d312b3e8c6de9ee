#pragma once

// Triangle meshes, a bounding-volume hierarchy for closest-point and ray
// queries, multi-segment objects with occupancy/signed-distance queries, and
// observation point clouds with their [-1,1]^3 normalization.

#include "softocc/common.hpp"

#include <Eigen/Dense>
#include "json.hpp"

#include <array>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <unordered_map>

namespace softocc {

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
};

struct Aabb {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void expand(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  void expand(const Aabb& b) {
    lo = lo.cwiseMin(b.lo);
    hi = hi.cwiseMax(b.hi);
  }
  bool empty() const { return lo.x() > hi.x(); }
  Vec3 center() const { return 0.5 * (lo + hi); }
  Vec3 extent() const { return hi - lo; }

  // Grows each side by frac of the extent along that axis.
  Aabb enlarged(double frac) const {
    const Vec3 pad = frac * extent();
    return {lo - pad, hi + pad};
  }

  bool contains(const Vec3& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }

  double squared_distance(const Vec3& p) const {
    const Vec3 d = (lo - p).cwiseMax(p - hi).cwiseMax(Vec3::Zero());
    return d.squaredNorm();
  }
};

inline Aabb bounding_box(const std::vector<Vec3>& pts) {
  Aabb b;
  for (const auto& p : pts) b.expand(p);
  return b;
}

// -----------------------------------------------------------------------------
// Primitive queries
// -----------------------------------------------------------------------------

// Closest point on triangle (a,b,c) to p, by Voronoi-region classification.
inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + (d1 / (d1 - d3)) * ab;

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + (d2 / (d2 - d6)) * ac;

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);

  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

inline double squared_distance_to_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  return (closest_point_on_triangle(p, a, b, c) - p).squaredNorm();
}

enum class RayHit { kMiss, kHit, kAmbiguous };

// Moller-Trumbore against the half-line origin + t*dir, t > 0. Hits that land
// within `edge_eps` (barycentric) of an edge or vertex, rays nearly parallel to
// the triangle plane, and hits at t ~ 0 are reported as ambiguous.
inline RayHit intersect_ray_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b,
                                     const Vec3& c, double* t_out = nullptr) {
  constexpr double kEdgeEps = 1e-9;
  const Vec3 e1 = b - a, e2 = c - a;
  const Vec3 pv = dir.cross(e2);
  const double det = e1.dot(pv);
  const double scale = e1.norm() * e2.norm();
  if (std::abs(det) <= 1e-12 * scale) {
    // Parallel: ambiguous only if the ray lies in the triangle's plane.
    const Vec3 n = e1.cross(e2);
    const double nn = n.norm();
    if (nn > 0 && std::abs(n.dot(origin - a)) <= 1e-12 * nn * (1.0 + (origin - a).norm())) return RayHit::kAmbiguous;
    return RayHit::kMiss;
  }
  const double inv = 1.0 / det;
  const Vec3 tv = origin - a;
  const double u = tv.dot(pv) * inv;
  if (u < -kEdgeEps || u > 1 + kEdgeEps) return RayHit::kMiss;
  const Vec3 qv = tv.cross(e1);
  const double v = dir.dot(qv) * inv;
  if (v < -kEdgeEps || u + v > 1 + kEdgeEps) return RayHit::kMiss;
  const double t = e2.dot(qv) * inv;
  const double len = std::max({e1.norm(), e2.norm(), 1e-300});
  if (t < -1e-12 * len) return RayHit::kMiss;
  if (t_out) *t_out = t;
  if (t <= 1e-12 * len) return RayHit::kAmbiguous;
  if (u < kEdgeEps || v < kEdgeEps || u + v > 1 - kEdgeEps) return RayHit::kAmbiguous;
  return RayHit::kHit;
}

inline bool ray_hits_box(const Vec3& origin, const Vec3& inv_dir, const Aabb& box) {
  double tmin = 0.0, tmax = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    double t0 = (box.lo[a] - origin[a]) * inv_dir[a];
    double t1 = (box.hi[a] - origin[a]) * inv_dir[a];
    if (t0 > t1) std::swap(t0, t1);
    // NaN (0 * inf) means the origin sits on a slab plane of a flat box.
    if (std::isnan(t0) || std::isnan(t1)) {
      if (origin[a] < box.lo[a] || origin[a] > box.hi[a]) return false;
      continue;
    }
    tmin = std::max(tmin, t0);
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return false;
  }
  return true;
}

// -----------------------------------------------------------------------------
// Bounding-volume hierarchy
// -----------------------------------------------------------------------------

class Bvh {
 public:
  struct Node {
    Aabb box;
    int left = -1;  // internal: child indices; leaf: left = -1
    int right = -1;
    int begin = 0;  // leaf: range into order_
    int end = 0;
  };

  Bvh() = default;

  explicit Bvh(const TriMesh& mesh) : mesh_(&mesh) {
    const std::size_t n = mesh.triangles.size();
    order_.resize(n);
    boxes_.resize(n);
    centroids_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      order_[i] = static_cast<int>(i);
      const auto& t = mesh.triangles[i];
      Aabb b;
      for (int k = 0; k < 3; ++k) b.expand(mesh.vertices[t[k]]);
      // Pad so box tests stay conservative under rounding.
      const double pad = 1e-9 * (1.0 + b.extent().maxCoeff());
      b.lo.array() -= pad;
      b.hi.array() += pad;
      boxes_[i] = b;
      centroids_[i] = b.center();
    }
    if (n > 0) build(0, static_cast<int>(n));
  }

  const TriMesh& mesh() const { return *mesh_; }
  const std::vector<Node>& nodes() const { return nodes_; }

  // Unsigned distance to the closest triangle.
  double distance(const Vec3& p) const { return std::sqrt(closest(p).first); }

  // (squared distance, triangle index)
  std::pair<double, int> closest(const Vec3& p) const {
    double best = std::numeric_limits<double>::infinity();
    int best_tri = -1;
    if (nodes_.empty()) return {best, best_tri};
    int stack[128];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
      const Node& node = nodes_[stack[--top]];
      if (node.box.squared_distance(p) > best) continue;
      if (node.left < 0) {
        for (int i = node.begin; i < node.end; ++i) {
          const int tri = order_[i];
          if (boxes_[tri].squared_distance(p) > best) continue;
          const auto& t = mesh_->triangles[tri];
          const double d =
              squared_distance_to_triangle(p, mesh_->vertices[t[0]], mesh_->vertices[t[1]], mesh_->vertices[t[2]]);
          if (d < best || (d == best && tri < best_tri)) {
            best = d;
            best_tri = tri;
          }
        }
        continue;
      }
      const double dl = nodes_[node.left].box.squared_distance(p);
      const double dr = nodes_[node.right].box.squared_distance(p);
      if (dl <= dr) {
        stack[top++] = node.right;
        stack[top++] = node.left;
      } else {
        stack[top++] = node.left;
        stack[top++] = node.right;
      }
    }
    return {best, best_tri};
  }

  // Visits every triangle whose padded box is pierced by the ray.
  template <typename Fn>
  void for_each_ray_candidate(const Vec3& origin, const Vec3& dir, Fn&& fn) const {
    if (nodes_.empty()) return;
    const Vec3 inv_dir = dir.cwiseInverse();
    int stack[128];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
      const Node& node = nodes_[stack[--top]];
      if (!ray_hits_box(origin, inv_dir, node.box)) continue;
      if (node.left < 0) {
        for (int i = node.begin; i < node.end; ++i)
          if (ray_hits_box(origin, inv_dir, boxes_[order_[i]])) fn(order_[i]);
        continue;
      }
      stack[top++] = node.left;
      stack[top++] = node.right;
    }
  }

  // Visits every triangle whose padded box overlaps `query`.
  template <typename Fn>
  void for_each_overlap(const Aabb& query, Fn&& fn) const {
    if (nodes_.empty()) return;
    int stack[128];
    int top = 0;
    stack[top++] = 0;
    auto overlaps = [&](const Aabb& b) {
      return (b.lo.array() <= query.hi.array()).all() && (b.hi.array() >= query.lo.array()).all();
    };
    while (top > 0) {
      const Node& node = nodes_[stack[--top]];
      if (!overlaps(node.box)) continue;
      if (node.left < 0) {
        for (int i = node.begin; i < node.end; ++i)
          if (overlaps(boxes_[order_[i]])) fn(order_[i]);
        continue;
      }
      stack[top++] = node.left;
      stack[top++] = node.right;
    }
  }

 private:
  static constexpr int kLeafSize = 4;

  int build(int begin, int end) {
    const int idx = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    Aabb box, cbox;
    for (int i = begin; i < end; ++i) {
      box.expand(boxes_[order_[i]]);
      cbox.expand(centroids_[order_[i]]);
    }
    nodes_[idx].box = box;
    if (end - begin <= kLeafSize) {
      nodes_[idx].begin = begin;
      nodes_[idx].end = end;
      return idx;
    }
    int axis = 0;
    cbox.extent().maxCoeff(&axis);
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
      const double ca = centroids_[a][axis], cb = centroids_[b][axis];
      return ca < cb || (ca == cb && a < b);
    });
    const int l = build(begin, mid);
    const int r = build(mid, end);
    nodes_[idx].left = l;
    nodes_[idx].right = r;
    return idx;
  }

  const TriMesh* mesh_ = nullptr;
  std::vector<int> order_;
  std::vector<Aabb> boxes_;
  std::vector<Vec3> centroids_;
  std::vector<Node> nodes_;
};

// -----------------------------------------------------------------------------
// Mesh utilities
// -----------------------------------------------------------------------------

inline double triangle_area(const TriMesh& m, int tri) {
  const auto& t = m.triangles[tri];
  return 0.5 * (m.vertices[t[1]] - m.vertices[t[0]]).cross(m.vertices[t[2]] - m.vertices[t[0]]).norm();
}

inline double signed_volume(const TriMesh& m) {
  double v = 0;
  for (const auto& t : m.triangles) v += m.vertices[t[0]].dot(m.vertices[t[1]].cross(m.vertices[t[2]])) / 6.0;
  return v;
}

// Centroid of the enclosed solid (divergence theorem over signed tetrahedra).
inline Vec3 volume_centroid(const TriMesh& m) {
  double vol = 0;
  Vec3 acc = Vec3::Zero();
  for (const auto& t : m.triangles) {
    const Vec3 &a = m.vertices[t[0]], &b = m.vertices[t[1]], &c = m.vertices[t[2]];
    const double v = a.dot(b.cross(c)) / 6.0;
    vol += v;
    acc += v * (a + b + c) / 4.0;
  }
  if (std::abs(vol) < 1e-300) throw Error("volume_centroid: zero-volume mesh");
  return acc / vol;
}

inline Aabb mesh_bounds(const TriMesh& m) { return bounding_box(m.vertices); }

// Segment-vs-triangle crossing used by the self-intersection check.
inline bool segment_crosses_triangle(const Vec3& p, const Vec3& q, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 dir = q - p;
  const Vec3 e1 = b - a, e2 = c - a;
  const Vec3 pv = dir.cross(e2);
  const double det = e1.dot(pv);
  if (std::abs(det) < 1e-18 * (1.0 + dir.squaredNorm()) * (1.0 + e1.squaredNorm())) return false;
  const double inv = 1.0 / det;
  const Vec3 tv = p - a;
  const double u = tv.dot(pv) * inv;
  if (u <= 0 || u >= 1) return false;
  const Vec3 qv = tv.cross(e1);
  const double v = dir.dot(qv) * inv;
  if (v <= 0 || u + v >= 1) return false;
  const double t = e2.dot(qv) * inv;
  return t > 0 && t < 1;
}

inline bool triangles_intersect(const std::array<Vec3, 3>& s, const std::array<Vec3, 3>& t) {
  for (int i = 0; i < 3; ++i) {
    if (segment_crosses_triangle(s[i], s[(i + 1) % 3], t[0], t[1], t[2])) return true;
    if (segment_crosses_triangle(t[i], t[(i + 1) % 3], s[0], s[1], s[2])) return true;
  }
  return false;
}

// Throws on out-of-range indices, degenerate triangles, open or non-manifold
// edges, inconsistent orientation, zero volume, or self-intersections between
// triangles that share no vertex.
inline void validate_mesh(const TriMesh& m, const std::string& what = "mesh", const Bvh* bvh = nullptr) {
  if (m.triangles.size() < 4) throw Error(what + ": fewer than 4 triangles");
  const int nv = static_cast<int>(m.vertices.size());
  for (std::size_t i = 0; i < m.triangles.size(); ++i) {
    for (int k = 0; k < 3; ++k)
      if (m.triangles[i][k] < 0 || m.triangles[i][k] >= nv) throw Error(what + ": vertex index out of range");
    if (triangle_area(m, static_cast<int>(i)) < 1e-12)
      throw Error(what + ": degenerate triangle " + std::to_string(i) + " (area < 1e-12)");
  }
  std::unordered_map<std::uint64_t, int> directed;
  directed.reserve(m.triangles.size() * 3);
  auto key = [](int a, int b) { return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b); };
  for (const auto& t : m.triangles)
    for (int k = 0; k < 3; ++k)
      if (++directed[key(t[k], t[(k + 1) % 3])] > 1) throw Error(what + ": non-manifold or inconsistently oriented edge");
  for (const auto& [k, count] : directed) {
    const int a = static_cast<int>(k >> 32), b = static_cast<int>(k & 0xffffffffu);
    if (!directed.count(key(b, a))) throw Error(what + ": not watertight (open edge)");
    (void)count;
  }
  if (std::abs(signed_volume(m)) < 1e-18) throw Error(what + ": zero enclosed volume");

  std::optional<Bvh> local;
  if (!bvh) bvh = &local.emplace(m);
  for (std::size_t i = 0; i < m.triangles.size(); ++i) {
    const auto& ti = m.triangles[i];
    Aabb box;
    for (int k = 0; k < 3; ++k) box.expand(m.vertices[ti[k]]);
    bool hit = false;
    bvh->for_each_overlap(box, [&](int j) {
      if (hit || j <= static_cast<int>(i)) return;
      const auto& tj = m.triangles[j];
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
          if (ti[a] == tj[b]) return;
      const std::array<Vec3, 3> s{m.vertices[ti[0]], m.vertices[ti[1]], m.vertices[ti[2]]};
      const std::array<Vec3, 3> t{m.vertices[tj[0]], m.vertices[tj[1]], m.vertices[tj[2]]};
      hit = triangles_intersect(s, t);
    });
    if (hit) throw Error(what + ": self-intersection at triangle " + std::to_string(i));
  }
}

// -----------------------------------------------------------------------------
// Inside test by ray parity
// -----------------------------------------------------------------------------

namespace detail {

inline Vec3 parity_ray_direction(const Vec3& q, int attempt) {
  // Fixed irrational-looking base direction, jittered by a hash of the query.
  const Vec3 base = Vec3(0.5773, 0.6173, 0.5345).normalized();
  if (attempt == 0) return base;
  const std::uint64_t h = hash_all(double_bits(q.x()), double_bits(q.y()), double_bits(q.z()), attempt);
  Rng rng(h);
  return (base + 0.5 * rng.unit_vector()).normalized();
}

template <typename Candidates>
int parity_with(const TriMesh& m, const Vec3& q, const Vec3& dir, Candidates&& candidates, bool* ambiguous) {
  int crossings = 0;
  *ambiguous = false;
  candidates(dir, [&](int tri) {
    const auto& t = m.triangles[tri];
    switch (intersect_ray_triangle(q, dir, m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]])) {
      case RayHit::kHit: ++crossings; break;
      case RayHit::kAmbiguous:
        *ambiguous = true;
        ++crossings;
        break;
      case RayHit::kMiss: break;
    }
  });
  return crossings;
}

}  // namespace detail

inline constexpr int kParityRetries = 3;

// Odd number of crossings along a deterministic ray means inside.
inline bool mesh_contains(const Bvh& bvh, const Vec3& q) {
  const TriMesh& m = bvh.mesh();
  bool inside = false;
  for (int attempt = 0; attempt <= kParityRetries; ++attempt) {
    const Vec3 dir = detail::parity_ray_direction(q, attempt);
    bool ambiguous = false;
    const int n = detail::parity_with(
        m, q, dir, [&](const Vec3& d, auto&& visit) { bvh.for_each_ray_candidate(q, d, visit); }, &ambiguous);
    inside = (n % 2) == 1;
    if (!ambiguous) break;
  }
  return inside;
}

// Same rule without acceleration; used as the reference oracle.
inline bool mesh_contains_brute(const TriMesh& m, const Vec3& q) {
  bool inside = false;
  for (int attempt = 0; attempt <= kParityRetries; ++attempt) {
    const Vec3 dir = detail::parity_ray_direction(q, attempt);
    bool ambiguous = false;
    const int n = detail::parity_with(
        m, q, dir,
        [&](const Vec3&, auto&& visit) {
          for (int i = 0; i < static_cast<int>(m.triangles.size()); ++i) visit(i);
        },
        &ambiguous);
    inside = (n % 2) == 1;
    if (!ambiguous) break;
  }
  return inside;
}

inline double mesh_distance_brute(const TriMesh& m, const Vec3& q) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& t : m.triangles)
    best = std::min(best, squared_distance_to_triangle(q, m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]]));
  return std::sqrt(best);
}

// -----------------------------------------------------------------------------
// Segmented objects
// -----------------------------------------------------------------------------

// A body (segment 1) with nested regions of interest (segments 2..C). Label 0
// is "outside". Read-only after construction.
class SegmentedObject {
 public:
  struct Segment {
    int id = 0;
    TriMesh mesh;
  };

  SegmentedObject() = default;

  explicit SegmentedObject(std::vector<Segment> segments) : segments_(std::move(segments)) {
    if (segments_.empty()) throw Error("SegmentedObject: no segments");
    std::sort(segments_.begin(), segments_.end(), [](const Segment& a, const Segment& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < segments_.size(); ++i)
      if (segments_[i].id != static_cast<int>(i) + 1) throw Error("SegmentedObject: segment ids must be 1..C");
    bvhs_.reserve(segments_.size());
    for (auto& s : segments_) bvhs_.emplace_back(s.mesh);
    for (std::size_t i = 0; i < segments_.size(); ++i)
      validate_mesh(segments_[i].mesh, "segment " + std::to_string(segments_[i].id), &bvhs_[i]);
    for (std::size_t i = 1; i < segments_.size(); ++i)
      for (const auto& v : segments_[i].mesh.vertices)
        if (!mesh_contains(bvhs_[0], v) || bvhs_[0].distance(v) <= 0)
          throw Error("SegmentedObject: segment " + std::to_string(segments_[i].id) + " is not strictly inside the body");
  }

  SegmentedObject(const SegmentedObject& o) : segments_(o.segments_) { rebuild_bvhs(); }
  SegmentedObject& operator=(const SegmentedObject& o) {
    if (this != &o) {
      segments_ = o.segments_;
      rebuild_bvhs();
    }
    return *this;
  }
  SegmentedObject(SegmentedObject&& o) noexcept : segments_(std::move(o.segments_)) { rebuild_bvhs(); }
  SegmentedObject& operator=(SegmentedObject&& o) noexcept {
    segments_ = std::move(o.segments_);
    rebuild_bvhs();
    return *this;
  }

  int num_segments() const { return static_cast<int>(segments_.size()); }
  const Segment& segment(int id) const { return segments_.at(id - 1); }
  const std::vector<Segment>& segments() const { return segments_; }
  const Bvh& bvh(int id) const { return bvhs_.at(id - 1); }

  bool segment_contains(int id, const Vec3& q) const { return mesh_contains(bvhs_.at(id - 1), q); }
  double segment_distance(int id, const Vec3& q) const { return bvhs_.at(id - 1).distance(q); }

  // Innermost containing segment: the highest id whose mesh contains q.
  int occupancy_label(const Vec3& q) const {
    for (int id = num_segments(); id >= 1; --id)
      if (segment_contains(id, q)) return id;
    return 0;
  }

  // Distance to the nearest surface over all segments, negative inside.
  double signed_distance(const Vec3& q) const {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& b : bvhs_) best = std::min(best, b.closest(q).first);
    const double d = std::sqrt(best);
    return occupancy_label(q) > 0 ? -d : d;
  }

  Aabb bounds() const { return mesh_bounds(segments_[0].mesh); }

 private:
  void rebuild_bvhs() {
    bvhs_.clear();
    bvhs_.reserve(segments_.size());
    for (auto& s : segments_) bvhs_.emplace_back(s.mesh);
  }

  std::vector<Segment> segments_;
  std::vector<Bvh> bvhs_;
};

// Reference implementations over raw triangles; test oracles only.
inline int occupancy_label_brute(const SegmentedObject& o, const Vec3& q) {
  for (int id = o.num_segments(); id >= 1; --id)
    if (mesh_contains_brute(o.segment(id).mesh, q)) return id;
  return 0;
}

inline double signed_distance_brute(const SegmentedObject& o, const Vec3& q) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : o.segments()) best = std::min(best, mesh_distance_brute(s.mesh, q));
  return occupancy_label_brute(o, q) > 0 ? -best : best;
}

inline double signed_distance(const SegmentedObject& o, const Vec3& q) { return o.signed_distance(q); }
inline int occupancy_label(const SegmentedObject& o, const Vec3& q) { return o.occupancy_label(q); }

// -----------------------------------------------------------------------------
// Observation clouds
// -----------------------------------------------------------------------------

// Uniform scale and offset mapping world coordinates into [-1,1]^3:
// normalized = scale * world + offset.
struct Normalization {
  double scale = 1.0;
  Vec3 offset = Vec3::Zero();

  Vec3 to_normalized(const Vec3& p) const { return scale * p + offset; }
  Vec3 to_world(const Vec3& q) const { return (q - offset) / scale; }
};

struct ObservationCloud {
  std::vector<Vec3> points;  // meters
  Normalization normalization;

  std::vector<Vec3> normalized_points() const {
    std::vector<Vec3> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(normalization.to_normalized(p));
    return out;
  }
};

// Centers the bounding box at the origin and scales its longest side to 2.
inline ObservationCloud normalize_cloud(std::vector<Vec3> points) {
  if (points.size() < 4) throw Error("normalize_cloud: need at least 4 points, got " + std::to_string(points.size()));
  const Aabb box = bounding_box(points);
  const double longest = box.extent().maxCoeff();
  if (!(longest > 0) || !std::isfinite(longest)) throw Error("normalize_cloud: degenerate bounding box");
  Vec3 mean = Vec3::Zero();
  for (const auto& p : points) mean += p;
  mean /= static_cast<double>(points.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : points) cov += (p - mean) * (p - mean).transpose();
  cov /= static_cast<double>(points.size());
  const Eigen::Vector3d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(cov, Eigen::EigenvaluesOnly).eigenvalues();
  if (ev[0] <= 1e-10 * ev[2]) throw Error("normalize_cloud: cloud is planar or collinear");

  ObservationCloud cloud;
  cloud.normalization.scale = 2.0 / longest;
  cloud.normalization.offset = -cloud.normalization.scale * box.center();
  cloud.points = std::move(points);
  return cloud;
}

// -----------------------------------------------------------------------------
// File formats
// -----------------------------------------------------------------------------

// One point per line: "x y z [extra columns...]". Blank lines and lines
// starting with '#' are skipped.
struct PointTable {
  std::vector<std::string> comments;
  std::vector<std::vector<double>> rows;
};

inline PointTable read_point_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  PointTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    if (line[first] == '#') {
      table.comments.push_back(line.substr(first + 1));
      continue;
    }
    std::istringstream ss(line);
    std::vector<double> row;
    double v;
    while (ss >> v) row.push_back(v);
    if (!ss.eof()) throw Error(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    if (row.size() < 3) throw Error(path.string() + ":" + std::to_string(lineno) + ": need at least x y z");
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline std::vector<Vec3> read_points(const std::filesystem::path& path) {
  std::vector<Vec3> pts;
  for (const auto& r : read_point_table(path).rows) pts.emplace_back(r[0], r[1], r[2]);
  return pts;
}

inline void write_point_table(const std::filesystem::path& path, const PointTable& table, int precision = 9) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  char buf[64];
  for (const auto& c : table.comments) out << '#' << c << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.*g", precision, row[i]);
      out << (i ? " " : "") << buf;
    }
    out << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

inline TriMesh read_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  TriMesh m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    if (tag == "v") {
      Vec3 p;
      if (!(ss >> p.x() >> p.y() >> p.z())) throw Error(path.string() + ":" + std::to_string(lineno) + ": bad vertex");
      m.vertices.push_back(p);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ss >> tok) {
        const int i = std::stoi(tok.substr(0, tok.find('/')));
        idx.push_back(i > 0 ? i - 1 : static_cast<int>(m.vertices.size()) + i);
      }
      if (idx.size() != 3) throw Error(path.string() + ":" + std::to_string(lineno) + ": only triangles are supported");
      m.triangles.push_back({idx[0], idx[1], idx[2]});
    }
  }
  return m;
}

inline void write_obj(const std::filesystem::path& path, const TriMesh& m) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(17);
  for (const auto& v : m.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : m.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

// Directory layout: manifest.json {"segments": [{"id": 1, "obj": "body.obj"}, ...]}
inline SegmentedObject load_segmented_object(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error("cannot open " + (dir / "manifest.json").string());
  const auto j = nlohmann::json::parse(in);
  std::vector<SegmentedObject::Segment> segs;
  for (const auto& s : j.at("segments")) segs.push_back({s.at("id").get<int>(), read_obj(dir / s.at("obj").get<std::string>())});
  return SegmentedObject(std::move(segs));
}

}  // namespace softocc

#pragma once

// Inside-outside sort-sampling of ground-truth occupancy points.

#include "softocc/geometry.hpp"

namespace softocc {

struct OccupancySample {
  Vec3 q = Vec3::Zero();
  int s = 0;       // segment label, 0 = outside
  double d = 0.0;  // signed distance to the nearest surface, negative inside
};

inline constexpr double kIssBoxExtension = 0.2;
inline constexpr std::uint64_t kIssDrawBudget = 10'000'000;

struct IssSegmentStats {
  int segment = 0;
  std::uint64_t draws = 0;
  std::size_t inside_candidates = 0, outside_candidates = 0;
  double kept_inside_max = 0, discarded_inside_min = std::numeric_limits<double>::infinity();
  double kept_outside_max = 0, discarded_outside_min = std::numeric_limits<double>::infinity();
};

struct IssResult {
  std::vector<OccupancySample> samples;  // world coordinates, 2*k per segment
  std::vector<IssSegmentStats> stats;
};

// For every segment: draw uniformly in its bounding box (extended 20% per
// side) until at least t inside and t outside points exist, sort each set by
// distance to that segment's surface, and keep the closest k of each. Kept
// points carry the global label and global signed distance.
inline IssResult iss_sample_detailed(const SegmentedObject& object, std::size_t t, std::size_t k, std::uint64_t seed) {
  if (k > t) throw Error("iss_sample: k must not exceed t");
  if (k == 0) throw Error("iss_sample: k must be positive");
  IssResult result;
  result.samples.reserve(2 * k * object.num_segments());
  for (int id = 1; id <= object.num_segments(); ++id) {
    const Aabb box = mesh_bounds(object.segment(id).mesh).enlarged(kIssBoxExtension);
    Rng rng(hash_all(seed, 0x155, id));
    std::vector<Vec3> inside, outside;
    IssSegmentStats st;
    st.segment = id;
    while (inside.size() < t || outside.size() < t) {
      if (++st.draws > kIssDrawBudget)
        throw Error("iss_sample: segment " + std::to_string(id) + " too thin for box sampling");
      const Vec3 p = rng.uniform_in_box(box.lo, box.hi);
      (object.segment_contains(id, p) ? inside : outside).push_back(p);
    }
    st.inside_candidates = inside.size();
    st.outside_candidates = outside.size();

    auto keep_closest = [&](const std::vector<Vec3>& pts, double& kept_max, double& discarded_min) {
      std::vector<std::pair<double, std::size_t>> order(pts.size());
      for (std::size_t i = 0; i < pts.size(); ++i) order[i] = {object.segment_distance(id, pts[i]), i};
      std::sort(order.begin(), order.end());
      for (std::size_t i = 0; i < order.size(); ++i) {
        if (i < k) {
          kept_max = std::max(kept_max, order[i].first);
          const Vec3& q = pts[order[i].second];
          result.samples.push_back({q, object.occupancy_label(q), object.signed_distance(q)});
        } else {
          discarded_min = std::min(discarded_min, order[i].first);
        }
      }
    };
    keep_closest(inside, st.kept_inside_max, st.discarded_inside_min);
    keep_closest(outside, st.kept_outside_max, st.discarded_outside_min);
    result.stats.push_back(st);
  }
  return result;
}

inline std::vector<OccupancySample> iss_sample(const SegmentedObject& object, std::size_t t, std::size_t k,
                                               std::uint64_t seed) {
  return iss_sample_detailed(object, t, k, seed).samples;
}

// Maps world-space samples into a cloud's normalized frame (distances scale
// with the uniform factor).
inline std::vector<OccupancySample> to_normalized(const std::vector<OccupancySample>& world, const Normalization& n) {
  std::vector<OccupancySample> out;
  out.reserve(world.size());
  for (const auto& s : world) out.push_back({n.to_normalized(s.q), s.s, s.d * n.scale});
  return out;
}

}  // namespace softocc

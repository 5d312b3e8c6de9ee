#pragma once

// Two-stage dense inference, ROI centroids and puncture planning.

#include "softocc/occnet.hpp"

#include <optional>
#include <unordered_map>

namespace softocc {

using RowMatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Per-query class probabilities and signed distances (normalized units).
struct QueryResult {
  RowMatD probs;
  Eigen::VectorXd sdist;
};

// Maps normalized query points (n x 3) to predictions for one observation.
using Predictor = std::function<QueryResult(const nn::Mat<float>&)>;

inline QueryResult to_query_result(const Prediction<float>& p) {
  return {nn::softmax(p.logits).cast<double>(), p.sdist.cast<double>()};
}

// Encodes the cloud once and decodes every query batch against that latent.
inline Predictor model_predictor(const OccModel& model, const PointsF& cloud,
                                 nn::DropoutMode mode = nn::DropoutMode::kEval, std::uint64_t seed = 0) {
  const nn::RowVec<float> z = encode_cloud(model, cloud);
  return [&model, z, mode, seed](const nn::Mat<float>& q) { return to_query_result(predict_latent(model, z, q, mode, seed)); };
}

// Ground-truth predictions from the true deformed geometry (upper bound).
inline Predictor oracle_predictor(const SegmentedObject& truth, const Normalization& norm) {
  return [&truth, norm](const nn::Mat<float>& q) {
    QueryResult r;
    r.probs = RowMatD::Zero(q.rows(), truth.num_segments() + 1);
    r.sdist.resize(q.rows());
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      const Vec3 w = norm.to_world(q.row(i).transpose().cast<double>());
      r.probs(i, truth.occupancy_label(w)) = 1.0;
      r.sdist[i] = truth.signed_distance(w) * norm.scale;
    }
    return r;
  };
}

struct DenseReconstruction {
  Normalization normalization;
  int num_classes = 0;
  std::vector<Vec3> normalized;  // query positions
  std::vector<Vec3> world;
  std::vector<int> labels;
  RowMatD probs;                 // n x num_classes
  std::vector<double> sdist;     // meters
  std::optional<std::vector<double>> uncertainties;
  bool empty = false;            // stage 1 found no occupied region
  Aabb occupied_box;             // stage-1 occupied box, normalized
  Aabb query_box;                // stage-2 sampling box, normalized

  std::size_t size() const { return labels.size(); }
};

struct DenseInferConfig {
  std::size_t n_coarse = 10000;
  std::size_t n_dense = 40000;
  std::uint64_t seed = 0;
  double coarse_extent = 1.5;
  double enlarge = 0.2;          // per side
  std::size_t min_occupied = 10;
  std::size_t retry_factor = 4;
};

namespace detail {

inline nn::Mat<float> uniform_queries(const Aabb& box, std::size_t n, std::uint64_t seed) {
  nn::Mat<float> q(static_cast<Eigen::Index>(n), 3);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) q.row(static_cast<Eigen::Index>(i)) = rng.uniform_in_box(box.lo, box.hi).cast<float>().transpose();
  return q;
}

inline std::vector<int> argmax_rows(const RowMatD& probs) {
  std::vector<int> out(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) probs.row(i).maxCoeff(&out[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace detail

inline DenseReconstruction dense_infer(const Predictor& predict_fn, const Normalization& norm, int num_classes,
                                       const DenseInferConfig& cfg) {
  DenseReconstruction rec;
  rec.normalization = norm;
  rec.num_classes = num_classes;
  rec.probs.resize(0, num_classes);

  const double e = cfg.coarse_extent;
  const Aabb coarse_box{Vec3::Constant(-e), Vec3::Constant(e)};
  std::size_t n_coarse = cfg.n_coarse;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const auto q = detail::uniform_queries(coarse_box, n_coarse, hash_all(cfg.seed, 0xc0a5, attempt));
    const auto labels = detail::argmax_rows(predict_fn(q).probs);
    Aabb box;
    std::size_t occupied = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == 0) continue;
      box.expand(Vec3(q.row(static_cast<Eigen::Index>(i)).transpose().cast<double>()));
      ++occupied;
    }
    if (occupied >= cfg.min_occupied) {
      rec.occupied_box = box;
      break;
    }
    if (attempt == 1) {
      rec.empty = true;
      return rec;
    }
    n_coarse *= cfg.retry_factor;
  }

  rec.query_box = rec.occupied_box.enlarged(cfg.enlarge);
  const auto q = detail::uniform_queries(rec.query_box, cfg.n_dense, hash_all(cfg.seed, 0xde45e));
  QueryResult r = predict_fn(q);
  rec.probs = std::move(r.probs);
  rec.labels = detail::argmax_rows(rec.probs);
  rec.normalized.reserve(cfg.n_dense);
  rec.world.reserve(cfg.n_dense);
  rec.sdist.reserve(cfg.n_dense);
  for (std::size_t i = 0; i < cfg.n_dense; ++i) {
    const Vec3 p = q.row(static_cast<Eigen::Index>(i)).transpose().cast<double>();
    rec.normalized.push_back(p);
    rec.world.push_back(norm.to_world(p));
    rec.sdist.push_back(r.sdist[static_cast<Eigen::Index>(i)] / norm.scale);
  }
  return rec;
}

inline DenseReconstruction dense_infer(const OccModel& model, const ObservationCloud& cloud, const DenseInferConfig& cfg) {
  const PointsF p = to_points_f(cloud.normalized_points());
  return dense_infer(model_predictor(model, p), cloud.normalization, model.num_classes(), cfg);
}

// -----------------------------------------------------------------------------
// Centroids
// -----------------------------------------------------------------------------

inline Vec3 geometric_centroid(const DenseReconstruction& rec, int segment) {
  Vec3 sum = Vec3::Zero();
  std::size_t n = 0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    if (rec.labels[i] != segment) continue;
    sum += rec.world[i];
    ++n;
  }
  if (n == 0) throw Error("segment " + std::to_string(segment) + " not reconstructed");
  return sum / static_cast<double>(n);
}

// Normalize uncertainties, convert to certainties, normalize again. Returns
// an empty vector when the uncertainties sum to zero.
inline std::vector<double> uwc_weights(const std::vector<double>& u) {
  double usum = 0;
  for (double v : u) usum += v;
  if (!(usum > 0)) return {};
  std::vector<double> c(u.size());
  double csum = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    c[i] = 1.0 - u[i] / usum;
    csum += c[i];
  }
  if (!(csum > 0)) return {};
  for (double& v : c) v /= csum;
  return c;
}

// Uncertainty-weighted centroid; falls back to the geometric centroid when
// every matching point has zero uncertainty.
inline Vec3 uwc_centroid(const DenseReconstruction& rec, int segment) {
  if (!rec.uncertainties) throw Error("uwc_centroid: reconstruction has no uncertainties");
  std::vector<double> u;
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    if (rec.labels[i] != segment) continue;
    u.push_back((*rec.uncertainties)[i]);
    pts.push_back(rec.world[i]);
  }
  if (pts.empty()) throw Error("segment " + std::to_string(segment) + " not reconstructed");
  if (pts.size() < 2) throw Error("uwc_centroid: segment " + std::to_string(segment) + " needs at least 2 points");
  const auto w = uwc_weights(u);
  if (w.empty()) return geometric_centroid(rec, segment);
  Vec3 c = Vec3::Zero();
  for (std::size_t i = 0; i < pts.size(); ++i) c += w[i] * pts[i];
  return c;
}

enum class CentroidMethod { kGeometric, kUwc };

inline CentroidMethod parse_centroid_method(const std::string& s) {
  if (s == "geo" || s == "geometric") return CentroidMethod::kGeometric;
  if (s == "uwc") return CentroidMethod::kUwc;
  throw Error("unknown centroid method '" + s + "' (expected geo or uwc)");
}

inline Vec3 centroid(const DenseReconstruction& rec, int segment, CentroidMethod m) {
  return m == CentroidMethod::kUwc ? uwc_centroid(rec, segment) : geometric_centroid(rec, segment);
}

// -----------------------------------------------------------------------------
// Puncture planning
// -----------------------------------------------------------------------------

// Mean distance from each point to its nearest neighbour, via a uniform grid.
inline double mean_nearest_neighbor_spacing(const std::vector<Vec3>& pts) {
  if (pts.size() < 2) throw Error("mean_nearest_neighbor_spacing: need at least 2 points");
  const Aabb box = bounding_box(pts);
  const Vec3 ext = box.extent().cwiseMax(1e-12);
  const double cell = std::cbrt(ext.prod() / static_cast<double>(pts.size())) * 1.5;
  auto key = [&](const Vec3& p, int dx, int dy, int dz) {
    const auto ix = static_cast<std::int64_t>(std::floor((p.x() - box.lo.x()) / cell)) + dx;
    const auto iy = static_cast<std::int64_t>(std::floor((p.y() - box.lo.y()) / cell)) + dy;
    const auto iz = static_cast<std::int64_t>(std::floor((p.z() - box.lo.z()) / cell)) + dz;
    return (ix * 73856093) ^ (iy * 19349663) ^ (iz * 83492791);
  };
  std::unordered_map<std::int64_t, std::vector<std::size_t>> grid;
  for (std::size_t i = 0; i < pts.size(); ++i) grid[key(pts[i], 0, 0, 0)].push_back(i);
  double total = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int ring = 1; !std::isfinite(best) || best > (ring - 1) * cell; ++ring) {
      best = std::numeric_limits<double>::infinity();
      for (int dx = -ring; dx <= ring; ++dx)
        for (int dy = -ring; dy <= ring; ++dy)
          for (int dz = -ring; dz <= ring; ++dz) {
            const auto it = grid.find(key(pts[i], dx, dy, dz));
            if (it == grid.end()) continue;
            for (std::size_t j : it->second)
              if (j != i) best = std::min(best, (pts[j] - pts[i]).norm());
          }
      if (ring > 64) break;
    }
    total += best;
  }
  return total / static_cast<double>(pts.size());
}

struct PuncturePlan {
  Vec3 target = Vec3::Zero();
  Vec3 entry = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double standoff = 0.05;

  Vec3 approach() const { return entry - standoff * direction; }
};

inline nlohmann::json to_json(const PuncturePlan& p) {
  return {{"target", vec_json(p.target)},
          {"entry", vec_json(p.entry)},
          {"direction", vec_json(p.direction)},
          {"standoff", p.standoff},
          {"approach", vec_json(p.approach())}};
}

inline constexpr double kDefaultStandoff = 0.05;
inline constexpr double kSurfaceBandFactor = 1.5;

// Points predicted just outside the body within the surface band; these
// approximate the outer surface (ROI boundaries are enclosed by label 1).
inline std::vector<std::size_t> surface_candidates(const DenseReconstruction& rec, double band) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < rec.size(); ++i)
    if (rec.labels[i] == 0 && std::abs(rec.sdist[i]) < band) out.push_back(i);
  return out;
}

inline double surface_band(const DenseReconstruction& rec) {
  return kSurfaceBandFactor * mean_nearest_neighbor_spacing(rec.world);
}

inline PuncturePlan plan_puncture(const DenseReconstruction& rec, const Vec3& target, double standoff = kDefaultStandoff,
                                  std::optional<double> band = std::nullopt) {
  if (rec.empty || rec.size() < 2) throw Error("plan_puncture: reconstruction is empty");
  if (!(standoff > 0)) throw Error("plan_puncture: standoff must be positive");
  const double eps = band ? *band : surface_band(rec);
  const auto cand = surface_candidates(rec, eps);
  if (cand.empty()) throw Error("plan_puncture: no surface-band points in reconstruction");
  std::size_t best = cand.front();
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i : cand) {
    const double d = (rec.world[i] - target).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  if (std::sqrt(best_d) < eps) throw Error("plan_puncture: target on surface");
  PuncturePlan plan;
  plan.target = target;
  plan.entry = rec.world[best];
  plan.direction = (target - plan.entry).normalized();
  plan.standoff = standoff;
  return plan;
}

// -----------------------------------------------------------------------------
// Reconstruction files
// -----------------------------------------------------------------------------
//
// Point table in world meters with columns x y z label p0..pC sdist [H];
// header comments carry the normalization and column layout.

inline void write_reconstruction(const std::filesystem::path& path, const DenseReconstruction& rec) {
  PointTable t;
  char buf[256];
  t.comments.push_back(" softocc-recon 1");
  std::snprintf(buf, sizeof(buf), " scale %.17g offset %.17g %.17g %.17g", rec.normalization.scale,
                rec.normalization.offset.x(), rec.normalization.offset.y(), rec.normalization.offset.z());
  t.comments.push_back(buf);
  t.comments.push_back(" classes " + std::to_string(rec.num_classes));
  t.comments.push_back(std::string(" empty ") + (rec.empty ? "1" : "0"));
  std::string cols = " columns x y z label";
  for (int c = 0; c < rec.num_classes; ++c) cols += " p" + std::to_string(c);
  cols += " sdist";
  if (rec.uncertainties) cols += " H";
  t.comments.push_back(cols);
  for (std::size_t i = 0; i < rec.size(); ++i) {
    std::vector<double> row{rec.world[i].x(), rec.world[i].y(), rec.world[i].z(), static_cast<double>(rec.labels[i])};
    for (int c = 0; c < rec.num_classes; ++c) row.push_back(rec.probs(static_cast<Eigen::Index>(i), c));
    row.push_back(rec.sdist[i]);
    if (rec.uncertainties) row.push_back((*rec.uncertainties)[i]);
    t.rows.push_back(std::move(row));
  }
  write_point_table(path, t, 9);
}

inline DenseReconstruction read_reconstruction(const std::filesystem::path& path) {
  const PointTable t = read_point_table(path);
  DenseReconstruction rec;
  bool has_h = false, seen_header = false;
  for (const auto& c : t.comments) {
    std::istringstream ss(c);
    std::string key;
    ss >> key;
    if (key == "softocc-recon") {
      seen_header = true;
    } else if (key == "scale") {
      std::string off;
      ss >> rec.normalization.scale >> off >> rec.normalization.offset.x() >> rec.normalization.offset.y() >>
          rec.normalization.offset.z();
    } else if (key == "classes") {
      ss >> rec.num_classes;
    } else if (key == "empty") {
      int e = 0;
      ss >> e;
      rec.empty = e != 0;
    } else if (key == "columns") {
      std::string col, last;
      while (ss >> col) last = col;
      has_h = last == "H";
    }
  }
  if (!seen_header || rec.num_classes < 2) throw Error(path.string() + ": not a reconstruction file");
  const std::size_t ncols = 5 + static_cast<std::size_t>(rec.num_classes) + (has_h ? 1 : 0);
  rec.probs.resize(static_cast<Eigen::Index>(t.rows.size()), rec.num_classes);
  if (has_h) rec.uncertainties.emplace();
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    if (r.size() != ncols) throw Error(path.string() + ": row " + std::to_string(i) + " has wrong column count");
    const Vec3 w(r[0], r[1], r[2]);
    rec.world.push_back(w);
    rec.normalized.push_back(rec.normalization.to_normalized(w));
    rec.labels.push_back(static_cast<int>(r[3]));
    for (int c = 0; c < rec.num_classes; ++c) rec.probs(static_cast<Eigen::Index>(i), c) = r[4 + static_cast<std::size_t>(c)];
    rec.sdist.push_back(r[4 + static_cast<std::size_t>(rec.num_classes)]);
    if (has_h) rec.uncertainties->push_back(r.back());
  }
  return rec;
}

}  // namespace softocc

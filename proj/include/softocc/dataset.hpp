#pragma once

// Training data: deformed priors observed by a randomized camera, labelled by
// inside-outside sort-sampling, written to a directory with a JSON manifest.

#include "softocc/iss.hpp"
#include "softocc/phantoms.hpp"

#include <Eigen/Core>

#include <cstdio>

namespace softocc {

inline constexpr int kDatasetVersion = 1;
inline constexpr int kCameraAttempts = 10;

// One simulated observation of a deformed prior.
struct Scene {
  std::uint64_t seed = 0;
  DeformationField field;
  SegmentedObject object;  // deformed
  VirtualCamera camera;
  ObservationCloud cloud;
};

inline Scene simulate_scene(const Prior& prior, std::uint64_t seed) {
  Scene s;
  s.seed = seed;
  s.field = sample_deformation(prior.deformation, prior.object, hash_all(seed, 0xdef));
  s.object = deform(prior.object, s.field);
  for (int attempt = 0;; ++attempt) {
    s.camera = sample_camera(prior.camera, s.object.bounds(), hash_all(seed, 0xca, attempt));
    try {
      s.cloud = render_cloud(s.object, s.camera);
      return s;
    } catch (const Error&) {
      if (attempt + 1 >= kCameraAttempts)
        throw Error("simulate_scene: no usable camera after " + std::to_string(kCameraAttempts) +
                    " attempts (seed " + std::to_string(seed) + ")");
    }
  }
}

struct TrainingSample {
  std::size_t index = 0;
  Scene scene;
  std::vector<OccupancySample> qgt;  // normalized frame of scene.cloud
};

inline std::uint64_t sample_seed(std::uint64_t dataset_seed, std::size_t index) {
  return hash_all(dataset_seed, 0xda7a, index);
}

inline constexpr double kFarFieldExtent = 1.5;

// Uniform samples over the normalized cube [-1.5, 1.5]^3 that inference
// scans, labelled against the deformed object.
inline std::vector<OccupancySample> far_field_samples(const SegmentedObject& object, const Normalization& norm,
                                                      std::size_t n, std::uint64_t seed) {
  std::vector<OccupancySample> out;
  out.reserve(n);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 q = rng.uniform_in_box(Vec3::Constant(-kFarFieldExtent), Vec3::Constant(kFarFieldExtent));
    const Vec3 w = norm.to_world(q);
    out.push_back({q, object.occupancy_label(w), object.signed_distance(w) * norm.scale});
  }
  return out;
}

inline TrainingSample make_training_sample(const Prior& prior, std::size_t t, std::size_t k, std::uint64_t dataset_seed,
                                           std::size_t index, std::size_t far_field = 0) {
  TrainingSample ts;
  ts.index = index;
  ts.scene = simulate_scene(prior, sample_seed(dataset_seed, index));
  ts.qgt = to_normalized(iss_sample(ts.scene.object, t, k, hash_all(ts.scene.seed, 0x155)),
                         ts.scene.cloud.normalization);
  if (far_field > 0) {
    const auto far = far_field_samples(ts.scene.object, ts.scene.cloud.normalization, far_field, hash_all(ts.scene.seed, 0xfa7));
    ts.qgt.insert(ts.qgt.end(), far.begin(), far.end());
  }
  return ts;
}

struct DatasetSpec {
  std::size_t n_samples = 2000;
  std::size_t t = 128;
  std::size_t k = 128;
  std::uint64_t seed = 1;
  std::size_t far_field = 0;  // extra uniform samples per scene, appended after the sorted ones
};

namespace detail {

inline std::string sample_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%06zu", i);
  return buf;
}

inline void write_sample_files(const std::filesystem::path& dir, const TrainingSample& ts) {
  const std::string stem = sample_stem(ts.index);
  PointTable cloud;
  cloud.comments.push_back(" x y z (meters)");
  for (const auto& p : ts.scene.cloud.points) cloud.rows.push_back({p.x(), p.y(), p.z()});
  write_point_table(dir / (stem + "_cloud.txt"), cloud, 17);
  PointTable q;
  q.comments.push_back(" x y z label sdist (normalized)");
  for (const auto& s : ts.qgt) q.rows.push_back({s.q.x(), s.q.y(), s.q.z(), static_cast<double>(s.s), s.d});
  write_point_table(dir / (stem + "_qgt.txt"), q, 9);
}

}  // namespace detail

// Writes manifest.json, prior/ and one cloud + ground-truth file pair per
// sample. Reruns with the same inputs produce byte-identical files.
inline void generate_dataset(const Prior& prior, const DatasetSpec& spec, const std::filesystem::path& dir,
                             int threads = 0) {
  if (spec.n_samples == 0) throw Error("generate_dataset: n_samples must be positive");
  std::filesystem::create_directories(dir);
  save_prior(prior, dir / "prior");

  std::vector<nlohmann::json> records(spec.n_samples);
  parallel_for(
      spec.n_samples,
      [&](std::size_t i) {
        const TrainingSample ts = make_training_sample(prior, spec.t, spec.k, spec.seed, i, spec.far_field);
        detail::write_sample_files(dir, ts);
        nlohmann::json r;
        const std::string stem = detail::sample_stem(i);
        r["id"] = i;
        r["seed"] = ts.scene.seed;
        r["cloud"] = stem + "_cloud.txt";
        r["qgt"] = stem + "_qgt.txt";
        r["points"] = ts.scene.cloud.points.size();
        r["scale"] = ts.scene.cloud.normalization.scale;
        r["offset"] = vec_json(ts.scene.cloud.normalization.offset);
        r["deformation"] = to_json(ts.scene.field);
        r["camera"] = to_json(ts.scene.camera);
        records[i] = std::move(r);
      },
      threads);

  nlohmann::json m;
  m["format"] = "softocc-dataset";
  m["version"] = kDatasetVersion;
  m["object"] = prior.name;
  m["num_segments"] = prior.object.num_segments();
  m["t"] = spec.t;
  m["k"] = spec.k;
  m["far_field"] = spec.far_field;
  m["count"] = spec.n_samples;
  m["seed"] = spec.seed;
  m["samples"] = std::move(records);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error("cannot write " + (dir / "manifest.json").string());
  out << m.dump(1) << '\n';
  if (!out) throw Error("write failed: " + (dir / "manifest.json").string());
}

// -----------------------------------------------------------------------------
// Loading
// -----------------------------------------------------------------------------

// Row-major n x 3 point block.
using PointsF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LoadedSample {
  PointsF cloud;    // normalized
  PointsF queries;  // normalized
  std::vector<int> labels;
  Eigen::VectorXf sdist;  // normalized units
  double scale = 1.0;
};

struct Dataset {
  std::string object;
  int num_segments = 0;
  std::size_t t = 0, k = 0, far_field = 0;
  std::uint64_t seed = 0;
  std::vector<LoadedSample> samples;
};

inline PointsF to_points_f(const std::vector<Vec3>& pts) {
  PointsF m(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = pts[i].cast<float>().transpose();
  return m;
}

inline Dataset load_dataset(const std::filesystem::path& dir, std::size_t limit = 0, int threads = 0) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw Error("cannot open " + manifest_path.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw Error(manifest_path.string() + ": " + e.what());
  }
  if (m.value("format", "") != "softocc-dataset") throw Error(manifest_path.string() + ": not a dataset manifest");
  if (m.value("version", 0) != kDatasetVersion)
    throw Error(manifest_path.string() + ": unsupported dataset version " + std::to_string(m.value("version", 0)));
  Dataset ds;
  ds.object = m.value("object", "");
  ds.num_segments = m.at("num_segments").get<int>();
  ds.t = m.at("t").get<std::size_t>();
  ds.k = m.at("k").get<std::size_t>();
  ds.seed = m.at("seed").get<std::uint64_t>();
  ds.far_field = m.value("far_field", std::size_t{0});
  const auto& recs = m.at("samples");
  std::size_t n = recs.size();
  if (limit > 0) n = std::min(n, limit);
  ds.samples.resize(n);
  const std::size_t expected = 2 * ds.k * static_cast<std::size_t>(ds.num_segments) + ds.far_field;
  parallel_for(
      n,
      [&](std::size_t i) {
        const auto& r = recs.at(i);
        const ObservationCloud cloud = normalize_cloud(read_points(dir / r.at("cloud").get<std::string>()));
        const double scale = r.at("scale").get<double>();
        if (std::abs(cloud.normalization.scale - scale) > 1e-9 * scale)
          throw Error("dataset sample " + std::to_string(i) + ": normalization does not match manifest");
        LoadedSample& s = ds.samples[i];
        s.scale = scale;
        s.cloud = to_points_f(cloud.normalized_points());
        const auto qpath = dir / r.at("qgt").get<std::string>();
        const PointTable q = read_point_table(qpath);
        if (q.rows.size() != expected)
          throw Error(qpath.string() + ": expected " + std::to_string(expected) + " rows, got " +
                      std::to_string(q.rows.size()));
        s.queries.resize(static_cast<Eigen::Index>(q.rows.size()), 3);
        s.labels.resize(q.rows.size());
        s.sdist.resize(static_cast<Eigen::Index>(q.rows.size()));
        for (std::size_t j = 0; j < q.rows.size(); ++j) {
          const auto& row = q.rows[j];
          if (row.size() < 5) throw Error(qpath.string() + ": row " + std::to_string(j) + " needs 5 columns");
          const auto jj = static_cast<Eigen::Index>(j);
          s.queries.row(jj) << static_cast<float>(row[0]), static_cast<float>(row[1]), static_cast<float>(row[2]);
          s.labels[j] = static_cast<int>(row[3]);
          if (s.labels[j] < 0 || s.labels[j] > ds.num_segments)
            throw Error(qpath.string() + ": label out of range on row " + std::to_string(j));
          s.sdist[jj] = static_cast<float>(row[4]);
        }
      },
      threads);
  return ds;
}

// Keeps round((1 - fraction) * n) points, at least `min_keep`, chosen by a
// seeded partial shuffle; kept points retain their original order.
inline PointsF drop_points(const PointsF& cloud, double fraction, std::uint64_t seed, Eigen::Index min_keep = 16) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw Error("drop_points: fraction must be in [0, 1)");
  const Eigen::Index n = cloud.rows();
  Eigen::Index keep = static_cast<Eigen::Index>(std::llround((1.0 - fraction) * static_cast<double>(n)));
  keep = std::min(n, std::max(keep, min_keep));
  if (keep == n) return cloud;
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  for (Eigen::Index i = 0; i < keep; ++i) {
    const auto j = i + static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  std::sort(idx.begin(), idx.begin() + keep);
  PointsF out(keep, 3);
  for (Eigen::Index i = 0; i < keep; ++i) out.row(i) = cloud.row(idx[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace softocc

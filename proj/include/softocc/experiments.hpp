#pragma once

// Experiment drivers: accuracy/timing/uncertainty sweeps over held-out
// deformations and a synthetic end-to-end puncture evaluation.

#include "softocc/analysis.hpp"

#include <chrono>
#include <cstdio>
#include <iomanip>

namespace softocc {

inline std::uint64_t eval_scene_seed(std::uint64_t seed, std::size_t i) { return hash_all(seed, 0xe7a1, i); }

// Isotropic Gaussian noise on normalized points.
inline PointsF add_noise(const PointsF& cloud, double sigma, std::uint64_t seed) {
  if (sigma <= 0) return cloud;
  PointsF out = cloud;
  Rng rng(hash_all(seed, 0x0153));
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (int a = 0; a < 3; ++a) out(i, a) += static_cast<float>(sigma * rng.normal());
  return out;
}

inline std::vector<Vec3> true_roi_centroids(const SegmentedObject& o) {
  std::vector<Vec3> c;
  for (int id = 2; id <= o.num_segments(); ++id) c.push_back(volume_centroid(o.segment(id).mesh));
  return c;
}

// Flags observed points whose nearest deformed body vertex moved by at least
// `fraction` of the largest body displacement.
inline std::vector<bool> interaction_points(const Prior& prior, const Scene& scene, double fraction = 0.5) {
  const auto& rest = prior.object.segment(1).mesh.vertices;
  const auto& moved = scene.object.segment(1).mesh.vertices;
  if (rest.size() != moved.size()) throw Error("interaction_points: deformed body does not match the prior");
  std::vector<double> disp(rest.size());
  double max_disp = 0;
  for (std::size_t v = 0; v < rest.size(); ++v) {
    disp[v] = (moved[v] - rest[v]).norm();
    max_disp = std::max(max_disp, disp[v]);
  }
  std::vector<bool> out(scene.cloud.points.size(), false);
  if (!(max_disp > 0)) return out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < moved.size(); ++v) {
      const double d = (moved[v] - scene.cloud.points[i]).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = v;
      }
    }
    out[i] = disp[best] >= fraction * max_disp;
  }
  return out;
}

// Mean over ROIs of the centroid error in millimeters; a missing ROI counts
// as an infinite error.
inline double mean_centroid_error_mm(const DenseReconstruction& rec, const SegmentedObject& truth, CentroidMethod m) {
  if (truth.num_segments() < 2) throw Error("centroid error: object has no ROI segments");
  const auto gt = true_roi_centroids(truth);
  double sum = 0;
  for (int id = 2; id <= truth.num_segments(); ++id) {
    if (rec.empty) return std::numeric_limits<double>::infinity();
    try {
      sum += 1e3 * (centroid(rec, id, m) - gt[static_cast<std::size_t>(id - 2)]).norm();
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  }
  return sum / static_cast<double>(gt.size());
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::uint64_t hash_string(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return splitmix64(h);
}

inline std::string config_hash(const nlohmann::json& j) { return hex64(hash_string(j.dump())).substr(0, 12); }

inline std::string fmt(double v, int precision = 9) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
  return buf;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw Error("median of empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) throw Error("mean of empty list");
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// -----------------------------------------------------------------------------
// Sweeps
// -----------------------------------------------------------------------------

struct ExperimentConfig {
  std::string object = "cylinder-phantom";
  std::vector<std::size_t> query_points{10000, 20000, 40000, 80000};
  std::vector<double> noise{0.0, 0.01, 0.03};
  std::vector<double> drop{0.0, 0.5};
  std::vector<std::string> methods{"activation", "mcd"};
  std::size_t repetitions = 50;
  std::size_t n_coarse = 10000;
  std::size_t uncertainty_queries = 20000;
  int mc_passes = kDefaultMcPasses;
  std::uint64_t seed = 1;
  bool timing = true;
  bool uncertainty = true;
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"object", c.object},
          {"query_points", c.query_points},
          {"noise", c.noise},
          {"drop", c.drop},
          {"methods", c.methods},
          {"repetitions", c.repetitions},
          {"n_coarse", c.n_coarse},
          {"uncertainty_queries", c.uncertainty_queries},
          {"mc_passes", c.mc_passes},
          {"seed", c.seed},
          {"timing", c.timing},
          {"uncertainty", c.uncertainty}};
}

// One held-out observation prepared for inference.
struct EvalCase {
  Scene scene;
  PointsF cloud;  // normalized, after drop and noise
};

inline EvalCase make_eval_case(const Prior& prior, std::uint64_t seed, std::size_t i, double noise, double drop) {
  EvalCase c{simulate_scene(prior, eval_scene_seed(seed, i)), {}};
  PointsF p = to_points_f(c.scene.cloud.normalized_points());
  if (drop > 0) p = drop_points(p, drop, hash_all(seed, 0xd409, i));
  c.cloud = add_noise(p, noise, hash_all(seed, 0x0153, i));
  return c;
}

struct TimingRow {
  std::size_t query_points = 0;
  std::vector<double> errors_mm;  // per deformation
  std::vector<double> times_ms;
};

struct UncertaintyRow {
  double noise = 0, drop = 0;
  std::string method;
  std::vector<double> h_global;
};

struct CentroidRow {
  double noise = 0, drop = 0;
  std::string centroid_method;
  std::vector<double> errors_mm;
};

struct SweepResult {
  std::string hash;
  std::vector<TimingRow> timing;
  std::vector<UncertaintyRow> uncertainty;
  std::vector<CentroidRow> centroids;
};

inline SweepResult run_sweep(const OccModel& model, const Prior& prior, const ExperimentConfig& cfg, int threads = 0) {
  require_segments(model, prior.object.num_segments());
  if (cfg.repetitions == 0) throw Error("run_sweep: repetitions must be positive");
  SweepResult res;
  res.hash = config_hash(to_json(cfg));

  if (cfg.timing) {
    std::vector<EvalCase> cases;
    for (std::size_t i = 0; i < cfg.repetitions; ++i) cases.push_back(make_eval_case(prior, cfg.seed, i, 0.0, 0.0));
    for (const std::size_t qp : cfg.query_points) {
      TimingRow row{qp, {}, {}};
      for (std::size_t i = 0; i < cases.size(); ++i) {
        DenseInferConfig dc;
        dc.n_coarse = cfg.n_coarse;
        dc.n_dense = qp;
        dc.seed = hash_all(cfg.seed, 0x1f, i);
        const auto t0 = std::chrono::steady_clock::now();
        const DenseReconstruction rec =
            dense_infer(model_predictor(model, cases[i].cloud), cases[i].scene.cloud.normalization, model.num_classes(), dc);
        std::vector<Vec3> centroids;
        for (int id = 2; id <= prior.object.num_segments() && !rec.empty; ++id) {
          try {
            centroids.push_back(geometric_centroid(rec, id));
          } catch (const Error&) {
          }
        }
        const auto t1 = std::chrono::steady_clock::now();
        row.times_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        row.errors_mm.push_back(mean_centroid_error_mm(rec, cases[i].scene.object, CentroidMethod::kGeometric));
      }
      res.timing.push_back(std::move(row));
    }
  }

  if (cfg.uncertainty) {
    for (const double noise : cfg.noise) {
      for (const double drop : cfg.drop) {
        std::vector<EvalCase> cases(cfg.repetitions);
        parallel_for(cfg.repetitions, [&](std::size_t i) { cases[i] = make_eval_case(prior, cfg.seed, i, noise, drop); }, threads);
        // geometric centroid from the deterministic reconstruction
        CentroidRow geo{noise, drop, "geo", std::vector<double>(cfg.repetitions)};
        std::vector<UncertaintyRow> urows;
        std::vector<CentroidRow> crows;
        for (const auto& method_name : cfg.methods) {
          const auto method = parse_uncertainty_method(method_name);
          UncertaintyRow ur{noise, drop, to_string(method), std::vector<double>(cfg.repetitions)};
          CentroidRow cr{noise, drop, "uwc-" + to_string(method), std::vector<double>(cfg.repetitions)};
          parallel_for(
              cfg.repetitions,
              [&](std::size_t i) {
                ObservationCloud oc;
                oc.normalization = cases[i].scene.cloud.normalization;
                DenseInferConfig dc;
                dc.n_coarse = cfg.n_coarse;
                dc.n_dense = cfg.uncertainty_queries;
                dc.seed = hash_all(cfg.seed, 0x2f, i);
                const Predictor eval = model_predictor(model, cases[i].cloud);
                DenseReconstruction rec = dense_infer(eval, oc.normalization, model.num_classes(), dc);
                if (rec.empty) {
                  ur.h_global[i] = std::log(static_cast<double>(model.num_classes()));
                  cr.errors_mm[i] = std::numeric_limits<double>::infinity();
                  if (method == UncertaintyMethod::kActivation) geo.errors_mm[i] = cr.errors_mm[i];
                  return;
                }
                if (method == UncertaintyMethod::kActivation) {
                  geo.errors_mm[i] = mean_centroid_error_mm(rec, cases[i].scene.object, CentroidMethod::kGeometric);
                  rec.uncertainties = row_entropies(rec.probs);
                } else {
                  nn::Mat<float> q(static_cast<Eigen::Index>(rec.size()), 3);
                  for (std::size_t k = 0; k < rec.size(); ++k) q.row(static_cast<Eigen::Index>(k)) = rec.normalized[k].cast<float>().transpose();
                  QueryResult r = mcd_predictor(model, cases[i].cloud, cfg.mc_passes, hash_all(dc.seed, 0x3c))(q);
                  rec.probs = std::move(r.probs);
                  rec.labels = detail::argmax_rows(rec.probs);
                  rec.uncertainties = row_entropies(rec.probs);
                }
                ur.h_global[i] = global_uncertainty(*rec.uncertainties);
                cr.errors_mm[i] = mean_centroid_error_mm(rec, cases[i].scene.object, CentroidMethod::kUwc);
              },
              threads);
          urows.push_back(std::move(ur));
          crows.push_back(std::move(cr));
        }
        for (auto& u : urows) res.uncertainty.push_back(std::move(u));
        if (std::find(cfg.methods.begin(), cfg.methods.end(), "activation") != cfg.methods.end())
          res.centroids.push_back(std::move(geo));
        for (auto& c : crows) res.centroids.push_back(std::move(c));
      }
    }
  }
  return res;
}

// Writes timing_<hash>.csv, uncertainty_<hash>.csv, centroid_<hash>.csv and
// config_<hash>.json; returns the paths written.
inline std::vector<std::filesystem::path> write_sweep(const SweepResult& r, const ExperimentConfig& cfg,
                                                      const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  auto open = [&](const std::string& name) {
    paths.push_back(dir / name);
    std::ofstream out(paths.back());
    if (!out) throw Error("cannot write " + paths.back().string());
    return out;
  };
  {
    auto out = open("config_" + r.hash + ".json");
    out << to_json(cfg).dump(2) << '\n';
  }
  if (cfg.timing) {
    auto out = open("timing_" + r.hash + ".csv");
    out << "query_points,mean_centroid_err,mean_time_ms\n";
    for (const auto& row : r.timing) out << row.query_points << ',' << fmt(mean(row.errors_mm)) << ',' << fmt(mean(row.times_ms)) << '\n';
  }
  if (cfg.uncertainty) {
    auto out = open("uncertainty_" + r.hash + ".csv");
    out << "noise,drop,method,H_global\n";
    for (const auto& row : r.uncertainty)
      out << fmt(row.noise) << ',' << fmt(row.drop) << ',' << row.method << ',' << fmt(mean(row.h_global)) << '\n';
    auto cout = open("centroid_" + r.hash + ".csv");
    cout << "noise,drop,centroid_method,err\n";
    for (const auto& row : r.centroids)
      cout << fmt(row.noise) << ',' << fmt(row.drop) << ',' << row.centroid_method << ',' << fmt(mean(row.errors_mm)) << '\n';
  }
  return paths;
}

// -----------------------------------------------------------------------------
// End-to-end puncture evaluation
// -----------------------------------------------------------------------------

struct PunctureConfig {
  std::size_t repetitions = 10;
  std::size_t n_coarse = 10000;
  std::size_t n_dense = 40000;
  CentroidMethod centroid = CentroidMethod::kGeometric;
  double standoff = kDefaultStandoff;
  std::uint64_t seed = 1;
  bool oracle = false;  // use ground-truth predictions instead of the model
};

inline nlohmann::json to_json(const PunctureConfig& c) {
  return {{"repetitions", c.repetitions},
          {"n_coarse", c.n_coarse},
          {"n_dense", c.n_dense},
          {"centroid", c.centroid == CentroidMethod::kUwc ? "uwc" : "geo"},
          {"standoff", c.standoff},
          {"seed", c.seed},
          {"oracle", c.oracle}};
}

struct PunctureRow {
  std::size_t deformation = 0;
  int segment = 0;
  bool hit = false;
  double centroid_error_mm = std::numeric_limits<double>::infinity();
  std::string status;  // "ok" or the failure reason
  PuncturePlan plan;
};

struct PunctureSummary {
  std::string hash;
  std::vector<PunctureRow> rows;

  double hit_rate() const {
    if (rows.empty()) return 0.0;
    std::size_t h = 0;
    for (const auto& r : rows) h += r.hit;
    return static_cast<double>(h) / static_cast<double>(rows.size());
  }
};

inline PunctureSummary end_to_end_puncture_eval(const OccModel* model, const Prior& prior, const PunctureConfig& cfg,
                                                int threads = 0) {
  if (!cfg.oracle) {
    if (!model) throw Error("eval-puncture: no model given (train one with `softocc train`, or pass --oracle)");
    require_segments(*model, prior.object.num_segments());
  }
  const int nseg = prior.object.num_segments();
  if (nseg < 2) throw Error("eval-puncture: prior has no ROI segments");
  PunctureSummary out;
  nlohmann::json hj = to_json(cfg);
  hj["object"] = prior.name;
  out.hash = config_hash(hj);
  std::vector<std::vector<PunctureRow>> per(cfg.repetitions);
  parallel_for(
      cfg.repetitions,
      [&](std::size_t i) {
        const EvalCase ec = make_eval_case(prior, cfg.seed, i, 0.0, 0.0);
        const SegmentedObject& truth = ec.scene.object;
        DenseInferConfig dc;
        dc.n_coarse = cfg.n_coarse;
        dc.n_dense = cfg.n_dense;
        dc.seed = hash_all(cfg.seed, 0x9c, i);
        const int classes = nseg + 1;
        DenseReconstruction rec;
        if (cfg.oracle) {
          rec = dense_infer(oracle_predictor(truth, ec.scene.cloud.normalization), ec.scene.cloud.normalization, classes, dc);
        } else if (cfg.centroid == CentroidMethod::kUwc) {
          rec = uncertainty_reconstruction(*model, ec.scene.cloud, UncertaintyMethod::kMcd, dc);
        } else {
          rec = dense_infer(model_predictor(*model, ec.cloud), ec.scene.cloud.normalization, classes, dc);
        }
        if (cfg.centroid == CentroidMethod::kUwc && !rec.uncertainties) rec.uncertainties = row_entropies(rec.probs);
        const auto gt = true_roi_centroids(truth);
        for (int id = 2; id <= nseg; ++id) {
          PunctureRow row;
          row.deformation = i;
          row.segment = id;
          try {
            if (rec.empty) throw Error("reconstruction empty");
            const Vec3 target = centroid(rec, id, cfg.centroid);
            row.centroid_error_mm = 1e3 * (target - gt[static_cast<std::size_t>(id - 2)]).norm();
            row.plan = plan_puncture(rec, target, cfg.standoff);
            row.hit = truth.segment_contains(id, row.plan.target);
            row.status = "ok";
          } catch (const Error& e) {
            row.status = e.what();
          }
          per[i].push_back(std::move(row));
        }
      },
      threads);
  for (auto& v : per)
    for (auto& r : v) out.rows.push_back(std::move(r));
  return out;
}

inline std::filesystem::path write_puncture(const PunctureSummary& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto path = dir / ("puncture_" + s.hash + ".csv");
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "deformation,segment,hit,centroid_err_mm,target_x,target_y,target_z,entry_x,entry_y,entry_z,status\n";
  for (const auto& r : s.rows) {
    out << r.deformation << ',' << r.segment << ',' << (r.hit ? 1 : 0) << ',' << fmt(r.centroid_error_mm);
    for (int a = 0; a < 3; ++a) out << ',' << fmt(r.plan.target[a]);
    for (int a = 0; a < 3; ++a) out << ',' << fmt(r.plan.entry[a]);
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    out << ',' << status << '\n';
  }
  return path;
}

}  // namespace softocc

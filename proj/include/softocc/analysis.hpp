#pragma once

// Per-point predictive entropy (single pass or Monte-Carlo dropout), global
// uncertainty, and masking-based explainability.

#include "softocc/reconstruct.hpp"

namespace softocc {

inline constexpr double kEntropyEps = 1e-12;
inline constexpr int kDefaultMcPasses = 30;

inline double entropy(const double* p, int n) {
  double h = 0;
  for (int j = 0; j < n; ++j) h -= p[j] * std::log(p[j] + kEntropyEps);
  return std::max(0.0, h);
}

inline std::vector<double> row_entropies(const RowMatD& probs) {
  std::vector<double> h(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) h[static_cast<std::size_t>(i)] = entropy(probs.row(i).data(), static_cast<int>(probs.cols()));
  return h;
}

inline std::vector<double> activation_entropy(const OccModel& model, const PointsF& cloud, const nn::Mat<float>& queries) {
  return row_entropies(to_query_result(predict(model, cloud, queries)).probs);
}

// Averages probabilities and distances over one stochastic pass per seed.
inline Predictor mcd_predictor(const OccModel& model, const PointsF& cloud, std::vector<std::uint64_t> pass_seeds) {
  if (model.config.dropout <= 0.0) throw Error("mcd requires dropout");
  if (pass_seeds.empty()) throw Error("mcd: need at least one pass");
  const nn::RowVec<float> z = encode_cloud(model, cloud);
  return [&model, z, seeds = std::move(pass_seeds)](const nn::Mat<float>& q) {
    QueryResult acc;
    acc.probs = RowMatD::Zero(q.rows(), model.num_classes());
    acc.sdist = Eigen::VectorXd::Zero(q.rows());
    for (const std::uint64_t s : seeds) {
      const QueryResult r = to_query_result(predict_latent(model, z, q, nn::DropoutMode::kMc, s));
      acc.probs += r.probs;
      acc.sdist += r.sdist;
    }
    acc.probs /= static_cast<double>(seeds.size());
    acc.sdist /= static_cast<double>(seeds.size());
    return acc;
  };
}

inline std::vector<std::uint64_t> mc_pass_seeds(int m, std::uint64_t seed) {
  if (m < 1) throw Error("mcd: m must be at least 1");
  std::vector<std::uint64_t> s;
  for (int i = 0; i < m; ++i) s.push_back(hash_all(seed, 0x3cd, i));
  return s;
}

inline Predictor mcd_predictor(const OccModel& model, const PointsF& cloud, int m, std::uint64_t seed) {
  return mcd_predictor(model, cloud, mc_pass_seeds(m, seed));
}

inline std::vector<double> mcd_entropy(const OccModel& model, const PointsF& cloud, const nn::Mat<float>& queries,
                                       const std::vector<std::uint64_t>& pass_seeds) {
  return row_entropies(mcd_predictor(model, cloud, pass_seeds)(queries).probs);
}

inline std::vector<double> mcd_entropy(const OccModel& model, const PointsF& cloud, const nn::Mat<float>& queries,
                                       int m = kDefaultMcPasses, std::uint64_t seed = 0) {
  return mcd_entropy(model, cloud, queries, mc_pass_seeds(m, seed));
}

inline double global_uncertainty(const std::vector<double>& h) {
  if (h.empty()) throw Error("global_uncertainty: no entropy values");
  double s = 0;
  for (double v : h) s += v;
  return s / static_cast<double>(h.size());
}

enum class UncertaintyMethod { kActivation, kMcd };

inline UncertaintyMethod parse_uncertainty_method(const std::string& s) {
  if (s == "activation") return UncertaintyMethod::kActivation;
  if (s == "mcd") return UncertaintyMethod::kMcd;
  throw Error("unknown uncertainty method '" + s + "' (expected activation or mcd)");
}

inline std::string to_string(UncertaintyMethod m) { return m == UncertaintyMethod::kMcd ? "mcd" : "activation"; }

// Dense reconstruction with per-point entropies over the stage-2 query set.
// Stage 1 uses the deterministic model; with MCD the stage-2 predictions are
// the averages of the m stochastic passes.
inline DenseReconstruction uncertainty_reconstruction(const OccModel& model, const ObservationCloud& cloud,
                                                      UncertaintyMethod method, const DenseInferConfig& cfg,
                                                      int m = kDefaultMcPasses) {
  const PointsF p = to_points_f(cloud.normalized_points());
  const Predictor eval = model_predictor(model, p);
  if (method == UncertaintyMethod::kActivation) {
    DenseReconstruction rec = dense_infer(eval, cloud.normalization, model.num_classes(), cfg);
    rec.uncertainties = row_entropies(rec.probs);
    return rec;
  }
  DenseReconstruction probe = dense_infer(eval, cloud.normalization, model.num_classes(), cfg);
  if (probe.empty) return probe;
  const Predictor mc = mcd_predictor(model, p, m, hash_all(cfg.seed, 0x3c));
  nn::Mat<float> q(static_cast<Eigen::Index>(probe.size()), 3);
  for (std::size_t i = 0; i < probe.size(); ++i) q.row(static_cast<Eigen::Index>(i)) = probe.normalized[i].cast<float>().transpose();
  QueryResult r = mc(q);
  probe.probs = std::move(r.probs);
  probe.labels = detail::argmax_rows(probe.probs);
  for (std::size_t i = 0; i < probe.size(); ++i) probe.sdist[i] = r.sdist[static_cast<Eigen::Index>(i)] / cloud.normalization.scale;
  probe.uncertainties = row_entropies(probe.probs);
  return probe;
}

// -----------------------------------------------------------------------------
// Masking-based explainability
// -----------------------------------------------------------------------------

struct ExplainConfig {
  std::size_t n_queries = 40000;
  double radius_frac = 0.2;  // of the longest side of the cloud's bounding box
  double extent = 1.5;
  std::size_t stride = 1;    // evaluate every stride-th input point
  std::uint64_t seed = 0;
};

struct ExplainabilityMap {
  double radius = 0;                // normalized units
  std::vector<double> scores;       // one per input point
  std::vector<bool> evaluated;      // false where the score was interpolated
  std::vector<bool> emptied;        // masked cloud fell below the encoder minimum
  std::size_t n_queries = 0;
};

// Fraction of queries whose label under the masked cloud equals the baseline.
inline double label_agreement(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw Error("label_agreement: size mismatch");
  if (a.empty()) return 1.0;
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
  return static_cast<double>(same) / static_cast<double>(a.size());
}

inline PointsF remove_points(const PointsF& cloud, const std::vector<bool>& removed) {
  Eigen::Index keep = 0;
  for (bool r : removed) keep += !r;
  PointsF out(keep, 3);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < cloud.rows(); ++i)
    if (!removed[static_cast<std::size_t>(i)]) out.row(k++) = cloud.row(i);
  return out;
}

// Score of one masked cloud against baseline labels; nullopt if the masked
// cloud is too small to encode.
inline std::optional<double> mask_score(const OccModel& model, const PointsF& cloud, const std::vector<bool>& removed,
                                        const nn::Mat<float>& queries, const std::vector<int>& baseline) {
  const PointsF masked = remove_points(cloud, removed);
  if (masked.rows() < kMinCloudPoints) return std::nullopt;
  return label_agreement(baseline, predict(model, masked, queries).labels());
}

inline ExplainabilityMap explain(const OccModel& model, const PointsF& cloud, const ExplainConfig& cfg, int threads = 0) {
  const Eigen::Index n = cloud.rows();
  if (n < 2) throw Error("explain: need at least 2 input points");
  if (cfg.stride < 1) throw Error("explain: stride must be at least 1");
  ExplainabilityMap map;
  map.n_queries = cfg.n_queries;
  const Vec3 lo = cloud.colwise().minCoeff().transpose().cast<double>();
  const Vec3 hi = cloud.colwise().maxCoeff().transpose().cast<double>();
  map.radius = cfg.radius_frac * (hi - lo).maxCoeff();
  const float r2 = static_cast<float>(map.radius * map.radius);

  const auto queries = detail::uniform_queries({Vec3::Constant(-cfg.extent), Vec3::Constant(cfg.extent)}, cfg.n_queries,
                                               hash_all(cfg.seed, 0xe4a1));
  const auto baseline = predict(model, cloud, queries).labels();

  const auto un = static_cast<std::size_t>(n);
  map.scores.assign(un, 0.0);
  map.evaluated.assign(un, false);
  map.emptied.assign(un, false);
  std::vector<std::size_t> centers;
  for (std::size_t i = 0; i < un; i += cfg.stride) centers.push_back(i);
  std::vector<double> center_scores(centers.size());
  std::vector<char> center_empty(centers.size(), 0);
  parallel_for(
      centers.size(),
      [&](std::size_t c) {
        const auto i = static_cast<Eigen::Index>(centers[c]);
        std::vector<bool> removed(un);
        for (Eigen::Index j = 0; j < n; ++j) removed[static_cast<std::size_t>(j)] = (cloud.row(j) - cloud.row(i)).squaredNorm() <= r2;
        const auto s = mask_score(model, cloud, removed, queries, baseline);
        center_scores[c] = s.value_or(0.0);
        center_empty[c] = !s.has_value();
      },
      threads);
  for (std::size_t c = 0; c < centers.size(); ++c) {
    map.scores[centers[c]] = center_scores[c];
    map.evaluated[centers[c]] = true;
    map.emptied[centers[c]] = center_empty[c] != 0;
  }
  if (cfg.stride > 1) {
    for (std::size_t i = 0; i < un; ++i) {
      if (map.evaluated[i]) continue;
      std::size_t best = 0;
      float best_d = std::numeric_limits<float>::infinity();
      for (std::size_t c = 0; c < centers.size(); ++c) {
        const float d = (cloud.row(static_cast<Eigen::Index>(i)) - cloud.row(static_cast<Eigen::Index>(centers[c]))).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      map.scores[i] = center_scores[best];
      map.emptied[i] = center_empty[best] != 0;
    }
  }
  return map;
}

}  // namespace softocc

#pragma once

// Conditioned occupancy network: a per-point encoder with max pooling turns
// the observed cloud into a latent code; a decoder maps (latent, sinusoidal
// query code) to C+1 class logits and a signed distance.

#include "softocc/dataset.hpp"
#include "softocc/nn.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <functional>

namespace softocc {

inline constexpr int kQueryBands = 10;
inline constexpr int kQueryExponentMin = -4;
inline constexpr int kQueryDim = kQueryBands * 6;
inline constexpr Eigen::Index kMinCloudPoints = 16;

// Band-major: for e = -4..5, sin(2^e pi q) then cos(2^e pi q), each over x, y, z.
inline std::array<double, kQueryDim> encode_query(const Vec3& q) {
  std::array<double, kQueryDim> out{};
  for (int b = 0; b < kQueryBands; ++b) {
    const double f = std::ldexp(kPi, kQueryExponentMin + b);
    for (int a = 0; a < 3; ++a) {
      out[6 * b + a] = std::sin(f * q[a]);
      out[6 * b + 3 + a] = std::cos(f * q[a]);
    }
  }
  return out;
}

template <typename T>
nn::Mat<T> encode_queries(const nn::Mat<T>& q) {
  if (q.rows() > 0 && q.cols() != 3) throw Error("encode_queries: expected n x 3 points");
  nn::Mat<T> out(q.rows(), kQueryDim);
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    const auto e = encode_query(Vec3(static_cast<double>(q(i, 0)), static_cast<double>(q(i, 1)), static_cast<double>(q(i, 2))));
    for (int j = 0; j < kQueryDim; ++j) out(i, j) = static_cast<T>(e[j]);
  }
  return out;
}

struct NetConfig {
  int num_segments = 1;
  int latent = 256;
  std::vector<int> encoder_hidden{64, 128};
  std::vector<int> decoder_hidden{512, 512, 512};
  double dropout = 0.2;
  std::uint64_t init_seed = 1;
};

inline nlohmann::json to_json(const NetConfig& c) {
  return {{"num_segments", c.num_segments}, {"latent", c.latent},     {"encoder_hidden", c.encoder_hidden},
          {"decoder_hidden", c.decoder_hidden}, {"dropout", c.dropout}, {"init_seed", c.init_seed}};
}

inline NetConfig net_config_from_json(const nlohmann::json& j) {
  NetConfig c;
  c.num_segments = j.at("num_segments").get<int>();
  c.latent = j.at("latent").get<int>();
  c.encoder_hidden = j.at("encoder_hidden").get<std::vector<int>>();
  c.decoder_hidden = j.at("decoder_hidden").get<std::vector<int>>();
  c.dropout = j.at("dropout").get<double>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  return c;
}

template <typename T>
struct BasicOccModel {
  NetConfig config;
  double lambda = 100.0;
  std::uint64_t train_seed = 0;
  std::string object;
  nn::Mlp<T> encoder;             // 3 -> ... -> latent, max pooled
  nn::DenseLayer<T> decoder_in;   // [latent, query code] -> first hidden
  nn::Mlp<T> decoder_rest;        // hidden -> ... -> C+1 logits and distance

  int num_segments() const { return config.num_segments; }
  int num_classes() const { return config.num_segments + 1; }
  int latent() const { return config.latent; }

  std::vector<nn::Tensor2<T>*> parameters() {
    auto ps = encoder.parameters();
    ps.push_back(&decoder_in.weight);
    ps.push_back(&decoder_in.bias);
    for (auto* p : decoder_rest.parameters()) ps.push_back(p);
    return ps;
  }

  std::vector<const nn::Tensor2<T>*> parameters() const {
    std::vector<const nn::Tensor2<T>*> out;
    for (auto* p : const_cast<BasicOccModel*>(this)->parameters()) out.push_back(p);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

  template <typename U>
  BasicOccModel<U> cast() const {
    BasicOccModel<U> m;
    m.config = config;
    m.lambda = lambda;
    m.train_seed = train_seed;
    m.object = object;
    m.encoder = make_empty<U>(encoder);
    m.decoder_rest = make_empty<U>(decoder_rest);
    m.decoder_in = nn::DenseLayer<U>(decoder_in.in(), decoder_in.out(), decoder_in.activation);
    auto dst = m.parameters();
    auto src = parameters();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<U>();
    return m;
  }

 private:
  template <typename U>
  static nn::Mlp<U> make_empty(const nn::Mlp<T>& src) {
    nn::Mlp<U> out;
    out.dropout_rate = src.dropout_rate;
    for (const auto& l : src.layers) out.layers.emplace_back(l.in(), l.out(), l.activation);
    return out;
  }
};

using OccModel = BasicOccModel<float>;

template <typename T = float>
BasicOccModel<T> make_model(const NetConfig& c) {
  if (c.num_segments < 1) throw Error("make_model: need at least one segment");
  if (c.latent < 1 || c.decoder_hidden.empty()) throw Error("make_model: invalid widths");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw Error("make_model: dropout must be in [0, 1)");
  Rng rng(hash_all(c.init_seed, 0x1417));
  BasicOccModel<T> m;
  m.config = c;
  std::vector<int> enc{3};
  enc.insert(enc.end(), c.encoder_hidden.begin(), c.encoder_hidden.end());
  enc.push_back(c.latent);
  m.encoder = nn::Mlp<T>::make(enc, nn::Activation::kNone, rng);
  m.decoder_in = nn::DenseLayer<T>(c.latent + kQueryDim, c.decoder_hidden.front(), nn::Activation::kRelu);
  m.decoder_in.init(nn::Init::kHeUniform, rng);
  std::vector<int> rest(c.decoder_hidden.begin(), c.decoder_hidden.end());
  rest.push_back(c.num_segments + 2);
  m.decoder_rest = nn::Mlp<T>::make(rest, nn::Activation::kNone, rng, c.dropout);
  return m;
}

// -----------------------------------------------------------------------------
// Forward and backward
// -----------------------------------------------------------------------------

template <typename T>
struct EncoderTrace {
  typename nn::Mlp<T>::Trace mlp;
  std::vector<Eigen::Index> offsets;             // cloud row ranges in the stacked input
  std::vector<std::vector<Eigen::Index>> argmax;  // per cloud, per latent unit
};

// Latent codes for a list of clouds, one row per cloud.
template <typename T>
nn::Mat<T> encode_clouds(const BasicOccModel<T>& m, const std::vector<const nn::Mat<T>*>& clouds,
                         EncoderTrace<T>* trace = nullptr) {
  Eigen::Index total = 0;
  std::vector<Eigen::Index> offsets{0};
  for (const auto* c : clouds) {
    if (c->rows() < kMinCloudPoints)
      throw Error("encode_cloud: cloud has " + std::to_string(c->rows()) + " points, need at least " +
                  std::to_string(kMinCloudPoints));
    if (c->cols() != 3) throw Error("encode_cloud: expected n x 3 points");
    total += c->rows();
    offsets.push_back(total);
  }
  nn::Mat<T> stacked(total, 3);
  for (std::size_t i = 0; i < clouds.size(); ++i) stacked.middleRows(offsets[i], clouds[i]->rows()) = *clouds[i];
  // Inference uses the row-wise product so the pooled code is exactly
  // invariant to point order; training keeps the faster blocked product.
  const nn::Mat<T> feat = trace ? m.encoder.forward(stacked, nn::DropoutMode::kEval, 0, 0, &trace->mlp)
                                : m.encoder.forward_rowwise(stacked);
  const Eigen::Index dim = feat.cols();
  nn::Mat<T> z(static_cast<Eigen::Index>(clouds.size()), dim);
  if (trace) {
    trace->offsets = offsets;
    trace->argmax.assign(clouds.size(), std::vector<Eigen::Index>(static_cast<std::size_t>(dim)));
  }
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) {
      Eigen::Index best = offsets[i];
      for (Eigen::Index r = offsets[i] + 1; r < offsets[i + 1]; ++r)
        if (feat(r, j) > feat(best, j)) best = r;
      z(static_cast<Eigen::Index>(i), j) = feat(best, j);
      if (trace) trace->argmax[i][static_cast<std::size_t>(j)] = best;
    }
  }
  return z;
}

template <typename T>
nn::RowVec<T> encode_cloud(const BasicOccModel<T>& m, const nn::Mat<T>& cloud) {
  return encode_clouds<T>(m, {&cloud}).row(0);
}

template <typename T>
struct DecoderTrace {
  nn::Mat<T> latents;
  nn::Mat<T> code;    // encoded queries
  nn::Mat<T> hidden;  // first hidden layer after relu, before dropout
  nn::Mat<T> mask;
  typename nn::Mlp<T>::Trace rest;
  Eigen::Index rows_per_latent = 0;
};

// Decodes queries grouped by latent: rows [g*n, (g+1)*n) use latent row g.
// Dropout masks are keyed on seed and (row_offset + row), so chunking the
// query set does not change results.
template <typename T>
nn::Mat<T> decode(const BasicOccModel<T>& m, const nn::Mat<T>& latents, const nn::Mat<T>& queries,
                  Eigen::Index rows_per_latent, nn::DropoutMode mode, std::uint64_t seed, std::uint64_t row_offset = 0,
                  DecoderTrace<T>* trace = nullptr) {
  if (latents.cols() != m.latent())
    throw Error("decode: latent " + nn::shape_str(latents.rows(), latents.cols()) + " does not match model latent " +
                std::to_string(m.latent()));
  if (queries.rows() != latents.rows() * rows_per_latent) throw Error("decode: query count does not match latent groups");
  const Eigen::Index lat = m.latent();
  const auto& w = m.decoder_in.weight.value;
  nn::Mat<T> code = encode_queries(queries);
  nn::Mat<T> per_latent = latents * w.leftCols(lat).transpose();
  per_latent.rowwise() += m.decoder_in.bias.value.row(0);
  nn::Mat<T> h = code * w.rightCols(kQueryDim).transpose();
  for (Eigen::Index g = 0; g < latents.rows(); ++g)
    h.middleRows(g * rows_per_latent, rows_per_latent).rowwise() += per_latent.row(g);
  h = nn::relu(h);
  nn::Mat<T> mask;
  nn::Mat<T> x = nn::dropout(h, m.decoder_rest.dropout_rate, mode, hash_all(seed, 0xd1), row_offset, trace ? &mask : nullptr);
  nn::Mat<T> out = m.decoder_rest.forward(x, mode, hash_all(seed, 0xd2), row_offset, trace ? &trace->rest : nullptr);
  if (trace) {
    trace->latents = latents;
    trace->code = std::move(code);
    trace->hidden = std::move(h);
    trace->mask = std::move(mask);
    trace->rows_per_latent = rows_per_latent;
  }
  return out;
}

// Accumulates parameter gradients for d loss / d output; returns d loss / d latents.
template <typename T>
nn::Mat<T> decode_backward(BasicOccModel<T>& m, const DecoderTrace<T>& tr, const nn::Mat<T>& dout) {
  nn::Mat<T> dh = m.decoder_rest.backward(tr.rest, dout);
  if (tr.mask.size() > 0) dh = dh.cwiseProduct(tr.mask);
  dh = (tr.hidden.array() > T(0)).select(dh, T(0));
  const Eigen::Index lat = m.latent();
  const Eigen::Index groups = tr.latents.rows();
  nn::Mat<T> group_sum(groups, dh.cols());
  for (Eigen::Index g = 0; g < groups; ++g)
    group_sum.row(g) = dh.middleRows(g * tr.rows_per_latent, tr.rows_per_latent).colwise().sum();
  auto& layer = m.decoder_in;
  if (!layer.weight.has_grad()) layer.weight.zero_grad();
  if (!layer.bias.has_grad()) layer.bias.zero_grad();
  layer.weight.grad.leftCols(lat).noalias() += group_sum.transpose() * tr.latents;
  layer.weight.grad.rightCols(kQueryDim).noalias() += dh.transpose() * tr.code;
  layer.bias.grad += group_sum.colwise().sum();
  return group_sum * layer.weight.value.leftCols(lat);
}

template <typename T>
void encode_backward(BasicOccModel<T>& m, const EncoderTrace<T>& tr, const nn::Mat<T>& dlatents) {
  nn::Mat<T> dfeat = nn::Mat<T>::Zero(tr.offsets.back(), dlatents.cols());
  for (std::size_t i = 0; i < tr.argmax.size(); ++i)
    for (Eigen::Index j = 0; j < dlatents.cols(); ++j)
      dfeat(tr.argmax[i][static_cast<std::size_t>(j)], j) += dlatents(static_cast<Eigen::Index>(i), j);
  m.encoder.backward(tr.mlp, std::move(dfeat));
}

// -----------------------------------------------------------------------------
// Prediction
// -----------------------------------------------------------------------------

template <typename T>
struct Prediction {
  nn::Mat<T> logits;  // n x (C+1)
  Eigen::Matrix<T, Eigen::Dynamic, 1> sdist;

  Eigen::Index size() const { return logits.rows(); }
  nn::Mat<T> probabilities() const { return nn::softmax(logits); }
  std::vector<int> labels() const {
    std::vector<int> out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) logits.row(i).maxCoeff(&out[static_cast<std::size_t>(i)]);
    return out;
  }
};

inline constexpr Eigen::Index kPredictChunk = 8192;

template <typename T>
Prediction<T> predict_latent(const BasicOccModel<T>& m, const nn::RowVec<T>& z, const nn::Mat<T>& queries,
                             nn::DropoutMode mode = nn::DropoutMode::kEval, std::uint64_t seed = 0) {
  Prediction<T> p;
  const Eigen::Index n = queries.rows();
  const int c1 = m.num_classes();
  p.logits.resize(n, c1);
  p.sdist.resize(n);
  const nn::Mat<T> zm = z;
  for (Eigen::Index start = 0; start < n; start += kPredictChunk) {
    const Eigen::Index len = std::min(kPredictChunk, n - start);
    const nn::Mat<T> out = decode<T>(m, zm, queries.middleRows(start, len), len, mode, seed, static_cast<std::uint64_t>(start));
    p.logits.middleRows(start, len) = out.leftCols(c1);
    p.sdist.segment(start, len) = out.col(c1);
  }
  return p;
}

// One encoding of the cloud plus batched decoding of all queries. Both inputs
// are in the cloud's normalized frame.
template <typename T>
Prediction<T> predict(const BasicOccModel<T>& m, const nn::Mat<T>& cloud, const nn::Mat<T>& queries,
                      nn::DropoutMode mode = nn::DropoutMode::kEval, std::uint64_t seed = 0) {
  if (queries.rows() == 0) {
    Prediction<T> p;
    p.logits.resize(0, m.num_classes());
    p.sdist.resize(0);
    return p;
  }
  return predict_latent(m, encode_cloud(m, cloud), queries, mode, seed);
}

inline void require_segments(const OccModel& m, int num_segments) {
  if (m.num_segments() != num_segments)
    throw Error("model was trained for " + std::to_string(m.num_segments()) + " segments, object has " +
                std::to_string(num_segments));
}

template <typename T>
Prediction<T> predict(const BasicOccModel<T>& m, int expected_segments, const nn::Mat<T>& cloud,
                      const nn::Mat<T>& queries) {
  if (m.num_segments() != expected_segments)
    throw Error("model was trained for " + std::to_string(m.num_segments()) + " segments, object has " +
                std::to_string(expected_segments));
  return predict(m, cloud, queries);
}

// -----------------------------------------------------------------------------
// Loss
// -----------------------------------------------------------------------------

template <typename T>
struct CombinedLoss {
  double ce = 0, l1 = 0, total = 0;
  nn::Mat<T> grad;  // d total / d decoder output
};

// Mean cross-entropy over queries + lambda * mean absolute distance error.
template <typename T>
CombinedLoss<T> combined_loss(const nn::Mat<T>& output, const std::vector<int>& labels,
                              const Eigen::Matrix<T, Eigen::Dynamic, 1>& sdist, double lambda) {
  if (lambda < 0) throw Error("combined_loss: lambda must be non-negative");
  const Eigen::Index c1 = output.cols() - 1;
  CombinedLoss<T> out;
  auto ce = nn::cross_entropy<T>(output.leftCols(c1), labels);
  auto l1 = nn::l1_loss<T>(output.col(c1), sdist);
  out.ce = ce.loss;
  out.l1 = l1.loss;
  out.total = ce.loss + lambda * l1.loss;
  out.grad.resize(output.rows(), output.cols());
  out.grad.leftCols(c1) = ce.grad;
  out.grad.col(c1) = static_cast<T>(lambda) * l1.grad;
  return out;
}

// -----------------------------------------------------------------------------
// Training
// -----------------------------------------------------------------------------

struct TrainConfig {
  std::size_t batch = 40;
  std::size_t epochs = 700;
  double lr = 5e-4;
  double lr_final = 0;         // > 0: decay exponentially to this rate by the last epoch
  std::size_t lr_hold = 0;     // epochs at the initial rate before the decay starts
  double lambda = 100.0;
  double point_drop = 0.5;
  std::size_t queries_per_sample = 0;  // 0 = all ground-truth points
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 0;
  std::filesystem::path checkpoint_path;
  std::filesystem::path loss_csv;
  NetConfig net;
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch", c.batch},
          {"epochs", c.epochs},
          {"lr", c.lr},
          {"lr_final", c.lr_final},
          {"lr_hold", c.lr_hold},
          {"lambda", c.lambda},
          {"point_drop", c.point_drop},
          {"queries_per_sample", c.queries_per_sample},
          {"seed", c.seed},
          {"net", to_json(c.net)}};
}

struct EpochLoss {
  std::size_t epoch = 0;
  double ce = 0, l1 = 0, total = 0;
};

struct TrainResult {
  OccModel model;
  std::vector<EpochLoss> curve;
};

void save_checkpoint(const OccModel& m, const std::filesystem::path& path, const nlohmann::json& extra = {});

namespace detail {

inline std::vector<std::size_t> choose_subset(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (k == 0 || k >= n) return idx;
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
  idx.resize(k);
  return idx;
}

}  // namespace detail

struct TrainBatchStats {
  double ce = 0, l1 = 0, total = 0;
};

// One optimizer step on a list of samples. Clouds are point-dropped and
// queries subsampled with seeds derived from (seed, epoch, sample index).
inline TrainBatchStats train_step(OccModel& m, nn::AdamState<float>& adam, const Dataset& ds,
                                  const std::vector<std::size_t>& batch, const TrainConfig& cfg, std::size_t epoch,
                                  std::size_t batch_index) {
  const std::size_t n_all = ds.samples.front().queries.rows();
  const std::size_t nq = cfg.queries_per_sample == 0 ? n_all : std::min(cfg.queries_per_sample, n_all);
  std::vector<PointsF> clouds;
  clouds.reserve(batch.size());
  nn::Mat<float> queries(static_cast<Eigen::Index>(batch.size() * nq), 3);
  std::vector<int> labels;
  labels.reserve(batch.size() * nq);
  Eigen::VectorXf target(static_cast<Eigen::Index>(batch.size() * nq));
  Eigen::Index row = 0;
  for (const std::size_t si : batch) {
    const LoadedSample& s = ds.samples[si];
    if (static_cast<std::size_t>(s.queries.rows()) != n_all) throw Error("train: samples have differing query counts");
    clouds.push_back(drop_points(s.cloud, cfg.point_drop, hash_all(cfg.seed, 0xd409, epoch, si)));
    for (const std::size_t qi : detail::choose_subset(n_all, nq, hash_all(cfg.seed, 0x9e5, epoch, si))) {
      const auto q = static_cast<Eigen::Index>(qi);
      queries.row(row) = s.queries.row(q);
      labels.push_back(s.labels[qi]);
      target[row] = s.sdist[q];
      ++row;
    }
  }
  std::vector<const nn::Mat<float>*> cptr;
  for (const auto& c : clouds) cptr.push_back(&c);

  const auto params = m.parameters();
  nn::zero_grads(params);
  EncoderTrace<float> etr;
  DecoderTrace<float> dtr;
  const nn::Mat<float> z = encode_clouds(m, cptr, &etr);
  const nn::Mat<float> out = decode(m, z, queries, static_cast<Eigen::Index>(nq), nn::DropoutMode::kTrain,
                                    hash_all(cfg.seed, 0xd0, epoch, batch_index), 0, &dtr);
  const auto loss = combined_loss<float>(out, labels, target, cfg.lambda);
  if (!std::isfinite(loss.total))
    throw Error("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index) +
                " (seed " + std::to_string(cfg.seed) + ")");
  encode_backward(m, etr, decode_backward(m, dtr, loss.grad));
  try {
    nn::adam_step(params, adam);
  } catch (const Error& e) {
    throw Error(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index) +
                " (seed " + std::to_string(cfg.seed) + ")");
  }
  return {loss.ce, loss.l1, loss.total};
}

using EpochCallback = std::function<void(const EpochLoss&)>;

inline double learning_rate(const TrainConfig& cfg, std::size_t epoch) {
  if (cfg.lr_final <= 0 || cfg.epochs < cfg.lr_hold + 2 || epoch <= cfg.lr_hold + 1) return cfg.lr;
  const double t = static_cast<double>(epoch - 1 - cfg.lr_hold) / static_cast<double>(cfg.epochs - 1 - cfg.lr_hold);
  return cfg.lr * std::pow(cfg.lr_final / cfg.lr, t);
}

inline TrainResult train(const TrainConfig& cfg, const Dataset& ds, const EpochCallback& on_epoch = {}) {
  if (cfg.batch < 1) throw Error("train: batch size must be at least 1");
  if (cfg.lambda < 0) throw Error("train: lambda must be non-negative");
  if (ds.samples.empty()) throw Error("train: dataset is empty");
  NetConfig net = cfg.net;
  net.num_segments = ds.num_segments;
  TrainResult res{make_model(net), {}};
  OccModel& m = res.model;
  m.lambda = cfg.lambda;
  m.train_seed = cfg.seed;
  m.object = ds.object;
  nn::AdamState<float> adam;
  adam.lr = cfg.lr;

  std::ofstream csv;
  if (!cfg.loss_csv.empty()) {
    csv.open(cfg.loss_csv);
    if (!csv) throw Error("cannot write " + cfg.loss_csv.string());
    csv << "epoch,ce,l1,total\n";
  }
  const nlohmann::json meta = {{"train", to_json(cfg)}, {"dataset_seed", ds.seed}, {"samples", ds.samples.size()}};

  std::vector<std::size_t> order(ds.samples.size());
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    adam.lr = learning_rate(cfg, e);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(hash_all(cfg.seed, 0xe90c, e));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    EpochLoss el{e, 0, 0, 0};
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch, ++batches) {
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch)));
      const auto st = train_step(m, adam, ds, batch, cfg, e, batches);
      el.ce += st.ce;
      el.l1 += st.l1;
      el.total += st.total;
    }
    el.ce /= static_cast<double>(batches);
    el.l1 /= static_cast<double>(batches);
    el.total /= static_cast<double>(batches);
    res.curve.push_back(el);
    if (csv.is_open()) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g\n", e, el.ce, el.l1, el.total);
      csv << buf << std::flush;
    }
    if (on_epoch) on_epoch(el);
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() && e % cfg.checkpoint_every == 0)
      save_checkpoint(m, cfg.checkpoint_path, meta);
  }
  return res;
}

// -----------------------------------------------------------------------------
// Checkpoints
// -----------------------------------------------------------------------------
//
// Layout: 8-byte magic, uint32 version, uint64 header length, JSON header,
// uint64 parameter count, raw little-endian floats.

inline constexpr char kCheckpointMagic[8] = {'S', 'O', 'C', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json checkpoint_header(const OccModel& m) {
  return {{"net", to_json(m.config)},
          {"lambda", m.lambda},
          {"num_segments", m.num_segments()},
          {"latent", m.latent()},
          {"train_seed", m.train_seed},
          {"init_seed", m.config.init_seed},
          {"object", m.object},
          {"parameters", m.parameter_count()}};
}

inline void save_checkpoint(const OccModel& m, const std::filesystem::path& path, const nlohmann::json& extra) {
  nlohmann::json header = checkpoint_header(m);
  if (!extra.is_null()) header["meta"] = extra;
  const std::string h = header.dump();
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof(kCheckpointVersion));
    const std::uint64_t hlen = h.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    const std::uint64_t count = m.parameter_count();
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    for (const auto* p : m.parameters())
      out.write(reinterpret_cast<const char*>(p->value.data()), static_cast<std::streamsize>(p->value.size() * sizeof(float)));
    if (!out) throw Error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline nlohmann::json read_checkpoint_header(std::istream& in, const std::string& name) {
  char magic[sizeof(kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw Error(name + ": not a checkpoint (bad magic)");
  std::uint32_t version = 0;
  if (!in.read(reinterpret_cast<char*>(&version), sizeof(version))) throw Error(name + ": truncated checkpoint");
  if (version != kCheckpointVersion)
    throw Error(name + ": checkpoint version " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));
  std::uint64_t hlen = 0;
  if (!in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen)) || hlen > (1u << 24)) throw Error(name + ": truncated checkpoint");
  std::string h(hlen, '\0');
  if (!in.read(h.data(), static_cast<std::streamsize>(hlen))) throw Error(name + ": truncated checkpoint");
  try {
    return nlohmann::json::parse(h);
  } catch (const std::exception& e) {
    throw Error(name + ": corrupt checkpoint header: " + e.what());
  }
}

inline OccModel load_checkpoint(const std::filesystem::path& path, nlohmann::json* header_out = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  const nlohmann::json header = read_checkpoint_header(in, path.string());
  OccModel m = make_model(net_config_from_json(header.at("net")));
  m.lambda = header.at("lambda").get<double>();
  m.train_seed = header.at("train_seed").get<std::uint64_t>();
  m.object = header.value("object", "");
  std::uint64_t count = 0;
  if (!in.read(reinterpret_cast<char*>(&count), sizeof(count))) throw Error(path.string() + ": truncated checkpoint");
  if (count != m.parameter_count()) throw Error(path.string() + ": parameter count does not match architecture");
  for (auto* p : m.parameters())
    if (!in.read(reinterpret_cast<char*>(p->value.data()), static_cast<std::streamsize>(p->value.size() * sizeof(float))))
      throw Error(path.string() + ": truncated checkpoint");
  if (in.peek() != std::char_traits<char>::eof()) throw Error(path.string() + ": trailing bytes after parameters");
  if (header_out) *header_out = header;
  return m;
}

}  // namespace softocc

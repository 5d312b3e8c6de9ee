#pragma once

// Serial-arm forward kinematics from modified DH parameters and gradient-based
// calibration of per-joint offsets and base pose against tracked poses.

#include "softocc/nn.hpp"

#include "json.hpp"

#include <Eigen/Geometry>

#include <array>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace softocc::dh {

using Mat4 = Eigen::Matrix4d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Vector4d;  // (w, x, y, z)

struct JointParams {
  double theta = 0, d = 0, alpha = 0, a = 0;

  JointParams operator+(const JointParams& o) const { return {theta + o.theta, d + o.d, alpha + o.alpha, a + o.a}; }
};

struct DHChain {
  std::vector<JointParams> nominal;
  std::vector<JointParams> offsets;  // learnable, same length as nominal
  Vec3 base_position = Vec3::Zero();
  Vec3 base_euler = Vec3::Zero();    // extrinsic X, then Y, then Z (R = Rz Ry Rx)

  DHChain() = default;
  explicit DHChain(std::vector<JointParams> joints) : nominal(std::move(joints)), offsets(nominal.size()) {}

  std::size_t joints() const { return nominal.size(); }
  JointParams effective(std::size_t i) const { return nominal[i] + offsets[i]; }
};

// Joint transform exactly as printed for modified DH (Craig):
// [[ct, -st, 0, a], [st ca, ct ca, -sa, -d sa], [st sa, ct sa, ca, d ca], [0, 0, 0, 1]].
inline Mat4 joint_transform(double theta, double d, double alpha, double a) {
  const double ct = std::cos(theta), st = std::sin(theta), ca = std::cos(alpha), sa = std::sin(alpha);
  Mat4 t;
  t << ct, -st, 0, a,
       st * ca, ct * ca, -sa, -d * sa,
       st * sa, ct * sa, ca, d * ca,
       0, 0, 0, 1;
  return t;
}

inline Mat3 euler_xyz(const Vec3& e) {
  return (Eigen::AngleAxisd(e.z(), Vec3::UnitZ()) * Eigen::AngleAxisd(e.y(), Vec3::UnitY()) *
          Eigen::AngleAxisd(e.x(), Vec3::UnitX()))
      .toRotationMatrix();
}

inline Mat4 base_transform(const DHChain& c) {
  Mat4 t = Mat4::Identity();
  t.topLeftCorner<3, 3>() = euler_xyz(c.base_euler);
  t.topRightCorner<3, 1>() = c.base_position;
  return t;
}

inline Mat4 joint_transform(const DHChain& c, std::size_t i, double xi) {
  const JointParams p = c.effective(i);
  return joint_transform(xi + p.theta, p.d, p.alpha, p.a);
}

// -----------------------------------------------------------------------------
// Quaternions
// -----------------------------------------------------------------------------

namespace detail {

// Branch of the rotation-to-quaternion conversion, written so that each
// component is either s/4 or (R[i1] + sign * R[i2]) / s with
// s = 2 sqrt(1 + sum_k sigma_k R_kk).
struct QuatBranch {
  std::array<double, 3> sigma;
  int big;                            // component equal to s/4
  std::array<std::array<int, 5>, 4> terms;  // per component: r1, c1, r2, c2, sign
};

inline const QuatBranch& quat_branch(const Mat3& r) {
  static const QuatBranch kBranches[4] = {
      {{1, 1, 1}, 0, {{{0, 0, 0, 0, 0}, {2, 1, 1, 2, -1}, {0, 2, 2, 0, -1}, {1, 0, 0, 1, -1}}}},
      {{1, -1, -1}, 1, {{{2, 1, 1, 2, -1}, {0, 0, 0, 0, 0}, {0, 1, 1, 0, 1}, {0, 2, 2, 0, 1}}}},
      {{-1, 1, -1}, 2, {{{0, 2, 2, 0, -1}, {0, 1, 1, 0, 1}, {0, 0, 0, 0, 0}, {1, 2, 2, 1, 1}}}},
      {{-1, -1, 1}, 3, {{{1, 0, 0, 1, -1}, {0, 2, 2, 0, 1}, {1, 2, 2, 1, 1}, {0, 0, 0, 0, 0}}}},
  };
  const double tr = r.trace();
  if (tr > 0) return kBranches[0];
  if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) return kBranches[1];
  if (r(1, 1) > r(2, 2)) return kBranches[2];
  return kBranches[3];
}

}  // namespace detail

// Unit quaternion (w, x, y, z) of a rotation matrix; optionally the Jacobian
// d q / d R with R flattened row-major.
inline Quat quat_from_matrix(const Mat3& r, Eigen::Matrix<double, 4, 9>* jac = nullptr) {
  const auto& b = detail::quat_branch(r);
  const double dsum = 1.0 + b.sigma[0] * r(0, 0) + b.sigma[1] * r(1, 1) + b.sigma[2] * r(2, 2);
  const double s = 2.0 * std::sqrt(dsum);
  Quat q;
  // ds/dR_kk = 2 sigma_k / s
  Eigen::Matrix<double, 1, 9> ds = Eigen::Matrix<double, 1, 9>::Zero();
  for (int k = 0; k < 3; ++k) ds(0, 4 * k) = 2.0 * b.sigma[static_cast<std::size_t>(k)] / s;
  if (jac) jac->setZero();
  for (int c = 0; c < 4; ++c) {
    if (c == b.big) {
      q[c] = s / 4.0;
      if (jac) jac->row(c) = ds / 4.0;
      continue;
    }
    const auto& t = b.terms[static_cast<std::size_t>(c)];
    const double num = r(t[0], t[1]) + t[4] * r(t[2], t[3]);
    q[c] = num / s;
    if (jac) {
      jac->row(c) = -num / (s * s) * ds;
      (*jac)(c, 3 * t[0] + t[1]) += 1.0 / s;
      (*jac)(c, 3 * t[2] + t[3]) += t[4] / s;
    }
  }
  return q;
}

inline Mat3 matrix_from_quat(const Quat& q) {
  return Eigen::Quaterniond(q[0], q[1], q[2], q[3]).normalized().toRotationMatrix();
}

inline double quat_distance(const Quat& a, const Quat& b) { return std::min((a - b).norm(), (a + b).norm()); }

// -----------------------------------------------------------------------------
// Forward kinematics
// -----------------------------------------------------------------------------

struct Pose {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat(1, 0, 0, 0);
};

inline Mat4 fk_matrix(const DHChain& c, const Eigen::VectorXd& xi) {
  if (static_cast<std::size_t>(xi.size()) != c.joints())
    throw Error("fk: " + std::to_string(xi.size()) + " joint values for a " + std::to_string(c.joints()) + "-joint chain");
  Mat4 t = base_transform(c);
  for (std::size_t i = 0; i < c.joints(); ++i) t = t * joint_transform(c, i, xi[static_cast<Eigen::Index>(i)]);
  return t;
}

inline Pose fk(const DHChain& c, const Eigen::VectorXd& xi) {
  const Mat4 t = fk_matrix(c, xi);
  return {t.topRightCorner<3, 1>(), quat_from_matrix(t.topLeftCorner<3, 3>())};
}

// -----------------------------------------------------------------------------
// Samples and loss
// -----------------------------------------------------------------------------

struct CalibSample {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat(1, 0, 0, 0);
  Eigen::VectorXd xi;
};

inline constexpr double kRotationWeight = 100.0;

struct LossParts {
  double pos = 0, rot = 0, total = 0;
};

inline LossParts calib_loss(const DHChain& c, const std::vector<CalibSample>& samples, double lambda = kRotationWeight) {
  if (samples.empty()) throw Error("calib_loss: no samples");
  LossParts l;
  for (const auto& s : samples) {
    const Pose p = fk(c, s.xi);
    l.pos += (s.position - p.position).norm();
    l.rot += quat_distance(s.orientation, p.orientation);
  }
  l.pos /= static_cast<double>(samples.size());
  l.rot /= static_cast<double>(samples.size());
  l.total = l.pos + lambda * l.rot;
  return l;
}

// Flat parameter layout: per joint (dtheta, dd, dalpha, da), then base
// position (3) and base Euler angles (3).
inline std::size_t parameter_count(const DHChain& c) { return 4 * c.joints() + 6; }

inline Eigen::VectorXd get_parameters(const DHChain& c) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(parameter_count(c)));
  for (std::size_t i = 0; i < c.joints(); ++i) {
    const auto& o = c.offsets[i];
    v.segment<4>(static_cast<Eigen::Index>(4 * i)) << o.theta, o.d, o.alpha, o.a;
  }
  const auto nb = static_cast<Eigen::Index>(4 * c.joints());
  v.segment<3>(nb) = c.base_position;
  v.segment<3>(nb + 3) = c.base_euler;
  return v;
}

inline void set_parameters(DHChain& c, const Eigen::VectorXd& v) {
  if (static_cast<std::size_t>(v.size()) != parameter_count(c)) throw Error("set_parameters: size mismatch");
  for (std::size_t i = 0; i < c.joints(); ++i) {
    const auto k = static_cast<Eigen::Index>(4 * i);
    c.offsets[i] = {v[k], v[k + 1], v[k + 2], v[k + 3]};
  }
  const auto nb = static_cast<Eigen::Index>(4 * c.joints());
  c.base_position = v.segment<3>(nb);
  c.base_euler = v.segment<3>(nb + 3);
}

namespace detail {

// Partial derivatives of the joint transform with respect to theta, d, alpha, a.
inline std::array<Mat4, 4> joint_partials(double theta, double d, double alpha) {
  const double ct = std::cos(theta), st = std::sin(theta), ca = std::cos(alpha), sa = std::sin(alpha);
  std::array<Mat4, 4> g;
  g[0] << -st, -ct, 0, 0,
          ct * ca, -st * ca, 0, 0,
          ct * sa, -st * sa, 0, 0,
          0, 0, 0, 0;
  g[1] << 0, 0, 0, 0,
          0, 0, 0, -sa,
          0, 0, 0, ca,
          0, 0, 0, 0;
  g[2] << 0, 0, 0, 0,
          -st * sa, -ct * sa, -ca, -d * ca,
          st * ca, ct * ca, -sa, -d * sa,
          0, 0, 0, 0;
  g[3] = Mat4::Zero();
  g[3](0, 3) = 1;
  return g;
}

inline std::array<Mat3, 3> euler_partials(const Vec3& e) {
  const Mat3 rx = Eigen::AngleAxisd(e.x(), Vec3::UnitX()).toRotationMatrix();
  const Mat3 ry = Eigen::AngleAxisd(e.y(), Vec3::UnitY()).toRotationMatrix();
  const Mat3 rz = Eigen::AngleAxisd(e.z(), Vec3::UnitZ()).toRotationMatrix();
  auto dx = [](double a) {
    Mat3 m;
    m << 0, 0, 0, 0, -std::sin(a), -std::cos(a), 0, std::cos(a), -std::sin(a);
    return m;
  };
  auto dy = [](double a) {
    Mat3 m;
    m << -std::sin(a), 0, std::cos(a), 0, 0, 0, -std::cos(a), 0, -std::sin(a);
    return m;
  };
  auto dz = [](double a) {
    Mat3 m;
    m << -std::sin(a), -std::cos(a), 0, std::cos(a), -std::sin(a), 0, 0, 0, 0;
    return m;
  };
  return {rz * ry * dx(e.x()), rz * dy(e.y()) * rx, dz(e.z()) * ry * rx};
}

}  // namespace detail

// Loss and its exact gradient with respect to the flat parameter vector,
// by reverse accumulation through the chain of joint transforms.
inline LossParts calib_loss_and_gradient(const DHChain& c, const std::vector<CalibSample>& samples,
                                         const std::vector<std::size_t>& indices, double lambda, Eigen::VectorXd& grad) {
  if (indices.empty()) throw Error("calib_loss: no samples");
  const std::size_t n = c.joints();
  grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(parameter_count(c)));
  LossParts l;
  const Mat4 base = base_transform(c);
  const auto euler_d = detail::euler_partials(c.base_euler);
  std::vector<Mat4> joints(n), prefix(n + 1), suffix(n + 1);
  for (const std::size_t si : indices) {
    const CalibSample& s = samples[si];
    if (static_cast<std::size_t>(s.xi.size()) != n) throw Error("calib_loss: sample joint count mismatch");
    for (std::size_t i = 0; i < n; ++i) joints[i] = joint_transform(c, i, s.xi[static_cast<Eigen::Index>(i)]);
    prefix[0] = base;
    for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] * joints[i];
    suffix[n] = Mat4::Identity();
    for (std::size_t i = n; i-- > 0;) suffix[i] = joints[i] * suffix[i + 1];
    const Mat4& ee = prefix[n];

    // dL/dT_EE
    Mat4 g = Mat4::Zero();
    const Vec3 dp = ee.topRightCorner<3, 1>() - s.position;
    const double pos_err = dp.norm();
    l.pos += pos_err;
    if (pos_err > 0) g.topRightCorner<3, 1>() = dp / pos_err;

    Eigen::Matrix<double, 4, 9> qjac;
    const Quat q = quat_from_matrix(ee.topLeftCorner<3, 3>(), &qjac);
    const Quat minus = q - s.orientation, plus = q + s.orientation;
    const double dm = minus.norm(), dpl = plus.norm();
    const double rot_err = std::min(dm, dpl);
    l.rot += rot_err;
    Quat dq = Quat::Zero();
    if (dm <= dpl) {
      if (dm > 0) dq = minus / dm;
    } else if (dpl > 0) {
      dq = plus / dpl;
    }
    const Eigen::Matrix<double, 1, 9> dr = lambda * dq.transpose() * qjac;
    for (int r = 0; r < 3; ++r)
      for (int k = 0; k < 3; ++k) g(r, k) += dr(0, 3 * r + k);

    // Joints: dL/dT_i = prefix_i^T g suffix_{i+1}^T.
    for (std::size_t i = 0; i < n; ++i) {
      const Mat4 gi = prefix[i].transpose() * g * suffix[i + 1].transpose();
      const JointParams p = c.effective(i);
      const auto parts = detail::joint_partials(s.xi[static_cast<Eigen::Index>(i)] + p.theta, p.d, p.alpha);
      for (int k = 0; k < 4; ++k) grad[static_cast<Eigen::Index>(4 * i) + k] += gi.cwiseProduct(parts[static_cast<std::size_t>(k)]).sum();
    }
    const Mat4 gb = g * suffix[0].transpose();
    const auto nb = static_cast<Eigen::Index>(4 * n);
    grad.segment<3>(nb) += gb.topRightCorner<3, 1>();
    for (int k = 0; k < 3; ++k) grad[nb + 3 + k] += gb.topLeftCorner<3, 3>().cwiseProduct(euler_d[static_cast<std::size_t>(k)]).sum();
  }
  const double inv = 1.0 / static_cast<double>(indices.size());
  l.pos *= inv;
  l.rot *= inv;
  l.total = l.pos + lambda * l.rot;
  grad *= inv;
  return l;
}

inline LossParts calib_loss_and_gradient(const DHChain& c, const std::vector<CalibSample>& samples, double lambda,
                                         Eigen::VectorXd& grad) {
  std::vector<std::size_t> all(samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return calib_loss_and_gradient(c, samples, all, lambda, grad);
}

// -----------------------------------------------------------------------------
// Calibration
// -----------------------------------------------------------------------------

enum class CalibMode { kFull, kDeltaThetaOnly, kFixedBase };

inline CalibMode parse_calib_mode(const std::string& s) {
  if (s == "full") return CalibMode::kFull;
  if (s == "delta-theta" || s == "delta-theta-only") return CalibMode::kDeltaThetaOnly;
  if (s == "fixed-base") return CalibMode::kFixedBase;
  throw Error("unknown calibration mode '" + s + "' (expected full, delta-theta, or fixed-base)");
}

inline std::string to_string(CalibMode m) {
  switch (m) {
    case CalibMode::kFull: return "full";
    case CalibMode::kDeltaThetaOnly: return "delta-theta";
    case CalibMode::kFixedBase: return "fixed-base";
  }
  return "full";
}

struct CalibConfig {
  double lr = 1e-3;
  double lr_final = 1e-5;  // learning rate decays exponentially to this value
  std::size_t epochs = 2000;
  std::size_t batch = 64;
  double lambda = kRotationWeight;
  double divergence_factor = 5.0;
  std::uint64_t seed = 1;
};

inline nlohmann::json to_json(const CalibConfig& c) {
  return {{"lr", c.lr},         {"lr_final", c.lr_final}, {"epochs", c.epochs}, {"batch", c.batch},
          {"lambda", c.lambda}, {"divergence_factor", c.divergence_factor}, {"seed", c.seed}};
}

struct PositionErrors {
  double mean = 0, max = 0;  // meters
};

inline PositionErrors position_errors(const DHChain& c, const std::vector<CalibSample>& samples) {
  PositionErrors e;
  for (const auto& s : samples) {
    const double d = (fk(c, s.xi).position - s.position).norm();
    e.mean += d;
    e.max = std::max(e.max, d);
  }
  if (!samples.empty()) e.mean /= static_cast<double>(samples.size());
  return e;
}

struct CalibReport {
  CalibMode mode = CalibMode::kFull;
  PositionErrors before, after;
  LossParts loss_before, loss_after;
  std::size_t epochs = 0;
};

inline nlohmann::json to_json(const CalibReport& r) {
  return {{"mode", to_string(r.mode)},
          {"mean_error_before_mm", 1e3 * r.before.mean},
          {"max_error_before_mm", 1e3 * r.before.max},
          {"mean_error_after_mm", 1e3 * r.after.mean},
          {"max_error_after_mm", 1e3 * r.after.max},
          {"loss_before", r.loss_before.total},
          {"loss_after", r.loss_after.total},
          {"epochs", r.epochs}};
}

struct CalibResult {
  DHChain chain;
  CalibReport report;
};

inline std::vector<bool> trainable_mask(const DHChain& c, CalibMode mode) {
  std::vector<bool> m(parameter_count(c), true);
  const std::size_t nb = 4 * c.joints();
  if (mode == CalibMode::kDeltaThetaOnly) {
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = i < nb && i % 4 == 0;
  } else if (mode == CalibMode::kFixedBase) {
    for (std::size_t i = nb; i < m.size(); ++i) m[i] = false;
  }
  return m;
}

// Adam on shuffled mini-batches over the trainable subset of the offsets and
// base pose; frozen parameters keep their initial values.
inline CalibResult calibrate(const DHChain& initial, const std::vector<CalibSample>& samples, const CalibConfig& cfg,
                             CalibMode mode = CalibMode::kFull) {
  if (samples.empty()) throw Error("calibrate: no samples");
  if (cfg.batch < 1) throw Error("calibrate: batch must be at least 1");
  CalibResult res{initial, {}};
  res.report.mode = mode;
  res.report.before = position_errors(initial, samples);
  res.report.loss_before = calib_loss(initial, samples, cfg.lambda);
  const auto mask = trainable_mask(initial, mode);

  nn::Tensor2<double> param(1, static_cast<Eigen::Index>(parameter_count(initial)));
  param.value.row(0) = get_parameters(initial).transpose();
  nn::AdamState<double> adam;
  adam.lr = cfg.lr;
  const std::vector<nn::Tensor2<double>*> params{&param};
  const double decay = cfg.epochs > 1 && cfg.lr_final > 0 ? std::pow(cfg.lr_final / cfg.lr, 1.0 / static_cast<double>(cfg.epochs - 1)) : 1.0;

  std::vector<std::size_t> order(samples.size());
  Eigen::VectorXd grad;
  DHChain& chain = res.chain;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    adam.lr = cfg.lr * std::pow(decay, static_cast<double>(e));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(hash_all(cfg.seed, 0xca1b, e));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch)));
      set_parameters(chain, param.value.row(0).transpose());
      calib_loss_and_gradient(chain, samples, batch, cfg.lambda, grad);
      for (std::size_t k = 0; k < mask.size(); ++k)
        if (!mask[k]) grad[static_cast<Eigen::Index>(k)] = 0;
      param.grad = grad.transpose();
      nn::adam_step(params, adam);
    }
    set_parameters(chain, param.value.row(0).transpose());
    const double loss = calib_loss(chain, samples, cfg.lambda).total;
    if (!std::isfinite(loss) || loss > cfg.divergence_factor * std::max(res.report.loss_before.total, 1e-12))
      throw Error("calibrate: diverged at epoch " + std::to_string(e + 1) + " (loss " + std::to_string(loss) +
                  ", initial " + std::to_string(res.report.loss_before.total) + "); config " + to_json(cfg).dump());
  }
  res.report.epochs = cfg.epochs;
  res.report.after = position_errors(chain, samples);
  res.report.loss_after = calib_loss(chain, samples, cfg.lambda);
  return res;
}

inline CalibResult calibrate_ablation(CalibMode mode, const DHChain& initial, const std::vector<CalibSample>& samples,
                                      const CalibConfig& cfg) {
  return calibrate(initial, samples, cfg, mode);
}

// -----------------------------------------------------------------------------
// Synthetic tracker data
// -----------------------------------------------------------------------------

enum class DataMode { kStatic, kDynamic, kSingleJoint };

inline DataMode parse_data_mode(const std::string& s) {
  if (s == "static") return DataMode::kStatic;
  if (s == "dynamic") return DataMode::kDynamic;
  if (s == "single-joint") return DataMode::kSingleJoint;
  throw Error("unknown data mode '" + s + "' (expected static, dynamic, or single-joint)");
}

struct TrackerNoise {
  double position_sigma = 0.0004;  // meters, per axis
  double rotation_sigma = 0.001;   // radians, angle about a uniform axis
};

struct TrackerDataConfig {
  std::size_t samples = 500;
  TrackerNoise noise;
  DataMode mode = DataMode::kStatic;
  double joint_range = 2.0;        // joint values drawn from [-range, range]
  double lag = 0.001;              // share of each step the dynamic readings trail by
  std::size_t steps_per_segment = 10;
  std::uint64_t seed = 1;
};

inline Quat perturb_rotation(const Quat& q, double sigma, Rng& rng) {
  if (sigma <= 0) return q;
  const Vec3 axis = rng.unit_vector();
  const double angle = sigma * rng.normal();
  const Eigen::Quaterniond noise(Eigen::AngleAxisd(angle, axis));
  const Eigen::Quaterniond out = noise * Eigen::Quaterniond(q[0], q[1], q[2], q[3]);
  return Quat(out.w(), out.x(), out.y(), out.z()).normalized();
}

// Tracked poses of the true chain with encoder readings xi. Dynamic mode
// records poses along interpolated trajectories while the readings lag the
// true joint values through a first-order low-pass filter.
inline std::vector<CalibSample> generate_tracker_data(const DHChain& truth, const TrackerDataConfig& cfg) {
  const std::size_t n = truth.joints();
  Rng rng(hash_all(cfg.seed, 0x74ac));
  auto random_config = [&] {
    Eigen::VectorXd xi(static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < n; ++j) xi[static_cast<Eigen::Index>(j)] = rng.uniform(-cfg.joint_range, cfg.joint_range);
    return xi;
  };
  std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> states;  // (true, recorded)
  switch (cfg.mode) {
    case DataMode::kStatic:
      for (std::size_t i = 0; i < cfg.samples; ++i) {
        const auto xi = random_config();
        states.emplace_back(xi, xi);
      }
      break;
    case DataMode::kDynamic: {
      Eigen::VectorXd from = random_config(), reading = from;
      while (states.size() < cfg.samples) {
        const Eigen::VectorXd to = random_config();
        for (std::size_t k = 1; k <= cfg.steps_per_segment && states.size() < cfg.samples; ++k) {
          const double t = static_cast<double>(k) / static_cast<double>(cfg.steps_per_segment);
          const Eigen::VectorXd xi = from + t * (to - from);
          reading += (1.0 - cfg.lag) * (xi - reading);
          // Recorded value trails the commanded one.
          states.emplace_back(xi, reading);
        }
        from = to;
      }
      break;
    }
    case DataMode::kSingleJoint: {
      const Eigen::VectorXd home = random_config();
      for (std::size_t i = 0; i < cfg.samples; ++i) {
        Eigen::VectorXd xi = home;
        const std::size_t j = i % n;
        xi[static_cast<Eigen::Index>(j)] = rng.uniform(-cfg.joint_range, cfg.joint_range);
        states.emplace_back(xi, xi);
      }
      break;
    }
  }
  std::vector<CalibSample> out;
  out.reserve(states.size());
  for (const auto& [true_xi, recorded] : states) {
    const Pose p = fk(truth, true_xi);
    CalibSample s;
    s.xi = recorded;
    s.position = p.position;
    for (int a = 0; a < 3; ++a) s.position[a] += cfg.noise.position_sigma * rng.normal();
    s.orientation = perturb_rotation(p.orientation, cfg.noise.rotation_sigma, rng);
    out.push_back(std::move(s));
  }
  return out;
}

// A 7-joint arm with modified-DH nominal values typical of collaborative
// manipulators (meters, radians).
inline DHChain reference_arm() {
  const double h = kPi / 2;
  return DHChain({{0, 0.333, 0, 0},
                  {0, 0, -h, 0},
                  {0, 0.316, h, 0},
                  {0, 0, h, 0.0825},
                  {0, 0.384, -h, -0.0825},
                  {0, 0, h, 0},
                  {0, 0.107, h, 0.088}});
}

struct Perturbation {
  double theta = 0.02;    // radians
  double length = 0.003;  // meters, for d and a
  double alpha = 0.0;     // radians
  double base_position = 0.005;
  double base_angle = 0.005;
};

// Ground-truth chain: nominal values plus uniformly drawn offsets and base pose.
inline DHChain perturbed_chain(const DHChain& nominal, const Perturbation& p, std::uint64_t seed) {
  DHChain truth = nominal;
  Rng rng(hash_all(seed, 0x9e27));
  for (auto& o : truth.offsets) {
    o.theta = rng.uniform(-p.theta, p.theta);
    o.d = rng.uniform(-p.length, p.length);
    o.alpha = rng.uniform(-p.alpha, p.alpha);
    o.a = rng.uniform(-p.length, p.length);
  }
  // Base offset of fixed magnitude in a random direction.
  truth.base_position = nominal.base_position + p.base_position * rng.unit_vector();
  truth.base_euler = nominal.base_euler + p.base_angle * rng.unit_vector();
  return truth;
}

// -----------------------------------------------------------------------------
// Files
// -----------------------------------------------------------------------------

inline nlohmann::json joint_json(const JointParams& p) {
  return {{"theta", p.theta}, {"d", p.d}, {"alpha", p.alpha}, {"a", p.a}};
}

inline JointParams joint_from_json(const nlohmann::json& j) {
  return {j.value("theta", 0.0), j.value("d", 0.0), j.value("alpha", 0.0), j.value("a", 0.0)};
}

inline nlohmann::json to_json(const DHChain& c) {
  nlohmann::json j;
  j["joints"] = nlohmann::json::array();
  j["offsets"] = nlohmann::json::array();
  j["effective"] = nlohmann::json::array();
  for (std::size_t i = 0; i < c.joints(); ++i) {
    j["joints"].push_back(joint_json(c.nominal[i]));
    j["offsets"].push_back(joint_json(c.offsets[i]));
    j["effective"].push_back(joint_json(c.effective(i)));
  }
  j["base"] = {{"position", {c.base_position.x(), c.base_position.y(), c.base_position.z()}},
               {"euler_xyz", {c.base_euler.x(), c.base_euler.y(), c.base_euler.z()}}};
  return j;
}

inline DHChain chain_from_json(const nlohmann::json& j) {
  std::vector<JointParams> joints;
  for (const auto& e : j.at("joints")) joints.push_back(joint_from_json(e));
  if (joints.empty()) throw Error("DH file lists no joints");
  DHChain c(std::move(joints));
  if (j.contains("offsets")) {
    const auto& o = j.at("offsets");
    if (o.size() != c.joints()) throw Error("DH file: offsets do not match joint count");
    for (std::size_t i = 0; i < c.joints(); ++i) c.offsets[i] = joint_from_json(o.at(i));
  }
  if (j.contains("base")) {
    const auto& b = j.at("base");
    const auto p = b.value("position", std::vector<double>{0, 0, 0});
    const auto e = b.value("euler_xyz", std::vector<double>{0, 0, 0});
    if (p.size() != 3 || e.size() != 3) throw Error("DH file: base position and euler_xyz need 3 values");
    c.base_position = Vec3(p[0], p[1], p[2]);
    c.base_euler = Vec3(e[0], e[1], e[2]);
  }
  return c;
}

inline DHChain load_chain(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return chain_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

inline void save_chain(const DHChain& c, const std::filesystem::path& path, const nlohmann::json& extra = {}) {
  nlohmann::json j = to_json(c);
  if (!extra.is_null()) j["report"] = extra;
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline void write_samples_csv(const std::filesystem::path& path, const std::vector<CalibSample>& samples) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  const std::size_t n = samples.empty() ? 0 : static_cast<std::size_t>(samples.front().xi.size());
  out << "px,py,pz,qw,qx,qy,qz";
  for (std::size_t j = 1; j <= n; ++j) out << ",xi" << j;
  out << '\n';
  char buf[64];
  for (const auto& s : samples) {
    std::string line;
    auto put = [&](double v) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      if (!line.empty()) line += ',';
      line += buf;
    };
    for (int a = 0; a < 3; ++a) put(s.position[a]);
    for (int a = 0; a < 4; ++a) put(s.orientation[a]);
    for (Eigen::Index j = 0; j < s.xi.size(); ++j) put(s.xi[j]);
    out << line << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

inline std::vector<CalibSample> read_samples_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(path.string() + ": empty file");
  std::size_t cols = 1;
  for (char ch : line) cols += ch == ',';
  if (cols < 8 || line.rfind("px,py,pz,qw,qx,qy,qz", 0) != 0)
    throw Error(path.string() + ": expected header px,py,pz,qw,qx,qy,qz,xi1..xin");
  std::vector<CalibSample> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        v.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw Error(path.string() + ":" + std::to_string(lineno) + ": malformed number '" + cell + "'");
      }
    }
    if (v.size() != cols) throw Error(path.string() + ":" + std::to_string(lineno) + ": wrong column count");
    CalibSample s;
    s.position = Vec3(v[0], v[1], v[2]);
    s.orientation = Quat(v[3], v[4], v[5], v[6]);
    if (std::abs(s.orientation.norm() - 1.0) > 1e-6)
      throw Error(path.string() + ":" + std::to_string(lineno) + ": quaternion is not unit length");
    s.xi = Eigen::Map<const Eigen::VectorXd>(v.data() + 7, static_cast<Eigen::Index>(cols - 7));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace softocc::dh

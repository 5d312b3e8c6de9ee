#include "softocc/dhcalib.hpp"

#include <gtest/gtest.h>

#include <filesystem>

namespace {

using namespace softocc;
using namespace softocc::dh;

// Independent chain: each joint is RotX(alpha) TransX(a) RotZ(theta) TransZ(d).
Eigen::Isometry3d oracle_fk(const DHChain& c, const Eigen::VectorXd& xi) {
  Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
  t.translate(c.base_position);
  t.rotate(Eigen::AngleAxisd(c.base_euler.z(), Vec3::UnitZ()));
  t.rotate(Eigen::AngleAxisd(c.base_euler.y(), Vec3::UnitY()));
  t.rotate(Eigen::AngleAxisd(c.base_euler.x(), Vec3::UnitX()));
  for (std::size_t i = 0; i < c.joints(); ++i) {
    const JointParams w{c.nominal[i].theta + c.offsets[i].theta, c.nominal[i].d + c.offsets[i].d,
                        c.nominal[i].alpha + c.offsets[i].alpha, c.nominal[i].a + c.offsets[i].a};
    t.rotate(Eigen::AngleAxisd(w.alpha, Vec3::UnitX()));
    t.translate(Vec3(w.a, 0, 0));
    t.rotate(Eigen::AngleAxisd(xi[static_cast<Eigen::Index>(i)] + w.theta, Vec3::UnitZ()));
    t.translate(Vec3(0, 0, w.d));
  }
  return t;
}

Quat oracle_quat(const Eigen::Isometry3d& t) {
  const Eigen::Quaterniond q(t.rotation());
  return Quat(q.w(), q.x(), q.y(), q.z());
}

DHChain random_chain(Rng& rng, std::size_t n) {
  std::vector<JointParams> joints(n);
  for (auto& j : joints) j = {rng.uniform(-kPi, kPi), rng.uniform(-0.5, 0.5), rng.uniform(-kPi, kPi), rng.uniform(-0.5, 0.5)};
  DHChain c(joints);
  for (auto& o : c.offsets) o = {rng.uniform(-0.1, 0.1), rng.uniform(-0.01, 0.01), rng.uniform(-0.1, 0.1), rng.uniform(-0.01, 0.01)};
  c.base_position = rng.uniform_in_box(Vec3::Constant(-1), Vec3::Constant(1));
  c.base_euler = rng.uniform_in_box(Vec3::Constant(-kPi), Vec3::Constant(kPi));
  return c;
}

Eigen::VectorXd random_config(Rng& rng, std::size_t n) {
  Eigen::VectorXd xi(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < xi.size(); ++i) xi[i] = rng.uniform(-kPi, kPi);
  return xi;
}

double oracle_loss(const DHChain& c, const std::vector<CalibSample>& samples, double lambda) {
  double pos = 0, rot = 0;
  for (const auto& s : samples) {
    const auto t = oracle_fk(c, s.xi);
    pos += (t.translation() - s.position).norm();
    const Quat q = oracle_quat(t);
    double minus = 0, plus = 0;
    for (int k = 0; k < 4; ++k) {
      minus += (q[k] - s.orientation[k]) * (q[k] - s.orientation[k]);
      plus += (q[k] + s.orientation[k]) * (q[k] + s.orientation[k]);
    }
    rot += std::sqrt(std::min(minus, plus));
  }
  const double n = static_cast<double>(samples.size());
  return pos / n + lambda * rot / n;
}

struct Scenario {
  DHChain nominal = reference_arm();
  DHChain truth = perturbed_chain(nominal, {}, 3);
  std::vector<CalibSample> data;

  Scenario() {
    TrackerDataConfig tc;
    tc.seed = 5;
    data = generate_tracker_data(truth, tc);
  }
};

const Scenario& scenario() {
  static const Scenario s;
  return s;
}

TEST(Fk, SingleLinkAlongX) {
  DHChain c({{0, 0, 0, 1}});
  const Pose p = fk(c, Eigen::VectorXd::Zero(1));
  EXPECT_LT((p.position - Vec3(1, 0, 0)).norm(), 1e-15);
  EXPECT_LT(quat_distance(p.orientation, Quat(1, 0, 0, 0)), 1e-15);
}

TEST(Fk, PlanarRotationMovesTheNextLink) {
  // The link length a_i acts before the joint rotation, so the rotation of a
  // joint shows up in the position of the following link.
  DHChain c({{0, 0, 0, 0}, {0, 0, 0, 1}});
  Eigen::VectorXd xi(2);
  xi << kPi / 2, 0;
  EXPECT_LT((fk(c, xi).position - Vec3(0, 1, 0)).norm(), 1e-15);
  DHChain single({{0, 0, 0, 1}});
  EXPECT_LT((fk(single, Eigen::VectorXd::Constant(1, kPi / 2)).position - Vec3(1, 0, 0)).norm(), 1e-15);
}

TEST(Fk, MatchesIndependentCompositionOnRandomChains) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = trial == 0 ? 7 : 1 + rng.index(8);
    const DHChain c = random_chain(rng, n);
    const auto xi = random_config(rng, n);
    const Pose p = fk(c, xi);
    const auto t = oracle_fk(c, xi);
    ASSERT_LT((p.position - t.translation()).norm(), 1e-9) << trial;
    ASSERT_LT(quat_distance(p.orientation, oracle_quat(t)), 1e-9) << trial;
    ASSERT_NEAR(p.orientation.norm(), 1.0, 1e-12);
  }
}

TEST(Fk, WrongJointCountThrows) {
  EXPECT_THROW(fk(reference_arm(), Eigen::VectorXd::Zero(6)), Error);
}

TEST(QuatDistance, Examples) {
  const Quat q(0.5, -0.5, 0.5, 0.5), r(1, 0, 0, 0), s(0, 1, 0, 0);
  EXPECT_EQ(quat_distance(q, q), 0.0);
  EXPECT_EQ(quat_distance(q, -q), 0.0);
  EXPECT_DOUBLE_EQ(quat_distance(r, s), std::sqrt(2.0));
}

TEST(QuatDistance, SymmetricAndSignInvariant) {
  Rng rng(12);
  for (int i = 0; i < 200; ++i) {
    Quat a, b;
    for (int k = 0; k < 4; ++k) {
      a[k] = rng.normal();
      b[k] = rng.normal();
    }
    a.normalize();
    b.normalize();
    EXPECT_EQ(quat_distance(a, b), quat_distance(b, a));
    EXPECT_EQ(quat_distance(a, -a), 0.0);
    EXPECT_LE(quat_distance(a, b), std::sqrt(2.0) + 1e-12);
  }
}

TEST(QuatFromMatrix, CoversEveryBranch) {
  Rng rng(13);
  for (int i = 0; i < 500; ++i) {
    const Vec3 axis = rng.unit_vector();
    const double angle = i < 4 ? kPi : rng.uniform(-kPi, kPi);
    const Vec3 ax = i < 4 ? Vec3::Unit(i % 3) : axis;
    const Mat3 r = Eigen::AngleAxisd(angle, ax).toRotationMatrix();
    const Eigen::Quaterniond ref(r);
    const Quat q = quat_from_matrix(r);
    EXPECT_NEAR(q.norm(), 1.0, 1e-12);
    EXPECT_LT(quat_distance(q, Quat(ref.w(), ref.x(), ref.y(), ref.z())), 1e-12);
  }
}

TEST(Loss, ExactDataGivesZero) {
  const Scenario& sc = scenario();
  TrackerDataConfig tc;
  tc.noise = {0, 0};
  tc.samples = 50;
  const auto clean = generate_tracker_data(sc.truth, tc);
  EXPECT_LT(calib_loss(sc.truth, clean).total, 1e-12);
}

TEST(Loss, PositionOffsetOfOneMillimetre) {
  const Scenario& sc = scenario();
  TrackerDataConfig tc;
  tc.noise = {0, 0};
  tc.samples = 50;
  auto data = generate_tracker_data(sc.truth, tc);
  Rng rng(14);
  for (auto& s : data) s.position += 0.001 * rng.unit_vector();
  EXPECT_NEAR(calib_loss(sc.truth, data).total, 0.001, 1e-12);
}

TEST(Loss, MatchesScalarOracle) {
  Rng rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    DHChain c = scenario().nominal;
    for (auto& o : c.offsets) o = {rng.uniform(-0.05, 0.05), rng.uniform(-0.01, 0.01), rng.uniform(-0.05, 0.05), rng.uniform(-0.01, 0.01)};
    c.base_position = 0.01 * rng.unit_vector();
    std::vector<CalibSample> data(scenario().data.begin(), scenario().data.begin() + 60);
    const double lambda = trial == 0 ? kRotationWeight : rng.uniform(0, 200);
    EXPECT_NEAR(calib_loss(c, data, lambda).total, oracle_loss(c, data, lambda), 1e-9);
  }
}

TEST(Gradient, MatchesCentralDifferences) {
  Rng rng(16);
  const double h = 1e-7;
  for (int trial = 0; trial < 5; ++trial) {
    DHChain c = trial == 0 ? scenario().nominal : random_chain(rng, 7);
    std::vector<CalibSample> data;
    if (trial == 0) {
      data.assign(scenario().data.begin(), scenario().data.begin() + 100);
    } else {
      TrackerDataConfig tc;
      tc.samples = 40;
      tc.seed = static_cast<std::uint64_t>(trial);
      data = generate_tracker_data(random_chain(rng, 7), tc);
    }
    Eigen::VectorXd grad;
    calib_loss_and_gradient(c, data, kRotationWeight, grad);
    const Eigen::VectorXd p = get_parameters(c);
    Eigen::VectorXd numeric(p.size());
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      Eigen::VectorXd up = p, down = p;
      up[k] += h;
      down[k] -= h;
      DHChain a = c, b = c;
      set_parameters(a, up);
      set_parameters(b, down);
      numeric[k] = (calib_loss(a, data).total - calib_loss(b, data).total) / (2 * h);
    }
    EXPECT_LT((numeric - grad).norm() / grad.norm(), 1e-5) << "trial " << trial;
  }
}

TEST(Gradient, BatchLossIsTheMeanOverIndices) {
  const auto& data = scenario().data;
  Eigen::VectorXd g_all, g_one;
  const auto all = calib_loss_and_gradient(scenario().nominal, data, kRotationWeight, g_all);
  EXPECT_NEAR(all.total, calib_loss(scenario().nominal, data).total, 1e-12);
  const auto one = calib_loss_and_gradient(scenario().nominal, data, {7}, kRotationWeight, g_one);
  EXPECT_NEAR(one.total, calib_loss(scenario().nominal, {data[7]}).total, 1e-12);
}

TEST(TrackerData, DefaultsDeterminismAndUnitQuaternions) {
  const TrackerDataConfig tc;
  EXPECT_EQ(tc.samples, 500u);
  const auto& sc = scenario();
  TrackerDataConfig again;
  again.seed = 5;
  const auto twin = generate_tracker_data(sc.truth, again);
  ASSERT_EQ(twin.size(), sc.data.size());
  for (std::size_t i = 0; i < twin.size(); ++i) {
    ASSERT_EQ(twin[i].position, sc.data[i].position);
    ASSERT_EQ(twin[i].orientation, sc.data[i].orientation);
    ASSERT_EQ(twin[i].xi, sc.data[i].xi);
    ASSERT_NEAR(twin[i].orientation.norm(), 1.0, 1e-6);
  }
}

TEST(TrackerData, ModesProduceTheirPatterns) {
  const auto& sc = scenario();
  TrackerDataConfig tc;
  tc.samples = 70;
  tc.noise = {0, 0};
  tc.mode = DataMode::kSingleJoint;
  const auto single = generate_tracker_data(sc.truth, tc);
  for (std::size_t i = 1; i < single.size(); ++i) {
    int changed = 0;
    for (Eigen::Index j = 0; j < 7; ++j) changed += single[i].xi[j] != single[0].xi[j];
    EXPECT_LE(changed, 2);
  }
  tc.mode = DataMode::kDynamic;
  const auto dynamic = generate_tracker_data(sc.truth, tc);
  ASSERT_EQ(dynamic.size(), 70u);
  const double lagged = calib_loss(sc.truth, dynamic).total;
  EXPECT_GT(lagged, 0.0);
  EXPECT_LT(position_errors(sc.truth, dynamic).mean, 0.005);
  EXPECT_EQ(parse_data_mode("dynamic"), DataMode::kDynamic);
  EXPECT_THROW(parse_data_mode("wobbly"), Error);
}

TEST(Calibrate, ReducesErrorBelowOneMillimetre) {
  const auto& sc = scenario();
  const auto r = calibrate(sc.nominal, sc.data, {});
  EXPECT_LE(r.report.after.mean, 1.0e-3);
  EXPECT_GE(1.0 - r.report.after.mean / r.report.before.mean, 0.8);
  EXPECT_LT(r.report.after.max, r.report.before.max);
  EXPECT_EQ(r.report.epochs, 2000u);
}

TEST(Calibrate, LeavesAnExactChainInPlace) {
  const auto& sc = scenario();
  TrackerDataConfig tc;
  tc.noise = {0, 0};
  tc.samples = 200;
  const auto clean = generate_tracker_data(sc.nominal, tc);
  CalibConfig cfg;
  cfg.epochs = 200;
  const auto r = calibrate(sc.nominal, clean, cfg);
  EXPECT_LE(r.report.after.mean, 1e-6);
}

TEST(Calibrate, AblationsAreNoBetterThanFullCalibration) {
  const auto& sc = scenario();
  const auto full = calibrate(sc.nominal, sc.data, {});
  const auto theta = calibrate_ablation(CalibMode::kDeltaThetaOnly, sc.nominal, sc.data, {});
  DHChain known_base = sc.nominal;
  known_base.base_position = sc.truth.base_position;
  known_base.base_euler = sc.truth.base_euler;
  const auto fixed = calibrate_ablation(CalibMode::kFixedBase, known_base, sc.data, {});
  EXPECT_GT(theta.report.after.mean, full.report.after.mean);
  EXPECT_LE(full.report.after.mean, theta.report.after.mean + 1e-6);
  EXPECT_LE(full.report.after.mean, fixed.report.after.mean + 1e-6);
  EXPECT_LE(std::abs(fixed.report.after.mean - full.report.after.mean), 0.1 * full.report.after.mean);
  EXPECT_EQ(fixed.chain.base_position, sc.truth.base_position);
  for (std::size_t i = 0; i < theta.chain.joints(); ++i) {
    EXPECT_EQ(theta.chain.offsets[i].d, 0.0);
    EXPECT_EQ(theta.chain.offsets[i].a, 0.0);
    EXPECT_EQ(theta.chain.offsets[i].alpha, 0.0);
  }
  EXPECT_EQ(theta.chain.base_euler, Vec3::Zero());
}

TEST(Calibrate, DivergenceAbortsWithConfig) {
  const auto& sc = scenario();
  CalibConfig cfg;
  cfg.lr = 50;
  cfg.epochs = 5;
  try {
    calibrate(sc.nominal, sc.data, cfg);
    FAIL();
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("diverged"), std::string::npos) << msg;
    EXPECT_NE(msg.find("\"lr\""), std::string::npos) << msg;
  }
}

TEST(Files, ChainAndSamplesRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "softocc_dhcalib";
  std::filesystem::create_directories(dir);
  const auto& sc = scenario();
  save_chain(sc.truth, dir / "truth.json");
  const DHChain back = load_chain(dir / "truth.json");
  Rng rng(17);
  const auto xi = random_config(rng, 7);
  EXPECT_EQ(fk(back, xi).position, fk(sc.truth, xi).position);
  write_samples_csv(dir / "s.csv", sc.data);
  const auto samples = read_samples_csv(dir / "s.csv");
  ASSERT_EQ(samples.size(), sc.data.size());
  EXPECT_EQ(samples[42].position, sc.data[42].position);
  EXPECT_EQ(samples[42].xi, sc.data[42].xi);
  std::ofstream(dir / "bad.csv") << "px,py,pz,qw,qx,qy,qz,xi1\n1,2,3,1,0,0,0,zz\n";
  EXPECT_THROW(read_samples_csv(dir / "bad.csv"), Error);
  std::ofstream(dir / "bad.json") << "{\"joints\": []}";
  EXPECT_THROW(load_chain(dir / "bad.json"), Error);
}

}  // namespace

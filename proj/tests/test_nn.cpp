#include "softocc/nn.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace {

using namespace softocc;
using namespace softocc::nn;

template <typename T>
Mat<T> random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Mat<T> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(scale * rng.uniform(-1, 1));
  return m;
}

// Scalar-loop reference for the mean cross-entropy.
double ce_oracle(const Mat<double>& logits, const std::vector<int>& labels) {
  double total = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    double z = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) z += std::exp(logits(r, c));
    total += -std::log(std::exp(logits(r, labels[static_cast<std::size_t>(r)])) / z);
  }
  return total / static_cast<double>(logits.rows());
}

double l1_oracle(const Mat<double>& a, const Mat<double>& b) {
  double total = 0;
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < a.cols(); ++c) total += std::abs(a(r, c) - b(r, c));
  return total / static_cast<double>(a.size());
}

// Nonzero biases keep pre-activations off the relu kink even when a whole
// input row is zero.
template <typename T>
void randomize_biases(Mlp<T>& mlp, Rng& rng) {
  for (auto& l : mlp.layers)
    for (Eigen::Index i = 0; i < l.bias.value.size(); ++i) l.bias.value.data()[i] = static_cast<T>(rng.uniform(-0.5, 0.5));
}

// Loss = sum(w .* f(x)) for a fixed random readout w.
template <typename T>
double readout(const Mat<T>& y, const Mat<T>& w) {
  return static_cast<double>((y.array() * w.array()).sum());
}

// Max relative error between analytic gradients and central differences for a
// 3-layer stack; perturbs every parameter and every input entry.
template <typename T>
double stack_gradient_error(std::uint64_t seed, double h) {
  Rng rng(seed);
  Mlp<T> mlp = Mlp<T>::make({4, 7, 6, 3}, Activation::kNone, rng);
  randomize_biases(mlp, rng);
  const Mat<T> x = random_mat<T>(5, 4, rng);
  const Mat<T> w = random_mat<T>(5, 3, rng);
  typename Mlp<T>::Trace tr;
  const Mat<T> y = mlp.forward(x, DropoutMode::kEval, 0, 0, &tr);
  zero_grads(mlp.parameters());
  const Mat<T> dx = mlp.backward(tr, w);

  double worst = 0;
  auto check = [&](T& slot, double analytic) {
    const T saved = slot;
    slot = static_cast<T>(saved + h);
    const double up = readout(mlp.forward(x), w);
    slot = static_cast<T>(saved - h);
    const double down = readout(mlp.forward(x), w);
    slot = saved;
    const double numeric = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(numeric - analytic) / std::max(1.0, std::abs(numeric)));
  };
  for (auto* p : mlp.parameters())
    for (Eigen::Index i = 0; i < p->value.size(); ++i) check(p->value.data()[i], static_cast<double>(p->grad.data()[i]));
  Mat<T> xm = x;
  for (Eigen::Index i = 0; i < xm.size(); ++i) {
    const T saved = xm.data()[i];
    xm.data()[i] = static_cast<T>(saved + h);
    const double up = readout(mlp.forward(xm), w);
    xm.data()[i] = static_cast<T>(saved - h);
    const double down = readout(mlp.forward(xm), w);
    xm.data()[i] = saved;
    const double numeric = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(numeric - static_cast<double>(dx.data()[i])) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

TEST(Dense, IdentityLayerPassesInputThrough) {
  DenseLayer<double> l(3, 3, Activation::kNone);
  l.weight.value = Mat<double>::Identity(3, 3);
  Rng rng(1);
  const Mat<double> x = random_mat<double>(4, 3, rng);
  EXPECT_EQ(dense_forward(l, x), x);
}

TEST(Dense, ReluOnNegativeInputGivesZeroOutputAndGradient) {
  DenseLayer<double> l(2, 2, Activation::kRelu);
  l.weight.value = Mat<double>::Identity(2, 2);
  Mat<double> x(3, 2);
  x << -1, -2, -0.5, -3, -4, -0.1;
  const Mat<double> y = dense_forward(l, x);
  EXPECT_TRUE((y.array() == 0).all());
  const Mat<double> dx = dense_backward<double>(l, x, y, Mat<double>::Ones(3, 2));
  EXPECT_TRUE((dx.array() == 0).all());
  EXPECT_TRUE((l.weight.grad.array() == 0).all());
}

TEST(Dense, ShapeMismatchNamesBothShapes) {
  DenseLayer<float> l(3, 2, Activation::kNone);
  try {
    dense_forward<float>(l, Mat<float>::Zero(4, 5));
    FAIL();
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(4x5)"), std::string::npos);
    EXPECT_NE(msg.find("(2x3)"), std::string::npos);
  }
}

TEST(Dense, StackGradientsMatchFiniteDifferencesInDouble) {
  for (std::uint64_t s = 0; s < 20; ++s) EXPECT_LT(stack_gradient_error<double>(100 + s, 1e-5), 1e-6) << "seed " << s;
}

TEST(Dense, StackGradientsMatchFiniteDifferencesInFloat) {
  for (std::uint64_t s = 0; s < 20; ++s) EXPECT_LT(stack_gradient_error<float>(200 + s, 1e-3), 1e-2) << "seed " << s;
}

TEST(Dense, DropoutGradientFlowsThroughMask) {
  Rng rng(5);
  Mlp<double> mlp = Mlp<double>::make({3, 8, 8, 2}, Activation::kNone, rng, 0.3);
  randomize_biases(mlp, rng);
  const Mat<double> x = random_mat<double>(6, 3, rng);
  const Mat<double> w = random_mat<double>(6, 2, rng);
  typename Mlp<double>::Trace tr;
  mlp.forward(x, DropoutMode::kTrain, 77, 0, &tr);
  zero_grads(mlp.parameters());
  mlp.backward(tr, w);
  const double h = 1e-6;
  for (auto* p : mlp.parameters()) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& v = p->value.data()[i];
      const double saved = v;
      v = saved + h;
      const double up = readout(mlp.forward(x, DropoutMode::kTrain, 77), w);
      v = saved - h;
      const double down = readout(mlp.forward(x, DropoutMode::kTrain, 77), w);
      v = saved;
      EXPECT_NEAR((up - down) / (2 * h), p->grad.data()[i], 1e-6);
    }
  }
}

TEST(Softmax, RowsFormASimplex) {
  Rng rng(3);
  const Mat<float> p = softmax(random_mat<float>(200, 5, rng, 30.0));
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    EXPECT_TRUE((p.row(r).array() >= 0).all());
    EXPECT_NEAR(p.row(r).cast<double>().sum(), 1.0, 1e-6);
  }
}

TEST(CrossEntropy, ConfidentCorrectLogitsGiveZeroLoss) {
  Mat<double> logits = Mat<double>::Zero(2, 3);
  logits(0, 1) = 1e6;
  logits(1, 2) = 1e6;
  EXPECT_NEAR(cross_entropy(logits, {1, 2}).loss, 0.0, 1e-12);
}

TEST(CrossEntropy, UniformLogitsGiveLogOfClassCount) {
  EXPECT_NEAR(cross_entropy<double>(Mat<double>::Zero(4, 3), {0, 1, 2, 0}).loss, std::log(3.0), 1e-12);
  EXPECT_NEAR(std::log(3.0), 1.0986, 1e-4);
}

TEST(CrossEntropy, MatchesScalarLoopOracle) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(300 + s);
    const Mat<double> logits = random_mat<double>(9, 4, rng, 3.0);
    std::vector<int> labels;
    for (int i = 0; i < 9; ++i) labels.push_back(static_cast<int>(rng.index(4)));
    EXPECT_NEAR(cross_entropy(logits, labels).loss, ce_oracle(logits, labels), 1e-6);
  }
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(400 + s);
    Mat<double> logits = random_mat<double>(6, 3, rng, 2.0);
    std::vector<int> labels;
    for (int i = 0; i < 6; ++i) labels.push_back(static_cast<int>(rng.index(3)));
    const auto res = cross_entropy(logits, labels);
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
      const double saved = logits.data()[i];
      logits.data()[i] = saved + h;
      const double up = ce_oracle(logits, labels);
      logits.data()[i] = saved - h;
      const double down = ce_oracle(logits, labels);
      logits.data()[i] = saved;
      const double numeric = (up - down) / (2 * h);
      EXPECT_LT(std::abs(numeric - res.grad.data()[i]) / std::max(1.0, std::abs(numeric)), 1e-6);
    }
  }
}

TEST(CrossEntropy, RejectsLabelOutOfRange) {
  EXPECT_THROW(cross_entropy<double>(Mat<double>::Zero(1, 3), {3}), Error);
}

TEST(L1, EqualInputsGiveZero) {
  Rng rng(6);
  const Mat<double> a = random_mat<double>(5, 1, rng);
  const auto r = l1_loss(a, a);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_TRUE((r.grad.array() == 0).all());
}

TEST(L1, ConstantOffsetGivesOffset) {
  Rng rng(7);
  const Mat<double> a = random_mat<double>(8, 1, rng);
  EXPECT_NEAR(l1_loss<double>(a.array() + 0.5, a).loss, 0.5, 1e-12);
}

TEST(L1, MatchesScalarLoopOracleAndFiniteDifferences) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(500 + s);
    Mat<double> a = random_mat<double>(7, 1, rng);
    const Mat<double> b = random_mat<double>(7, 1, rng);
    const auto r = l1_loss(a, b);
    EXPECT_NEAR(r.loss, l1_oracle(a, b), 1e-7);
    const double h = 1e-7;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      const double saved = a(i);
      a(i) = saved + h;
      const double up = l1_oracle(a, b);
      a(i) = saved - h;
      const double down = l1_oracle(a, b);
      a(i) = saved;
      EXPECT_NEAR((up - down) / (2 * h), r.grad(i), 1e-6);
    }
  }
}

TEST(Dropout, ZeroRateIsIdentityInEveryMode) {
  Rng rng(8);
  const Mat<float> x = random_mat<float>(10, 10, rng);
  for (auto mode : {DropoutMode::kTrain, DropoutMode::kEval, DropoutMode::kMc}) EXPECT_EQ(dropout(x, 0.0, mode, 1), x);
}

TEST(Dropout, EvalModeIsIdentity) {
  Rng rng(9);
  const Mat<float> x = random_mat<float>(10, 10, rng);
  EXPECT_EQ(dropout(x, 0.2, DropoutMode::kEval, 1), x);
}

TEST(Dropout, TrainModeKeepsExpectedFractionAndScales) {
  const Mat<float> x = Mat<float>::Ones(1000, 100);
  const Mat<float> y = dropout(x, 0.2, DropoutMode::kTrain, 42);
  const double kept = static_cast<double>((y.array() != 0).count()) / static_cast<double>(y.size());
  EXPECT_NEAR(kept, 0.8, 0.01);
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (y.data()[i] != 0) ASSERT_FLOAT_EQ(y.data()[i], 1.25f);
}

TEST(Dropout, McMasksAreReproducibleAndIndependentOfChunking) {
  Rng rng(10);
  const Mat<float> x = random_mat<float>(64, 16, rng);
  const Mat<float> full = dropout(x, 0.2, DropoutMode::kMc, 99);
  EXPECT_EQ(full, dropout(x, 0.2, DropoutMode::kMc, 99));
  EXPECT_NE(full, dropout(x, 0.2, DropoutMode::kMc, 100));
  const Mat<float> tail = dropout<float>(x.bottomRows(24), 0.2, DropoutMode::kMc, 99, 40);
  EXPECT_EQ(tail, full.bottomRows(24));
}

TEST(Dropout, RejectsRateOfOne) { EXPECT_THROW(dropout<float>(Mat<float>::Ones(2, 2), 1.0, DropoutMode::kTrain, 0), Error); }

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor2<double> p(3, 2);
  p.value.setConstant(0.7);
  p.zero_grad();
  AdamState<double> st;
  for (int i = 0; i < 5; ++i) adam_step<double>({&p}, st);
  EXPECT_TRUE((p.value.array() == 0.7).all());
}

TEST(Adam, FirstStepMovesBySignTimesLearningRate) {
  Tensor2<double> p(1, 3);
  p.zero_grad();
  p.grad << 3.0, -0.01, 250.0;
  AdamState<double> st;
  st.lr = 0.01;
  adam_step<double>({&p}, st);
  EXPECT_NEAR(p.value(0, 0), -0.01, 1e-8);
  EXPECT_NEAR(p.value(0, 1), 0.01, 1e-5);
  EXPECT_NEAR(p.value(0, 2), -0.01, 1e-8);
}

TEST(Adam, MinimizesParabola) {
  Tensor2<double> x(1, 1);
  x.value(0, 0) = 1.0;
  AdamState<double> st;
  st.lr = 0.1;
  for (int i = 0; i < 50; ++i) {
    x.zero_grad();
    x.grad(0, 0) = 2 * x.value(0, 0);
    adam_step<double>({&x}, st);
  }
  EXPECT_LT(std::abs(x.value(0, 0)), 0.5);
  EXPECT_EQ(st.step, 50u);
}

TEST(Adam, NanGradientThrowsWithoutMutating) {
  Tensor2<float> p(2, 2);
  p.value.setConstant(1.0f);
  p.zero_grad();
  p.grad(1, 1) = std::nanf("");
  AdamState<float> st;
  EXPECT_THROW(adam_step<float>({&p}, st), Error);
  EXPECT_TRUE((p.value.array() == 1.0f).all());
  EXPECT_EQ(st.step, 0u);
}

TEST(Adam, ParametersStayFiniteAfterSteps) {
  Rng rng(11);
  Mlp<float> mlp = Mlp<float>::make({3, 16, 2}, Activation::kNone, rng);
  AdamState<float> st;
  for (int i = 0; i < 20; ++i) {
    typename Mlp<float>::Trace tr;
    const Mat<float> x = random_mat<float>(8, 3, rng);
    const Mat<float> y = mlp.forward(x, DropoutMode::kEval, 0, 0, &tr);
    zero_grads(mlp.parameters());
    mlp.backward(tr, y);
    adam_step(mlp.parameters(), st);
  }
  for (const auto& l : mlp.layers) EXPECT_TRUE(l.finite());
}

TEST(Tensor, GradientBufferMatchesValueShape) {
  Tensor2<float> t(4, 6);
  EXPECT_FALSE(t.has_grad());
  t.zero_grad();
  EXPECT_EQ(t.grad.rows(), 4);
  EXPECT_EQ(t.grad.cols(), 6);
}

}  // namespace

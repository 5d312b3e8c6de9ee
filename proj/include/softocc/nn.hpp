#pragma once

// Minimal differentiable compute: dense layers, relu, dropout, softmax,
// cross-entropy and L1 losses, and Adam. Everything is templated on the scalar
// type so gradient checks can run in double while training runs in float.
// Batches are row-major with one sample per row.

#include "softocc/common.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>

namespace softocc::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
}

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(std::string(what) + ": shape mismatch " + shape_str(a.rows(), a.cols()) + " vs " +
                shape_str(b.rows(), b.cols()));
}

// A value with an optional gradient buffer of the same shape.
template <typename T>
struct Tensor2 {
  Mat<T> value;
  Mat<T> grad;

  Tensor2() = default;
  Tensor2(Eigen::Index rows, Eigen::Index cols) : value(Mat<T>::Zero(rows, cols)) {}

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
  bool has_grad() const { return grad.size() > 0; }
  void zero_grad() { grad = Mat<T>::Zero(value.rows(), value.cols()); }
};

enum class Activation { kRelu, kNone };

enum class Init { kHeUniform, kXavierUniform };

template <typename T>
struct DenseLayer {
  Tensor2<T> weight;  // out x in
  Tensor2<T> bias;    // 1 x out
  Activation activation = Activation::kRelu;

  DenseLayer() = default;
  DenseLayer(int in, int out, Activation act) : weight(out, in), bias(1, out), activation(act) {}

  int in() const { return static_cast<int>(weight.cols()); }
  int out() const { return static_cast<int>(weight.rows()); }

  void init(Init scheme, Rng& rng) {
    const double fan_in = in(), fan_out = out();
    const double limit = scheme == Init::kHeUniform ? std::sqrt(6.0 / fan_in) : std::sqrt(6.0 / (fan_in + fan_out));
    for (Eigen::Index i = 0; i < weight.value.size(); ++i)
      weight.value.data()[i] = static_cast<T>(rng.uniform(-limit, limit));
    bias.value.setZero();
  }

  bool finite() const { return weight.value.allFinite() && bias.value.allFinite(); }
};

template <typename T>
Mat<T> relu(const Mat<T>& x) {
  return x.cwiseMax(T(0));
}

template <typename T>
Mat<T> dense_forward(const DenseLayer<T>& layer, const Mat<T>& x) {
  if (x.cols() != layer.in())
    throw Error("dense_forward: input " + shape_str(x.rows(), x.cols()) + " incompatible with weight " +
                shape_str(layer.weight.rows(), layer.weight.cols()));
  Mat<T> y = x * layer.weight.value.transpose();
  y.rowwise() += layer.bias.value.row(0);
  if (layer.activation == Activation::kRelu) y = relu(y);
  return y;
}

// Same result as dense_forward up to rounding, but every row goes through the
// same instruction sequence, so a row's output does not depend on its
// position in the batch.
template <typename T>
Mat<T> dense_forward_rowwise(const DenseLayer<T>& layer, const Mat<T>& x) {
  if (x.cols() != layer.in())
    throw Error("dense_forward: input " + shape_str(x.rows(), x.cols()) + " incompatible with weight " +
                shape_str(layer.weight.rows(), layer.weight.cols()));
  Mat<T> y(x.rows(), layer.out());
  y.noalias() = x.lazyProduct(layer.weight.value.transpose());
  y.rowwise() += layer.bias.value.row(0);
  if (layer.activation == Activation::kRelu) y = relu(y);
  return y;
}

// Accumulates parameter gradients given the forward input x, forward output y
// and upstream gradient dy; returns the gradient with respect to x.
template <typename T>
Mat<T> dense_backward(DenseLayer<T>& layer, const Mat<T>& x, const Mat<T>& y, Mat<T> dy) {
  require_same_shape(y, dy, "dense_backward");
  if (layer.activation == Activation::kRelu) dy = (y.array() > T(0)).select(dy, T(0));
  if (!layer.weight.has_grad()) layer.weight.zero_grad();
  if (!layer.bias.has_grad()) layer.bias.zero_grad();
  layer.weight.grad.noalias() += dy.transpose() * x;
  layer.bias.grad += dy.colwise().sum();
  return dy * layer.weight.value;
}

// -----------------------------------------------------------------------------
// Dropout
// -----------------------------------------------------------------------------

enum class DropoutMode { kTrain, kEval, kMc };

// Inverted-dropout keep mask: entry (r, c) is 1/(1-rate) with probability
// 1-rate and 0 otherwise, drawn from hash(seed, row_offset + r, c). Row offsets
// make masks independent of how a batch is chunked.
template <typename T>
Mat<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::uint64_t seed, std::uint64_t row_offset = 0) {
  Mat<T> m(rows, cols);
  const T keep = static_cast<T>(1.0 / (1.0 - rate));
  for (Eigen::Index r = 0; r < rows; ++r) {
    const std::uint64_t rs = hash_all(seed, row_offset + static_cast<std::uint64_t>(r));
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = to_unit(hash_combine(rs, static_cast<std::uint64_t>(c))) < rate ? T(0) : keep;
  }
  return m;
}

template <typename T>
Mat<T> dropout(const Mat<T>& x, double rate, DropoutMode mode, std::uint64_t seed, std::uint64_t row_offset = 0,
               Mat<T>* mask_out = nullptr) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error("dropout: rate must be in [0, 1)");
  if (mode == DropoutMode::kEval || rate == 0.0) {
    if (mask_out) *mask_out = Mat<T>();
    return x;
  }
  Mat<T> mask = dropout_mask<T>(x.rows(), x.cols(), rate, seed, row_offset);
  Mat<T> y = x.cwiseProduct(mask);
  if (mask_out) *mask_out = std::move(mask);
  return y;
}

// -----------------------------------------------------------------------------
// Layer stacks
// -----------------------------------------------------------------------------

// Dense layers with optional dropout after every hidden (non-final) layer.
template <typename T>
struct Mlp {
  std::vector<DenseLayer<T>> layers;
  double dropout_rate = 0.0;

  struct Trace {
    std::vector<Mat<T>> inputs;   // input to layer i
    std::vector<Mat<T>> outputs;  // activation output of layer i (pre-dropout)
    std::vector<Mat<T>> masks;    // dropout mask after layer i (empty if none)
  };

  // widths = {in, h1, ..., out}; relu on hidden layers, `last` on the final one.
  static Mlp make(const std::vector<int>& widths, Activation last, Rng& rng, double dropout = 0.0) {
    Mlp m;
    m.dropout_rate = dropout;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      const bool final = i + 2 == widths.size();
      m.layers.emplace_back(widths[i], widths[i + 1], final ? last : Activation::kRelu);
      m.layers.back().init(final && last == Activation::kNone ? Init::kXavierUniform : Init::kHeUniform, rng);
    }
    return m;
  }

  int in() const { return layers.front().in(); }
  int out() const { return layers.back().out(); }

  Mat<T> forward(const Mat<T>& x, DropoutMode mode = DropoutMode::kEval, std::uint64_t seed = 0,
                 std::uint64_t row_offset = 0, Trace* trace = nullptr) const {
    Mat<T> h = x;
    if (trace) *trace = Trace{};
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (trace) trace->inputs.push_back(h);
      h = dense_forward(layers[i], h);
      if (trace) trace->outputs.push_back(h);
      Mat<T> mask;
      if (i + 1 < layers.size() && dropout_rate > 0.0)
        h = dropout(h, dropout_rate, mode, hash_all(seed, i), row_offset, trace ? &mask : nullptr);
      if (trace) trace->masks.push_back(std::move(mask));
    }
    return h;
  }

  // Eval-mode forward pass with position-independent rows.
  Mat<T> forward_rowwise(const Mat<T>& x) const {
    Mat<T> h = x;
    for (const auto& layer : layers) h = dense_forward_rowwise(layer, h);
    return h;
  }

  Mat<T> backward(const Trace& trace, Mat<T> dy) {
    for (std::size_t i = layers.size(); i-- > 0;) {
      if (trace.masks[i].size() > 0) dy = dy.cwiseProduct(trace.masks[i]);
      dy = dense_backward(layers[i], trace.inputs[i], trace.outputs[i], std::move(dy));
    }
    return dy;
  }

  std::vector<Tensor2<T>*> parameters() {
    std::vector<Tensor2<T>*> ps;
    for (auto& l : layers) {
      ps.push_back(&l.weight);
      ps.push_back(&l.bias);
    }
    return ps;
  }
};

// -----------------------------------------------------------------------------
// Softmax and losses
// -----------------------------------------------------------------------------

template <typename T>
Mat<T> softmax(const Mat<T>& logits) {
  Mat<T> p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const T mx = logits.row(r).maxCoeff();
    double sum = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) sum += std::exp(static_cast<double>(logits(r, c) - mx));
    const double lse = std::log(sum);
    for (Eigen::Index c = 0; c < logits.cols(); ++c)
      p(r, c) = static_cast<T>(std::exp(static_cast<double>(logits(r, c) - mx) - lse));
  }
  return p;
}

template <typename T>
struct LossResult {
  double loss = 0.0;
  Mat<T> grad;  // d loss / d input
};

// Mean over rows of -log softmax(logits)[label].
template <typename T>
LossResult<T> cross_entropy(const Mat<T>& logits, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows())
    throw Error("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(logits.rows()) + " rows");
  LossResult<T> out;
  const Eigen::Index n = logits.rows();
  if (n == 0) {
    out.grad = Mat<T>(0, logits.cols());
    return out;
  }
  out.grad = softmax(logits);
  double total = 0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const int y = labels[r];
    if (y < 0 || y >= logits.cols()) throw Error("cross_entropy: label " + std::to_string(y) + " out of range");
    // log-sum-exp in double keeps large logits exact.
    const double mx = static_cast<double>(logits.row(r).maxCoeff());
    double sum = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) sum += std::exp(static_cast<double>(logits(r, c)) - mx);
    total += mx + std::log(sum) - static_cast<double>(logits(r, y));
    out.grad(r, y) -= T(1);
  }
  out.loss = total / static_cast<double>(n);
  out.grad /= static_cast<T>(n);
  return out;
}

// Mean absolute error; the subgradient at an exact tie is 0.
template <typename T>
LossResult<T> l1_loss(const Mat<T>& predicted, const Mat<T>& target) {
  require_same_shape(predicted, target, "l1_loss");
  LossResult<T> out;
  const Eigen::Index n = predicted.size();
  out.grad = Mat<T>::Zero(predicted.rows(), predicted.cols());
  if (n == 0) return out;
  double total = 0;
  const T inv = static_cast<T>(1.0 / static_cast<double>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = static_cast<double>(predicted.data()[i]) - static_cast<double>(target.data()[i]);
    total += std::abs(d);
    out.grad.data()[i] = d > 0 ? inv : d < 0 ? -inv : T(0);
  }
  out.loss = total / static_cast<double>(n);
  return out;
}

// -----------------------------------------------------------------------------
// Adam
// -----------------------------------------------------------------------------

template <typename T>
struct AdamState {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Mat<T>> m, v;
};

// Bias-corrected Adam. Throws (and leaves parameters untouched) if any
// gradient is non-finite.
template <typename T>
void adam_step(const std::vector<Tensor2<T>*>& params, AdamState<T>& state) {
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.push_back(Mat<T>::Zero(p->rows(), p->cols()));
      state.v.push_back(Mat<T>::Zero(p->rows(), p->cols()));
    }
  }
  if (state.m.size() != params.size()) throw Error("adam_step: state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->has_grad()) params[i]->zero_grad();
    require_same_shape(params[i]->grad, state.m[i], "adam_step");
    if (!params[i]->grad.allFinite()) throw Error("adam_step: non-finite gradient in parameter " + std::to_string(i));
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  const T step_size = static_cast<T>(state.lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(state.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& g = params[i]->grad;
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g.cwiseProduct(g);
    params[i]->value.array() -=
        step_size * state.m[i].array() / ((state.v[i].array().sqrt() * inv_sqrt_bc2) + eps);
  }
}

template <typename T>
void zero_grads(const std::vector<Tensor2<T>*>& params) {
  for (auto* p : params) p->zero_grad();
}

}  // namespace softocc::nn

#pragma once

// Dense feed-forward classifiers with perturbation hooks, classification
// losses and optimizers.
//
// Samples are stored column-wise: a batch of n inputs of dimension d is a
// d x n matrix. Every layer but the last applies the hidden activation; the
// last layer emits raw logits.

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mkelab/error.hpp"
#include "mkelab/transform.hpp"

namespace mkelab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

enum class Activation { tanh, relu };

inline std::string activation_name(Activation a) {
  return a == Activation::tanh ? "tanh" : "relu";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw Error(Errc::config, "unknown activation '" + s + "'");
}

enum class Mode { train, eval };

namespace detail {
inline std::uint64_t next_model_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

/// Per-layer weight and bias arrays shaped like an MLP's parameters.
struct Gradients {
  std::vector<Mat> weights;
  std::vector<Vec> biases;

  Gradients& operator+=(const Gradients& o) {
    if (o.weights.size() != weights.size())
      throw Error(Errc::shape, "gradient layer count mismatch");
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l] += o.weights[l];
      biases[l] += o.biases[l];
    }
    return *this;
  }

  Gradients& operator*=(double s) {
    for (auto& w : weights) w *= s;
    for (auto& b : biases) b *= s;
    return *this;
  }

  bool all_finite() const {
    for (const auto& w : weights)
      if (!w.allFinite()) return false;
    for (const auto& b : biases)
      if (!b.allFinite()) return false;
    return true;
  }

  double max_abs() const {
    double m = 0.0;
    for (const auto& w : weights)
      if (w.size()) m = std::max(m, w.cwiseAbs().maxCoeff());
    for (const auto& b : biases)
      if (b.size()) m = std::max(m, b.cwiseAbs().maxCoeff());
    return m;
  }
};

class MLP {
 public:
  /// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)) and zero biases,
  /// drawn from a stream seeded with `seed`.
  MLP(std::vector<int> layer_sizes, Activation activation, std::uint64_t seed)
      : sizes_(std::move(layer_sizes)), activation_(activation), seed_(seed) {
    if (sizes_.size() < 2)
      throw Error(Errc::invalid_architecture, "need at least an input and an output layer");
    for (int s : sizes_)
      if (s < 1) throw Error(Errc::invalid_architecture, "layer sizes must be >= 1");
    if (sizes_.back() < 2)
      throw Error(Errc::invalid_architecture, "need at least two output classes");
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      const int in = sizes_[l];
      const int out = sizes_[l + 1];
      const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
      std::uniform_real_distribution<double> u(-limit, limit);
      Mat w(out, in);
      for (int r = 0; r < out; ++r)
        for (int c = 0; c < in; ++c) w(r, c) = u(rng);
      weights_.push_back(std::move(w));
      biases_.push_back(Vec::Zero(out));
    }
  }

  const std::vector<int>& layer_sizes() const { return sizes_; }
  Activation activation() const { return activation_; }
  std::uint64_t seed() const { return seed_; }
  int input_dim() const { return sizes_.front(); }
  int num_classes() const { return sizes_.back(); }
  int num_layers() const { return static_cast<int>(weights_.size()); }
  int hidden_layers() const { return num_layers() - 1; }

  const Mat& weight(int l) const { return weights_.at(l); }
  const Vec& bias(int l) const { return biases_.at(l); }

  /// Mutable parameter access. Any mutation invalidates existing tapes.
  Mat& weight_mut(int l) {
    touch();
    return weights_.at(l);
  }
  Vec& bias_mut(int l) {
    touch();
    return biases_.at(l);
  }

  void set_zero() {
    for (auto& w : weights_) w.setZero();
    for (auto& b : biases_) b.setZero();
    touch();
  }

  bool all_finite() const {
    for (const auto& w : weights_)
      if (!w.allFinite()) return false;
    for (const auto& b : biases_)
      if (!b.allFinite()) return false;
    return true;
  }

  Gradients zero_gradients() const {
    Gradients g;
    for (int l = 0; l < num_layers(); ++l) {
      g.weights.push_back(Mat::Zero(weights_[l].rows(), weights_[l].cols()));
      g.biases.push_back(Vec::Zero(biases_[l].size()));
    }
    return g;
  }

  std::uint64_t id() const { return id_; }
  std::uint64_t version() const { return version_; }

  void touch() { ++version_; }

  friend bool operator==(const MLP& a, const MLP& b) {
    if (a.sizes_ != b.sizes_ || a.activation_ != b.activation_) return false;
    for (int l = 0; l < a.num_layers(); ++l)
      if (a.weights_[l] != b.weights_[l] || a.biases_[l] != b.biases_[l]) return false;
    return true;
  }

 private:
  std::vector<int> sizes_;
  Activation activation_;
  std::uint64_t seed_;
  std::vector<Mat> weights_;
  std::vector<Vec> biases_;
  std::uint64_t id_ = detail::next_model_id();
  std::uint64_t version_ = 0;
};

/// Cached activations of one forward pass, including the noise and
/// dropout multipliers that were applied.
struct Tape {
  std::uint64_t model_id = 0;
  std::uint64_t model_version = 0;
  std::vector<int> layer_sizes;
  /// inputs[l] is the (possibly perturbed) input to layer l.
  std::vector<Mat> inputs;
  /// activated[l] is act(W_l inputs[l] + b_l) before perturbation, hidden
  /// layers only.
  std::vector<Mat> activated;
  /// Dropout multipliers per hidden layer; empty matrix when unused.
  std::vector<Mat> masks;
  Mat logits;

  Eigen::Index batch() const { return logits.cols(); }
};

struct ForwardResult {
  Mat logits;
  Tape tape;
};

namespace detail {

inline void fill_normal(Mat& m, double variance, Rng& rng) {
  std::normal_distribution<double> n(0.0, std::sqrt(variance));
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = n(rng);
}

inline void fill_dropout(Mat& m, double rate, Rng& rng) {
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = keep(rng) ? scale : 0.0;
}

}  // namespace detail

/// Batched forward pass over the columns of `x`. Perturbations are drawn
/// from `rng` and recorded on the returned tape; they require train mode.
inline ForwardResult forward(const MLP& mlp, const Mat& x, Mode mode,
                             const Transform& perturbation, Rng& rng) {
  if (x.rows() != mlp.input_dim())
    throw Error(Errc::shape, "input dimension " + std::to_string(x.rows()) + " != " +
                                 std::to_string(mlp.input_dim()));
  if (mode == Mode::eval && !perturbation.is_none())
    throw Error(Errc::invalid_transform, "perturbations are only allowed in train mode");
  perturbation.validate(mlp.hidden_layers());

  const int L = mlp.num_layers();
  const Eigen::Index n = x.cols();
  ForwardResult out;
  Tape& tape = out.tape;
  tape.model_id = mlp.id();
  tape.model_version = mlp.version();
  tape.layer_sizes = mlp.layer_sizes();
  tape.inputs.reserve(L);
  tape.activated.resize(L - 1);
  tape.masks.resize(L - 1);

  Mat a = x;
  for (const auto& p : perturbation.parts()) {
    if (const auto* g = std::get_if<InputGaussian>(&p); g && g->variance > 0.0) {
      Mat noise(a.rows(), n);
      detail::fill_normal(noise, g->variance, rng);
      a += noise;
    }
  }

  for (int l = 0; l < L; ++l) {
    tape.inputs.push_back(a);
    Mat z = mlp.weight(l) * a;
    z.colwise() += mlp.bias(l);
    if (l == L - 1) {
      tape.logits = std::move(z);
      break;
    }
    Mat h = mlp.activation() == Activation::tanh
                ? Mat(1.0 - 2.0 / ((2.0 * z.array()).exp() + 1.0))
                : Mat(z.array().max(0.0));
    tape.activated[l] = h;
    for (const auto& p : perturbation.parts()) {
      if (const auto* d = std::get_if<Dropout>(&p);
          d && d->rate > 0.0 && (d->layer == -1 || d->layer == l)) {
        Mat mask(h.rows(), n);
        detail::fill_dropout(mask, d->rate, rng);
        h.array() *= mask.array();
        tape.masks[l] = std::move(mask);
      }
    }
    for (const auto& p : perturbation.parts()) {
      if (const auto* g = std::get_if<HiddenGaussian>(&p);
          g && g->layer == l && g->variance > 0.0) {
        Mat noise(h.rows(), n);
        detail::fill_normal(noise, g->variance, rng);
        h += noise;
      }
    }
    a = std::move(h);
  }
  out.logits = tape.logits;
  return out;
}

/// Unperturbed forward pass.
inline ForwardResult forward(const MLP& mlp, const Mat& x) {
  Rng unused(0);
  return forward(mlp, x, Mode::eval, Transform::none(), unused);
}

/// Single-sample forward; `x` is one input vector.
inline ForwardResult forward(const MLP& mlp, const Vec& x, Mode mode,
                             const Transform& perturbation, Rng& rng) {
  return forward(mlp, Mat(x), mode, perturbation, rng);
}

inline Mat predict_logits(const MLP& mlp, const Mat& x) { return forward(mlp, x).logits; }

/// Reverse-mode gradient of a scalar loss whose gradient with respect to
/// the logits is `upstream` (K x n, matching the tape's batch). Gradients
/// are summed over the batch.
inline Gradients backward(const MLP& mlp, const Tape& tape, const Mat& upstream) {
  if (tape.model_id != mlp.id() || tape.model_version != mlp.version() ||
      tape.layer_sizes != mlp.layer_sizes())
    throw Error(Errc::tape, "tape was not produced by the current state of this network");
  if (upstream.rows() != mlp.num_classes() || upstream.cols() != tape.batch())
    throw Error(Errc::shape, "upstream gradient shape does not match tape");

  const int L = mlp.num_layers();
  Gradients g = mlp.zero_gradients();
  Mat delta = upstream;
  for (int l = L - 1; l >= 0; --l) {
    g.weights[l].noalias() = delta * tape.inputs[l].transpose();
    g.biases[l] = delta.rowwise().sum();
    if (l == 0) break;
    Mat back = mlp.weight(l).transpose() * delta;
    const int h = l - 1;
    if (tape.masks[h].size()) back.array() *= tape.masks[h].array();
    const Mat& act = tape.activated[h];
    if (mlp.activation() == Activation::tanh)
      back.array() *= 1.0 - act.array().square();
    else
      back.array() *= (act.array() > 0.0).cast<double>();
    delta = std::move(back);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Probabilities and losses

/// A validated probability vector: entries in [0,1] summing to 1 (1e-9).
class ProbVector {
 public:
  explicit ProbVector(Vec values) : v_(std::move(values)) {
    if (v_.size() < 1) throw Error(Errc::numeric, "empty probability vector");
    double sum = 0.0;
    for (Eigen::Index k = 0; k < v_.size(); ++k) {
      if (!std::isfinite(v_[k]) || v_[k] < 0.0 || v_[k] > 1.0)
        throw Error(Errc::numeric, "probability entries must lie in [0,1]");
      sum += v_[k];
    }
    if (std::abs(sum - 1.0) > 1e-9) throw Error(Errc::numeric, "probabilities must sum to 1");
  }

  static ProbVector one_hot(int k, int num_classes) {
    if (k < 0 || k >= num_classes) throw Error(Errc::shape, "class index out of range");
    Vec v = Vec::Zero(num_classes);
    v[k] = 1.0;
    return ProbVector(std::move(v));
  }

  const Vec& values() const { return v_; }
  Eigen::Index size() const { return v_.size(); }
  double operator[](Eigen::Index k) const { return v_[k]; }

  /// Index of the largest entry; ties go to the lowest index.
  int argmax() const {
    int best = 0;
    for (Eigen::Index k = 1; k < v_.size(); ++k)
      if (v_[k] > v_[best]) best = static_cast<int>(k);
    return best;
  }

 private:
  Vec v_;
};

namespace detail {
inline void require_finite(const Vec& p) {
  if (!p.allFinite()) throw Error(Errc::numeric, "non-finite logits");
}
inline double log_sum_exp(const Vec& p) {
  const double m = p.maxCoeff();
  return m + std::log((p.array() - m).exp().sum());
}
}  // namespace detail

/// Max-shifted softmax.
inline ProbVector softmax(const Vec& logits) {
  detail::require_finite(logits);
  Vec e = (logits.array() - logits.maxCoeff()).exp();
  e /= e.sum();
  return ProbVector(std::move(e));
}

/// Column-wise softmax of a K x n logit matrix.
inline Mat softmax_columns(const Mat& logits) {
  if (!logits.allFinite()) throw Error(Errc::numeric, "non-finite logits");
  Mat e = (logits.rowwise() - logits.colwise().maxCoeff()).array().exp().matrix();
  e.array().rowwise() /= e.colwise().sum().array();
  return e;
}

/// Column-wise log-sum-exp of a K x n logit matrix.
inline Eigen::RowVectorXd log_sum_exp_columns(const Mat& logits) {
  const Eigen::RowVectorXd m = logits.colwise().maxCoeff();
  return m.array() + (logits.rowwise() - m).array().exp().colwise().sum().log();
}

/// l_cls(y, p) = -sum y_k log softmax(p)_k + sum y_k log y_k: cross-entropy
/// for one-hot targets, KL(y || softmax(p)) for soft ones. 0 log 0 := 0 and
/// targets are clipped to >= 1e-12 inside the log.
inline double cls_loss(const ProbVector& target, const Vec& logits) {
  if (target.size() != logits.size()) throw Error(Errc::shape, "target/logit length mismatch");
  detail::require_finite(logits);
  const double lse = detail::log_sum_exp(logits);
  double loss = 0.0;
  for (Eigen::Index k = 0; k < logits.size(); ++k) {
    const double y = target[k];
    if (y == 0.0) continue;
    loss += y * (std::log(std::max(y, 1e-12)) - (logits[k] - lse));
  }
  return std::max(loss, 0.0);
}

/// d l_cls / d logits = softmax(p) - y.
inline Vec cls_loss_grad(const ProbVector& target, const Vec& logits) {
  if (target.size() != logits.size()) throw Error(Errc::shape, "target/logit length mismatch");
  return softmax(logits).values() - target.values();
}

inline double l2_distance(const Vec& p, const Vec& q) {
  if (p.size() != q.size()) throw Error(Errc::shape, "l2_distance length mismatch");
  return (p - q).norm();
}

// ---------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptState {
  std::int64_t step = 0;
  std::optional<Gradients> first_moment;
  std::optional<Gradients> second_moment;
};

/// One in-place update of `mlp` from `grads`. Throws numeric on non-finite
/// gradients, leaving the network untouched, or when the step itself
/// overflows.
inline void optimizer_step(MLP& mlp, const Gradients& grads, OptState& state,
                           const OptimizerConfig& hyper) {
  if (static_cast<int>(grads.weights.size()) != mlp.num_layers() ||
      grads.biases.size() != grads.weights.size())
    throw Error(Errc::shape, "gradient layer count mismatch");
  for (int l = 0; l < mlp.num_layers(); ++l) {
    if (grads.weights[l].rows() != mlp.weight(l).rows() ||
        grads.weights[l].cols() != mlp.weight(l).cols() ||
        grads.biases[l].size() != mlp.bias(l).size())
      throw Error(Errc::shape, "gradient shape mismatch at layer " + std::to_string(l));
  }
  if (!grads.all_finite()) throw Error(Errc::numeric, "non-finite gradients");

  ++state.step;
  const double lr = hyper.learning_rate;
  if (hyper.kind == OptimizerKind::sgd) {
    for (int l = 0; l < mlp.num_layers(); ++l) {
      mlp.weight_mut(l) -= lr * grads.weights[l];
      mlp.bias_mut(l) -= lr * grads.biases[l];
    }
    if (!mlp.all_finite()) throw Error(Errc::numeric, "parameters overflowed");
    return;
  }

  if (!state.first_moment) {
    state.first_moment = mlp.zero_gradients();
    state.second_moment = mlp.zero_gradients();
  }
  Gradients& m = *state.first_moment;
  Gradients& v = *state.second_moment;
  const double b1 = hyper.beta1;
  const double b2 = hyper.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  auto update = [&](auto& param, auto& mom1, auto& mom2, const auto& g) {
    mom1 = b1 * mom1 + (1.0 - b1) * g;
    mom2 = b2 * mom2 + (1.0 - b2) * g.cwiseProduct(g);
    param.array() -= lr * (mom1.array() / c1) / ((mom2.array() / c2).sqrt() + hyper.epsilon);
  };
  for (int l = 0; l < mlp.num_layers(); ++l) {
    update(mlp.weight_mut(l), m.weights[l], v.weights[l], grads.weights[l]);
    update(mlp.bias_mut(l), m.biases[l], v.biases[l], grads.biases[l]);
  }
  if (!mlp.all_finite()) throw Error(Errc::numeric, "parameters overflowed");
}

}  // namespace mkelab

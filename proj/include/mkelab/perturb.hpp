#pragma once

// Consistency regularization: the distance between a network's clean
// output and its output under a perturbation T.

#include "mkelab/netcore.hpp"
#include "mkelab/transform.hpp"

namespace mkelab {

inline ForwardResult perturbed_forward(const MLP& mlp, const Mat& x, const Transform& t,
                                       Rng& rng) {
  return forward(mlp, x, Mode::train, t, rng);
}

inline ForwardResult perturbed_forward(const MLP& mlp, const Vec& x, const Transform& t,
                                       Rng& rng) {
  return forward(mlp, Mat(x), Mode::train, t, rng);
}

struct RegLoss {
  /// Per-sample l2 distances between clean and perturbed softmax outputs.
  Vec per_sample;
  /// Clean and perturbed probabilities (K x n), kept for recomputation.
  Mat clean_probs;
  Mat perturbed_probs;
  ForwardResult clean;
  ForwardResult perturbed;

  double sum() const { return per_sample.sum(); }
  double mean() const { return per_sample.size() ? per_sample.mean() : 0.0; }
};

/// Evaluates || softmax(f(x)) - softmax(f(T x)) ||_2 for every column of
/// `x`, with one perturbation draw per sample.
inline RegLoss reg_loss(const MLP& mlp, const Mat& x, const Transform& t, Rng& rng) {
  RegLoss r;
  r.clean = forward(mlp, x, Mode::train, Transform::none(), rng);
  r.perturbed = forward(mlp, x, Mode::train, t, rng);
  r.clean_probs = softmax_columns(r.clean.logits);
  r.perturbed_probs = softmax_columns(r.perturbed.logits);
  r.per_sample = (r.clean_probs - r.perturbed_probs).colwise().norm().transpose();
  return r;
}

namespace detail {
/// Pulls a gradient on softmax outputs back to the logits, column-wise.
inline Mat softmax_vjp(const Mat& probs, const Mat& grad_probs) {
  Mat out(probs.rows(), probs.cols());
  for (Eigen::Index c = 0; c < probs.cols(); ++c) {
    const double dot = probs.col(c).dot(grad_probs.col(c));
    out.col(c) = probs.col(c).array() * (grad_probs.col(c).array() - dot);
  }
  return out;
}
}  // namespace detail

/// Gradient of sum_i weight_i * reg_i with respect to the parameters,
/// through both the clean and the perturbed branch. At a zero distance the
/// subgradient 0 is used.
inline Gradients reg_loss_backward(const MLP& mlp, const RegLoss& r, const Vec& weights) {
  if (weights.size() != r.per_sample.size())
    throw Error(Errc::shape, "reg weight count mismatch");
  Mat diff = r.clean_probs - r.perturbed_probs;
  for (Eigen::Index c = 0; c < diff.cols(); ++c) {
    const double d = r.per_sample[c];
    diff.col(c) *= d > 0.0 ? weights[c] / d : 0.0;
  }
  Gradients g = backward(mlp, r.clean.tape, detail::softmax_vjp(r.clean_probs, diff));
  g += backward(mlp, r.perturbed.tape, detail::softmax_vjp(r.perturbed_probs, -diff));
  return g;
}

/// Single-sample form: value and parameter gradient.
inline std::pair<double, Gradients> reg_loss(const MLP& mlp, const Vec& x, const Transform& t,
                                             Rng& rng) {
  RegLoss r = reg_loss(mlp, Mat(x), t, rng);
  return {r.per_sample[0], reg_loss_backward(mlp, r, Vec::Ones(1))};
}

}  // namespace mkelab

#pragma once

// Shared test helpers: random probability inputs and the finite-difference
// gradient oracle.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "mkelab/netcore.hpp"
#include "mkelab/perturb.hpp"

namespace mkelab::test {

inline Vec random_logits(int k, Rng& rng) {
  std::normal_distribution<double> n(0.0, 4.0);
  Vec p(k);
  for (int i = 0; i < k; ++i) p[i] = n(rng);
  return p;
}

/// Random point of the simplex, sometimes sparse.
inline ProbVector random_prob(int k, Rng& rng) {
  std::exponential_distribution<double> e(1.0);
  std::bernoulli_distribution sparse(0.3);
  Vec v(k);
  for (int i = 0; i < k; ++i) v[i] = sparse(rng) ? 0.0 : e(rng);
  if (v.sum() == 0.0) v[0] = 1.0;
  return ProbVector(v / v.sum());
}

/// Worst relative error between `backward` and central differences
/// (h = 1e-5) over every parameter of a random network, for the loss
/// sum_c cls_loss(y_c, f(T x_c)). The perturbation is replayed from a fixed
/// seed, so masks and noise are frozen across the evaluations. Relative
/// error is |a - n| / max(|a|, |n|, 1e-6).
inline double max_fd_relative_error(const std::vector<int>& sizes, Activation act,
                                    const Transform& t, std::uint64_t seed, int batch = 3) {
  MLP m(sizes, act, seed);
  Rng data_rng(seed + 1);
  std::normal_distribution<double> n(0.0, 1.0);
  Mat x(sizes.front(), batch);
  for (Eigen::Index c = 0; c < x.cols(); ++c)
    for (Eigen::Index r = 0; r < x.rows(); ++r) x(r, c) = n(data_rng);
  std::vector<ProbVector> y;
  for (int c = 0; c < batch; ++c) y.push_back(random_prob(sizes.back(), data_rng));
  // nonzero biases so every parameter matters
  for (int l = 0; l < m.num_layers(); ++l)
    for (Eigen::Index i = 0; i < m.bias(l).size(); ++i) m.bias_mut(l)[i] = 0.1 * n(data_rng);

  const std::uint64_t noise_seed = seed + 2;
  auto loss = [&](const MLP& net) {
    Rng rng(noise_seed);
    const auto f = forward(net, x, Mode::train, t, rng);
    double total = 0.0;
    for (int c = 0; c < batch; ++c) total += cls_loss(y[c], f.logits.col(c));
    return total;
  };
  Rng rng(noise_seed);
  const auto f = forward(m, x, Mode::train, t, rng);
  Mat up(sizes.back(), batch);
  for (int c = 0; c < batch; ++c) up.col(c) = cls_loss_grad(y[c], f.logits.col(c));
  const Gradients g = backward(m, f.tape, up);

  const double h = 1e-5;
  double worst = 0.0;
  auto check = [&](double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  };
  for (int l = 0; l < m.num_layers(); ++l) {
    for (Eigen::Index r = 0; r < m.weight(l).rows(); ++r)
      for (Eigen::Index c = 0; c < m.weight(l).cols(); ++c) {
        MLP a = m, b = m;
        a.weight_mut(l)(r, c) += h;
        b.weight_mut(l)(r, c) -= h;
        check(g.weights[l](r, c), (loss(a) - loss(b)) / (2 * h));
      }
    for (Eigen::Index r = 0; r < m.bias(l).size(); ++r) {
      MLP a = m, b = m;
      a.bias_mut(l)[r] += h;
      b.bias_mut(l)[r] -= h;
      check(g.biases[l][r], (loss(a) - loss(b)) / (2 * h));
    }
  }
  return worst;
}

}  // namespace mkelab::test

#pragma once

// Empirical (a, c)-expansion on finite point sets.
//
// Each class i carries the uniform measure P_i over its points. The
// neighborhood of a subset V is the closed ball union
//   N(V) = { x : dist(x, v) <= r for some v in V },
// so that P_i(N(V)) / P_i(V) = |N(V) ∩ class i| / |V| for V inside class i.
// Product sets use the max-over-blocks metric, under which
// N(A x B) = N(A) x N(B).

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mkelab/error.hpp"
#include "mkelab/mke.hpp"
#include "mkelab/netcore.hpp"
#include "mkelab/synthdata.hpp"

namespace mkelab {

using Subset = std::vector<int>;

class FinitePointSet {
 public:
  /// `blocks` lists the coordinate count of each factor of a product space;
  /// empty means one Euclidean block. The distance is the max over blocks of
  /// the per-block Euclidean distance.
  FinitePointSet(std::vector<Vec> points, std::vector<int> labels, double radius,
                 std::vector<int> blocks = {})
      : points_(std::move(points)),
        labels_(std::move(labels)),
        radius_(radius),
        blocks_(std::move(blocks)) {
    if (!(radius_ > 0.0)) throw Error(Errc::invalid_size, "radius must be > 0");
    if (points_.size() != labels_.size())
      throw Error(Errc::invalid_size, "point/label count mismatch");
    if (points_.empty()) throw Error(Errc::invalid_size, "empty point set");
    const Eigen::Index dim = points_.front().size();
    for (const auto& p : points_)
      if (p.size() != dim) throw Error(Errc::shape, "points must share one dimension");
    if (blocks_.empty()) blocks_.push_back(static_cast<int>(dim));
    if (std::accumulate(blocks_.begin(), blocks_.end(), 0) != dim)
      throw Error(Errc::shape, "block sizes must sum to the point dimension");
    int k = 0;
    for (int y : labels_) {
      if (y < 0) throw Error(Errc::invalid_size, "labels must be >= 0");
      k = std::max(k, y + 1);
    }
    by_class_.assign(k, {});
    for (std::size_t i = 0; i < labels_.size(); ++i)
      by_class_[labels_[i]].push_back(static_cast<int>(i));
    for (int c = 0; c < k; ++c)
      if (by_class_[c].empty())
        throw Error(Errc::invalid_size, fmt::format("class {} has no points", c));
  }

  int size() const { return static_cast<int>(points_.size()); }
  int num_classes() const { return static_cast<int>(by_class_.size()); }
  double radius() const { return radius_; }
  const std::vector<Vec>& points() const { return points_; }
  const std::vector<int>& labels() const { return labels_; }
  const std::vector<int>& blocks() const { return blocks_; }
  const Subset& class_indices(int c) const { return by_class_.at(c); }
  int class_size(int c) const { return static_cast<int>(by_class_.at(c).size()); }

  double distance(int a, int b) const {
    const Vec& p = points_[a];
    const Vec& q = points_[b];
    double d = 0.0;
    Eigen::Index start = 0;
    for (int len : blocks_) {
      d = std::max(d, (p.segment(start, len) - q.segment(start, len)).norm());
      start += len;
    }
    return d;
  }

  bool adjacent(int a, int b) const { return distance(a, b) <= radius_; }

 private:
  std::vector<Vec> points_;
  std::vector<int> labels_;
  double radius_;
  std::vector<int> blocks_;
  std::vector<Subset> by_class_;
};

/// N(V) over the whole set, sorted ascending; contains V.
inline Subset neighborhood(const Subset& v, const FinitePointSet& ps) {
  if (v.empty()) throw Error(Errc::invalid_subset, "empty subset");
  for (int i : v)
    if (i < 0 || i >= ps.size()) throw Error(Errc::invalid_subset, "index out of range");
  Subset out;
  for (int x = 0; x < ps.size(); ++x)
    for (int i : v)
      if (ps.adjacent(x, i)) {
        out.push_back(x);
        break;
      }
  return out;
}

inline double class_measure(const Subset& v, const FinitePointSet& ps, int cls) {
  long count = 0;
  for (int i : v)
    if (ps.labels()[i] == cls) ++count;
  return static_cast<double>(count) / ps.class_size(cls);
}

namespace detail {

/// Adjacency of every point, restricted to the members of one class, as
/// bitsets over the class-local index.
class ClassAdjacency {
 public:
  ClassAdjacency(const FinitePointSet& ps, int cls) : members_(ps.class_indices(cls)) {
    words_ = (members_.size() + 63) / 64;
    rows_.assign(members_.size() * words_, 0);
    for (std::size_t a = 0; a < members_.size(); ++a)
      for (std::size_t b = 0; b < members_.size(); ++b)
        if (ps.adjacent(members_[a], members_[b])) rows_[a * words_ + b / 64] |= 1ULL << (b % 64);
  }

  std::size_t size() const { return members_.size(); }
  const Subset& members() const { return members_; }

  /// |N(V) ∩ class| for V given as class-local indices.
  long neighborhood_count(const std::vector<int>& local) const {
    scratch_.assign(words_, 0);
    for (int a : local)
      for (std::size_t w = 0; w < words_; ++w) scratch_[w] |= rows_[a * words_ + w];
    long c = 0;
    for (auto w : scratch_) c += std::popcount(w);
    return c;
  }

  /// Single-word fast path for classes of at most 64 points.
  std::uint64_t row_mask(int a) const { return rows_[a * words_]; }

 private:
  Subset members_;
  std::size_t words_ = 0;
  std::vector<std::uint64_t> rows_;
  mutable std::vector<std::uint64_t> scratch_;
};

inline int max_subset_size(double a_bar, int class_size) {
  return static_cast<int>(std::floor(a_bar * class_size + 1e-9));
}

/// Uniformly random subset of {0..n-1} with size uniform in [1, kmax].
inline std::vector<int> random_subset(int n, int kmax, Rng& rng) {
  std::uniform_int_distribution<int> size_dist(1, kmax);
  const int k = size_dist(rng);
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

struct EnumerationBudget {
  /// Classes up to this size are enumerated exhaustively (at most 30).
  int max_exhaustive = 15;
  /// Random subsets drawn when a class is too large to enumerate.
  long samples = 2000;
  std::uint64_t seed = 0;
  /// Extra candidate subsets (global indices), e.g. misclassified sets;
  /// each is restricted to the class before use.
  std::vector<Subset> extra;
};

struct ExpansionEstimate {
  double a_bar = 0.0;
  /// min over checked V of P_i(N(V)) / P_i(V); +inf when no V qualifies.
  double c_hat = std::numeric_limits<double>::infinity();
  long subsets_checked = 0;
  bool exhaustive = false;
  /// Global indices of the argmin subset.
  Subset witness;
};

/// Expansion factor of class `cls` over subsets V of that class with
/// P_i(V) <= a_bar. Exact under exhaustive enumeration; under sampling the
/// result is an upper estimate of the true factor.
inline ExpansionEstimate estimate_expansion(const FinitePointSet& ps, int cls, double a_bar,
                                            const EnumerationBudget& budget = {}) {
  if (!(a_bar > 0.0 && a_bar <= 1.0)) throw Error(Errc::estimation, "a_bar must lie in (0,1]");
  if (cls < 0 || cls >= ps.num_classes()) throw Error(Errc::estimation, "class out of range");
  const int n = ps.class_size(cls);
  const int kmax = detail::max_subset_size(a_bar, n);
  ExpansionEstimate est;
  est.a_bar = a_bar;
  // no subset is small enough: the (vacuous) answer is exact
  est.exhaustive = kmax == 0;
  if (kmax == 0) return est;

  const detail::ClassAdjacency adj(ps, cls);
  const Subset& members = adj.members();
  auto consider = [&](const std::vector<int>& local, long nbr) {
    ++est.subsets_checked;
    const double ratio = static_cast<double>(nbr) / static_cast<double>(local.size());
    if (ratio < est.c_hat) {
      est.c_hat = ratio;
      est.witness.clear();
      for (int a : local) est.witness.push_back(members[a]);
    }
  };

  if (n <= std::min(budget.max_exhaustive, 30)) {
    est.exhaustive = true;
    std::vector<int> local;
    for (std::uint64_t mask = 1; mask < (1ULL << n); ++mask) {
      if (std::popcount(mask) > kmax) continue;
      std::uint64_t nbr = 0;
      local.clear();
      for (int a = 0; a < n; ++a)
        if (mask >> a & 1ULL) {
          nbr |= adj.row_mask(a);
          local.push_back(a);
        }
      consider(local, std::popcount(nbr));
    }
    return est;
  }

  if (budget.samples <= 0)
    throw Error(Errc::estimation,
                fmt::format("class {} has {} points (> {}) and the sampling budget is zero", cls,
                            n, budget.max_exhaustive));
  for (int a = 0; a < n; ++a) consider({a}, adj.neighborhood_count({a}));
  Rng rng(detail::derive_seed(budget.seed, 0xe5a9ULL + static_cast<std::uint64_t>(cls)));
  for (long s = 0; s < budget.samples; ++s) {
    auto local = detail::random_subset(n, kmax, rng);
    consider(local, adj.neighborhood_count(local));
  }
  for (const auto& extra : budget.extra) {
    std::vector<int> local;
    for (int g : extra) {
      auto it = std::lower_bound(members.begin(), members.end(), g);
      if (it != members.end() && *it == g) local.push_back(static_cast<int>(it - members.begin()));
    }
    if (local.empty() || static_cast<int>(local.size()) > kmax) continue;
    consider(local, adj.neighborhood_count(local));
  }
  return est;
}

/// Smallest estimate over all classes.
inline ExpansionEstimate estimate_expansion_all(const FinitePointSet& ps, double a_bar,
                                                const EnumerationBudget& budget = {}) {
  ExpansionEstimate best;
  best.a_bar = a_bar;
  best.exhaustive = true;
  for (int c = 0; c < ps.num_classes(); ++c) {
    auto e = estimate_expansion(ps, c, a_bar, budget);
    best.subsets_checked += e.subsets_checked;
    best.exhaustive = best.exhaustive && e.exhaustive;
    if (e.c_hat < best.c_hat) {
      best.c_hat = e.c_hat;
      best.witness = e.witness;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Teacher mistakes

struct MisclassifiedSet {
  /// Indices into D_u.
  Subset indices;
  /// max_i P_i(M)
  double a_bar = 0.0;
  std::vector<double> per_class_fraction;
};

inline MisclassifiedSet misclassified_set(const TrainedModel& teacher,
                                          const UnlabeledMultimodal& d_u,
                                          const OracleLabels& oracle) {
  if (oracle.labels.size() != static_cast<std::size_t>(d_u.size()))
    throw Error(Errc::shape, "oracle label count does not match D_u");
  const auto pred = predict(teacher, d_u.alpha, d_u.beta);
  const int k = teacher.mlp.num_classes();
  std::vector<long> wrong(k, 0), total(k, 0);
  MisclassifiedSet m;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int y = oracle.labels[i];
    total.at(y) += 1;
    if (pred[i] != y) {
      m.indices.push_back(static_cast<int>(i));
      wrong[y] += 1;
    }
  }
  for (int c = 0; c < k; ++c) {
    const double f = total[c] ? static_cast<double>(wrong[c]) / total[c] : 0.0;
    m.per_class_fraction.push_back(f);
    m.a_bar = std::max(m.a_bar, f);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Product expansion

/// Max-metric product of two modality point sets built by pairing every
/// class-i point of `alpha` with every class-i point of `beta`. Coordinates
/// are divided by their modality radius so the product radius is 1.
inline FinitePointSet product_point_set(const FinitePointSet& alpha, const FinitePointSet& beta,
                                        std::vector<std::pair<int, int>>* sources = nullptr) {
  if (alpha.num_classes() != beta.num_classes())
    throw Error(Errc::pairing, "modalities disagree on the class set");
  std::vector<Vec> pts;
  std::vector<int> labels;
  const auto da = alpha.points().front().size();
  const auto db = beta.points().front().size();
  for (int c = 0; c < alpha.num_classes(); ++c)
    for (int a : alpha.class_indices(c))
      for (int b : beta.class_indices(c)) {
        Vec p(da + db);
        p << alpha.points()[a] / alpha.radius(), beta.points()[b] / beta.radius();
        pts.push_back(std::move(p));
        labels.push_back(c);
        if (sources) sources->emplace_back(a, b);
      }
  if (alpha.blocks().size() != 1 || beta.blocks().size() != 1)
    throw Error(Errc::pairing, "product factors must be single-block sets");
  return FinitePointSet(std::move(pts), std::move(labels), 1.0,
                        {static_cast<int>(da), static_cast<int>(db)});
}

struct Lemma1Report {
  double c1_hat = 0.0;
  double c2_hat = 0.0;
  /// Expansion of product-form sets V = A x B (P_i(A), P_i(B) <= a_bar),
  /// with N(V) measured directly in the product space.
  double c_prod_hat = 0.0;
  /// Diagnostic: expansion over arbitrary subsets of the product class.
  double c_general_hat = 0.0;
  long rectangles_checked = 0;
  bool rectangles_exhaustive = false;
  bool pass = false;
};

namespace detail {

/// All class-local subsets of size <= kmax (exhaustive) or singletons plus
/// random draws.
inline std::vector<std::vector<int>> candidate_factors(int n, int kmax, bool exhaustive,
                                                       long samples, Rng& rng) {
  std::vector<std::vector<int>> out;
  if (kmax == 0) return out;
  if (exhaustive) {
    for (std::uint64_t mask = 1; mask < (1ULL << n); ++mask) {
      if (std::popcount(mask) > kmax) continue;
      std::vector<int> v;
      for (int a = 0; a < n; ++a)
        if (mask >> a & 1ULL) v.push_back(a);
      out.push_back(std::move(v));
    }
    return out;
  }
  for (int a = 0; a < n; ++a) out.push_back({a});
  for (long s = 0; s < samples; ++s) out.push_back(random_subset(n, kmax, rng));
  return out;
}

}  // namespace detail

/// Checks that product-form sets expand by at least 0.9 * c1 * c2.
///
/// c1_hat and c2_hat are the per-modality minima over classes. For each
/// class, rectangles A x B are enumerated when the number of pairs stays
/// within 2^16 and both factors are enumerable; otherwise singleton pairs
/// plus `budget.samples` random pairs are used.
inline Lemma1Report check_lemma1(const FinitePointSet& alpha, const FinitePointSet& beta,
                                 double a_bar, const EnumerationBudget& budget = {}) {
  if (alpha.num_classes() != beta.num_classes())
    throw Error(Errc::pairing, "modalities disagree on the class set");
  Lemma1Report rep;
  rep.c1_hat = estimate_expansion_all(alpha, a_bar, budget).c_hat;
  rep.c2_hat = estimate_expansion_all(beta, a_bar, budget).c_hat;
  EnumerationBudget product_budget = budget;
  product_budget.extra.clear();

  std::vector<std::pair<int, int>> sources;
  const FinitePointSet prod = product_point_set(alpha, beta, &sources);
  rep.c_prod_hat = std::numeric_limits<double>::infinity();
  rep.rectangles_exhaustive = true;
  Rng rng(detail::derive_seed(budget.seed, 0x1e33aULL));
  for (int c = 0; c < prod.num_classes(); ++c) {
    const int na = alpha.class_size(c);
    const int nb = beta.class_size(c);
    const int ka = detail::max_subset_size(a_bar, na);
    const int kb = detail::max_subset_size(a_bar, nb);
    const bool enumerable = na <= std::min(budget.max_exhaustive, 30) &&
                            nb <= std::min(budget.max_exhaustive, 30);
    auto count_subsets = [](int n, int k) {
      double total = 0.0, binom = 1.0;
      for (int s = 1; s <= k; ++s) {
        binom = binom * (n - s + 1) / s;
        total += binom;
      }
      return total;
    };
    const bool exhaustive = enumerable && count_subsets(na, ka) * count_subsets(nb, kb) <= 65536.0;
    rep.rectangles_exhaustive = rep.rectangles_exhaustive && exhaustive;
    auto fa = detail::candidate_factors(na, ka, exhaustive, budget.samples, rng);
    auto fb = detail::candidate_factors(nb, kb, exhaustive, budget.samples, rng);

    // class-local product index of pair (a, b) is a * nb + b: product points
    // are emitted class by class in that order.
    const detail::ClassAdjacency adj(prod, c);
    auto check = [&](const std::vector<int>& A, const std::vector<int>& B) {
      std::vector<int> local;
      local.reserve(A.size() * B.size());
      for (int a : A)
        for (int b : B) local.push_back(a * nb + b);
      const double ratio = static_cast<double>(adj.neighborhood_count(local)) /
                           static_cast<double>(local.size());
      rep.c_prod_hat = std::min(rep.c_prod_hat, ratio);
      ++rep.rectangles_checked;
    };
    if (exhaustive) {
      for (const auto& A : fa)
        for (const auto& B : fb) check(A, B);
    } else {
      for (int a = 0; a < na; ++a)
        for (int b = 0; b < nb; ++b) check({a}, {b});
      std::uniform_int_distribution<std::size_t> pa(0, fa.empty() ? 0 : fa.size() - 1);
      std::uniform_int_distribution<std::size_t> pb(0, fb.empty() ? 0 : fb.size() - 1);
      if (!fa.empty() && !fb.empty())
        for (long s = 0; s < budget.samples; ++s) check(fa[pa(rng)], fb[pb(rng)]);
    }
  }
  rep.c_general_hat = estimate_expansion_all(prod, a_bar, product_budget).c_hat;
  const double target = rep.c1_hat * rep.c2_hat;
  rep.pass = std::isinf(target) ? std::isinf(rep.c_prod_hat) : rep.c_prod_hat >= 0.9 * target;
  return rep;
}

// ---------------------------------------------------------------------------
// Error bounds

/// 4 err / (c1 c2 - 1) + 4 mu; requires c1 c2 > 1.
inline double theorem1_bound(double err_teacher, double c1, double c2, double mu) {
  if (!(err_teacher >= 0.0 && err_teacher <= 1.0))
    throw Error(Errc::domain, "teacher error must lie in [0,1]");
  if (!(mu >= 0.0)) throw Error(Errc::domain, "mu must be >= 0");
  const double c = c1 * c2;
  if (!(c > 1.0)) throw Error(Errc::domain, "bound needs c1 * c2 > 1");
  return 4.0 * err_teacher / (c - 1.0) + 4.0 * mu;
}

/// Unimodal counterpart 4 err / (c1 - 1) + 4 mu; requires c1 > 1.
inline double unimodal_bound(double err_teacher, double c1, double mu) {
  if (!(err_teacher >= 0.0 && err_teacher <= 1.0))
    throw Error(Errc::domain, "teacher error must lie in [0,1]");
  if (!(mu >= 0.0)) throw Error(Errc::domain, "mu must be >= 0");
  if (!(c1 > 1.0)) throw Error(Errc::domain, "bound needs c1 > 1");
  return 4.0 * err_teacher / (c1 - 1.0) + 4.0 * mu;
}

/// Fraction of D_u whose argmax prediction flips under at least one of
/// `draws` perturbations: an empirical robustness-violation rate standing in
/// for mu.
inline double measure_mu(const TrainedModel& student, const UnlabeledMultimodal& d_u,
                         const Transform& t, int draws, Rng& rng) {
  if (draws < 1) throw Error(Errc::domain, "draws must be >= 1");
  if (d_u.size() == 0 || t.is_identity()) return 0.0;
  const Mat x = model_inputs(student, d_u.alpha, d_u.beta);
  const auto clean = detail::argmax_columns(predict_logits(student.mlp, x));
  std::vector<bool> flipped(clean.size(), false);
  for (int d = 0; d < draws; ++d) {
    const auto noisy = detail::argmax_columns(perturbed_forward(student.mlp, x, t, rng).logits);
    for (std::size_t i = 0; i < clean.size(); ++i)
      if (noisy[i] != clean[i]) flipped[i] = true;
  }
  return static_cast<double>(std::count(flipped.begin(), flipped.end(), true)) /
         static_cast<double>(clean.size());
}

}  // namespace mkelab

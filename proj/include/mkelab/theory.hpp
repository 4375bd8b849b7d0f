#pragma once

// Synthetic expansion instances and the theory report.

#include <fmt/format.h>

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mkelab/expansion.hpp"

namespace mkelab {

/// A pair of single-modality point sets sharing one class set.
struct TheoryInstance {
  std::string name;
  FinitePointSet alpha;
  FinitePointSet beta;
  double a_bar = 0.25;
};

namespace detail {

/// Per class: a 1-D lattice of `count` points with random spacing in
/// [0.5, 1.5] radius units, classes placed far apart.
inline FinitePointSet random_lattice(int classes, int count_lo, int count_hi, double radius,
                                     Rng& rng) {
  std::uniform_int_distribution<int> count(count_lo, count_hi);
  std::uniform_real_distribution<double> spacing(0.5, 1.5);
  std::vector<Vec> pts;
  std::vector<int> labels;
  for (int c = 0; c < classes; ++c) {
    const int n = count(rng);
    const double h = spacing(rng) * radius;
    for (int i = 0; i < n; ++i) {
      pts.push_back(Vec::Constant(1, 1000.0 * c + h * i));
      labels.push_back(c);
    }
  }
  return FinitePointSet(std::move(pts), std::move(labels), radius);
}

/// Per class: points scattered around 1-3 random 2-D cluster centers.
inline FinitePointSet random_clusters(int classes, int count_lo, int count_hi, double radius,
                                      Rng& rng) {
  std::uniform_int_distribution<int> count(count_lo, count_hi);
  std::uniform_int_distribution<int> nclusters(1, 3);
  std::uniform_real_distribution<double> center(0.0, 4.0 * radius);
  std::normal_distribution<double> jitter(0.0, 0.6 * radius);
  std::vector<Vec> pts;
  std::vector<int> labels;
  for (int c = 0; c < classes; ++c) {
    const int n = count(rng);
    const int k = nclusters(rng);
    std::vector<Vec> centers;
    for (int j = 0; j < k; ++j) {
      Vec m(2);
      m << 1000.0 * c + center(rng), center(rng);
      centers.push_back(m);
    }
    for (int i = 0; i < n; ++i) {
      Vec p = centers[i % k];
      p(0) += jitter(rng);
      p(1) += jitter(rng);
      pts.push_back(p);
      labels.push_back(c);
    }
  }
  return FinitePointSet(std::move(pts), std::move(labels), radius);
}

}  // namespace detail

/// Randomized instance of kind "grid" (1-D lattices) or "cluster" (2-D
/// clusters). Modalities are drawn independently given the class, so the
/// per-class Cartesian product is the conditionally independent joint.
inline TheoryInstance random_instance(const std::string& kind, std::uint64_t seed,
                                      double a_bar = 0.4) {
  Rng rng(detail::derive_seed(seed, 0x7e0aULL));
  const double radius = 1.0;
  auto make = [&](void) {
    if (kind == "grid") return detail::random_lattice(2, 3, 6, radius, rng);
    if (kind == "cluster") return detail::random_clusters(2, 3, 6, radius, rng);
    throw Error(Errc::usage, fmt::format("unknown instance kind '{}'", kind));
  };
  FinitePointSet a = make();
  FinitePointSet b = make();
  return {fmt::format("{}_{}", kind, seed), std::move(a), std::move(b), a_bar};
}

/// One line of the theory report. Unset optionals are written as N/A.
struct TheoryRow {
  std::string instance;
  double c1_hat = 0.0;
  double c2_hat = 0.0;
  double c_prod_hat = 0.0;
  double a_bar = 0.0;
  std::optional<double> err_teacher;
  std::optional<double> err_student;
  std::optional<double> mu_hat;
  std::optional<double> bound_mm;
  std::optional<double> bound_um;
  bool lemma1_pass = false;
  double c_general_hat = 0.0;
};

inline constexpr const char* kTheoryHeader =
    "instance,c1_hat,c2_hat,c_prod_hat,a_bar,err_teacher,err_student,mu_hat,bound_mm,bound_um";

/// Leading `#` lines of every theory report.
inline std::string theory_preamble() {
  return "# neighborhoods: closed radius-r balls; product metric: max over modalities\n"
         "# c_hat values under sampling are upper estimates of the true expansion\n"
         "# mu_hat is an empirical prediction-flip rate used as a proxy for mu\n"
         "# bounds are diagnostics computed from these estimates and are not asserted\n";
}

/// Fills both bound columns (N/A where the domain rule rejects them).
/// Returns warnings for rejected bounds.
inline std::vector<std::string> fill_bounds(TheoryRow& row) {
  std::vector<std::string> warn;
  if (!row.err_teacher) return warn;
  const double mu = row.mu_hat.value_or(0.0);
  try {
    row.bound_mm = theorem1_bound(*row.err_teacher, row.c1_hat, row.c2_hat, mu);
  } catch (const Error& e) {
    warn.push_back(fmt::format("{}: multimodal bound N/A ({})", row.instance, e.what()));
  }
  try {
    row.bound_um = unimodal_bound(*row.err_teacher, row.c1_hat, mu);
  } catch (const Error& e) {
    warn.push_back(fmt::format("{}: unimodal bound N/A ({})", row.instance, e.what()));
  }
  return warn;
}

inline TheoryRow theory_row(const TheoryInstance& inst, const EnumerationBudget& budget) {
  const Lemma1Report rep = check_lemma1(inst.alpha, inst.beta, inst.a_bar, budget);
  TheoryRow row;
  row.instance = inst.name;
  row.c1_hat = rep.c1_hat;
  row.c2_hat = rep.c2_hat;
  row.c_prod_hat = rep.c_prod_hat;
  row.c_general_hat = rep.c_general_hat;
  row.lemma1_pass = rep.pass;
  row.a_bar = inst.a_bar;
  return row;
}

inline std::string theory_csv(const std::vector<TheoryRow>& rows) {
  auto num = [](double x) { return std::isinf(x) ? std::string("inf") : fmt::format("{:.6f}", x); };
  auto opt = [&](const std::optional<double>& x) { return x ? num(*x) : std::string("N/A"); };
  std::string out = theory_preamble();
  out += std::string(kTheoryHeader) + "\n";
  for (const auto& r : rows)
    out += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", r.instance, num(r.c1_hat), num(r.c2_hat),
                       num(r.c_prod_hat), num(r.a_bar), opt(r.err_teacher), opt(r.err_student),
                       opt(r.mu_hat), opt(r.bound_mm), opt(r.bound_um));
  return out;
}

}  // namespace mkelab

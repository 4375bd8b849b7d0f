#pragma once

// Brute-force expansion oracles. Deliberately naive: raw coordinate lists,
// recursive subset generation, no bitsets, no shared code with the library.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace mkelab::test {

using Coords = std::vector<std::vector<double>>;

inline double euclid(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

/// Largest k with k / n <= a_bar.
inline int oracle_kmax(double a_bar, int n) {
  int k = 0;
  while (k < n && static_cast<double>(k + 1) <= a_bar * n + 1e-9) ++k;
  return k;
}

/// Calls f on every non-empty index combination of {0..n-1} of size <= kmax.
inline void for_each_combination(int n, int kmax, const std::function<void(const std::vector<int>&)>& f) {
  std::vector<int> cur;
  std::function<void(int)> rec = [&](int start) {
    if (!cur.empty()) f(cur);
    if (static_cast<int>(cur.size()) == kmax) return;
    for (int i = start; i < n; ++i) {
      cur.push_back(i);
      rec(i + 1);
      cur.pop_back();
    }
  };
  rec(0);
}

/// min over V subset of the class, |V| <= a_bar n, of |N(V) ∩ class| / |V|.
/// `dist` compares two class-local indices.
inline double oracle_expansion(int n, double a_bar, double r,
                               const std::function<double(int, int)>& dist) {
  double best = std::numeric_limits<double>::infinity();
  for_each_combination(n, oracle_kmax(a_bar, n), [&](const std::vector<int>& v) {
    int count = 0;
    for (int x = 0; x < n; ++x) {
      bool hit = false;
      for (int i : v) hit = hit || dist(x, i) <= r;
      count += hit;
    }
    best = std::min(best, static_cast<double>(count) / static_cast<double>(v.size()));
  });
  return best;
}

/// Per-class oracle on raw coordinates, minimized over classes.
inline double oracle_expansion_all(const Coords& pts, const std::vector<int>& labels, double r,
                                   double a_bar) {
  int k = 0;
  for (int y : labels) k = std::max(k, y + 1);
  double best = std::numeric_limits<double>::infinity();
  for (int c = 0; c < k; ++c) {
    Coords cls;
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (labels[i] == c) cls.push_back(pts[i]);
    best = std::min(best, oracle_expansion(static_cast<int>(cls.size()), a_bar, r,
                                           [&](int a, int b) { return euclid(cls[a], cls[b]); }));
  }
  return best;
}

/// Rectangle expansion A x B in the max-metric product of two modalities,
/// each scaled by its own radius; N(A x B) is counted point by point.
inline double oracle_rectangles(const Coords& a_pts, const Coords& b_pts,
                                const std::vector<int>& labels, double ra, double rb,
                                double a_bar) {
  int k = 0;
  for (int y : labels) k = std::max(k, y + 1);
  double best = std::numeric_limits<double>::infinity();
  for (int c = 0; c < k; ++c) {
    Coords ca, cb;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) {
        ca.push_back(a_pts[i]);
        cb.push_back(b_pts[i]);
      }
    const int na = static_cast<int>(ca.size()), nb = static_cast<int>(cb.size());
    for_each_combination(na, oracle_kmax(a_bar, na), [&](const std::vector<int>& A) {
      for_each_combination(nb, oracle_kmax(a_bar, nb), [&](const std::vector<int>& B) {
        int count = 0;
        for (int x = 0; x < na; ++x)
          for (int y = 0; y < nb; ++y) {
            bool hit = false;
            for (int a : A)
              for (int b : B)
                hit = hit || std::max(euclid(ca[x], ca[a]) / ra, euclid(cb[y], cb[b]) / rb) <= 1.0;
            count += hit;
          }
        best = std::min(best, static_cast<double>(count) / static_cast<double>(A.size() * B.size()));
      });
    });
  }
  return best;
}

}  // namespace mkelab::test

#pragma once

// TwoMoon data, modality projection and the labeled / unlabeled / test
// partition.

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mkelab/error.hpp"
#include "mkelab/netcore.hpp"

namespace mkelab {

/// One point; modality alpha observes `x`, modality beta observes `y`.
struct Sample2D {
  double x = 0.0;
  double y = 0.0;
  int label = 0;

  friend bool operator==(const Sample2D&, const Sample2D&) = default;
};

enum class Modality { alpha, beta, both };

inline std::string modality_name(Modality m) {
  switch (m) {
    case Modality::alpha: return "alpha";
    case Modality::beta: return "beta";
    case Modality::both: return "both";
  }
  return "?";
}

inline int modality_dim(Modality m) { return m == Modality::both ? 2 : 1; }

inline Vec project(const Sample2D& s, Modality m) {
  switch (m) {
    case Modality::alpha: return Vec::Constant(1, s.x);
    case Modality::beta: return Vec::Constant(1, s.y);
    case Modality::both: {
      Vec v(2);
      v << s.x, s.y;
      return v;
    }
  }
  return {};
}

/// `n` points on two interleaving half circles: ceil(n/2) on the upper arc
/// (cos t, sin t) with label 0, floor(n/2) on the lower arc
/// (1 - cos t, 0.5 - sin t) with label 1, t evenly spaced over [0, pi], plus
/// isotropic Gaussian noise. `scale` multiplies the arc geometry (not the
/// noise).
inline std::vector<Sample2D> twomoon_generate(int n, double noise_std, std::uint64_t seed,
                                              double scale = 1.0) {
  if (n < 2) throw Error(Errc::invalid_size, "twomoon needs n >= 2");
  if (!(noise_std >= 0.0)) throw Error(Errc::invalid_size, "noise_std must be >= 0");
  if (!(scale > 0.0) || !std::isfinite(scale))
    throw Error(Errc::invalid_size, "scale must be > 0");
  const int upper = (n + 1) / 2;
  const int lower = n / 2;
  auto arc_t = [](int i, int count) {
    return count == 1 ? 0.0 : std::numbers::pi * i / static_cast<double>(count - 1);
  };
  std::vector<Sample2D> out;
  out.reserve(n);
  for (int i = 0; i < upper; ++i) {
    const double t = arc_t(i, upper);
    out.push_back({scale * std::cos(t), scale * std::sin(t), 0});
  }
  for (int i = 0; i < lower; ++i) {
    const double t = arc_t(i, lower);
    out.push_back({scale * (1.0 - std::cos(t)), scale * (0.5 - std::sin(t)), 1});
  }
  if (noise_std > 0.0) {
    Rng rng(seed);
    std::normal_distribution<double> noise(0.0, noise_std);
    for (auto& s : out) {
      s.x += noise(rng);
      s.y += noise(rng);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Partitioned datasets

/// D_l: modality-alpha features with their labels.
struct LabeledUnimodal {
  Mat alpha;  // 1 x N
  std::vector<int> labels;

  Eigen::Index size() const { return alpha.cols(); }
};

/// D_u: both modalities, no labels. The true labels live in a separate
/// OracleLabels value returned next to it.
struct UnlabeledMultimodal {
  Mat alpha;  // 1 x M
  Mat beta;   // 1 x M

  Eigen::Index size() const { return alpha.cols(); }
};

/// Evaluation-only view of the true labels of an UnlabeledMultimodal set.
struct OracleLabels {
  std::vector<int> labels;
};

/// Test data (or any fully observed labeled set).
struct LabeledMultimodal {
  Mat alpha;
  Mat beta;
  std::vector<int> labels;

  Eigen::Index size() const { return alpha.cols(); }
};

/// D~_u: both modalities with teacher-given targets (K x M probabilities).
struct PseudoLabeledMultimodal {
  Mat alpha;
  Mat beta;
  Mat targets;

  Eigen::Index size() const { return alpha.cols(); }
};

enum class SplitTag { labeled, unlabeled, test };

inline std::string split_tag_name(SplitTag t) {
  switch (t) {
    case SplitTag::labeled: return "labeled";
    case SplitTag::unlabeled: return "unlabeled";
    case SplitTag::test: return "test";
  }
  return "?";
}

inline SplitTag parse_split_tag(const std::string& s) {
  if (s == "labeled") return SplitTag::labeled;
  if (s == "unlabeled") return SplitTag::unlabeled;
  if (s == "test") return SplitTag::test;
  throw Error(Errc::io, "unknown split tag '" + s + "'");
}

struct SplitResult {
  LabeledUnimodal labeled;
  UnlabeledMultimodal unlabeled;
  OracleLabels unlabeled_oracle;
  LabeledMultimodal test;
  /// Partition membership of every source sample, in source order.
  std::vector<SplitTag> tags;
};

/// Assembles the three partitions from per-sample tags (source order is
/// kept inside each partition).
inline SplitResult split_from_tags(const std::vector<Sample2D>& data,
                                   const std::vector<SplitTag>& tags) {
  if (tags.size() != data.size()) throw Error(Errc::split, "tag count != sample count");
  std::vector<int> li, ui, ti;
  for (std::size_t i = 0; i < data.size(); ++i) {
    switch (tags[i]) {
      case SplitTag::labeled: li.push_back(static_cast<int>(i)); break;
      case SplitTag::unlabeled: ui.push_back(static_cast<int>(i)); break;
      case SplitTag::test: ti.push_back(static_cast<int>(i)); break;
    }
  }
  SplitResult r;
  r.tags = tags;
  r.labeled.alpha.resize(1, li.size());
  for (std::size_t k = 0; k < li.size(); ++k) {
    r.labeled.alpha(0, k) = data[li[k]].x;
    r.labeled.labels.push_back(data[li[k]].label);
  }
  r.unlabeled.alpha.resize(1, ui.size());
  r.unlabeled.beta.resize(1, ui.size());
  for (std::size_t k = 0; k < ui.size(); ++k) {
    r.unlabeled.alpha(0, k) = data[ui[k]].x;
    r.unlabeled.beta(0, k) = data[ui[k]].y;
    r.unlabeled_oracle.labels.push_back(data[ui[k]].label);
  }
  r.test.alpha.resize(1, ti.size());
  r.test.beta.resize(1, ti.size());
  for (std::size_t k = 0; k < ti.size(); ++k) {
    r.test.alpha(0, k) = data[ti[k]].x;
    r.test.beta(0, k) = data[ti[k]].y;
    r.test.labels.push_back(data[ti[k]].label);
  }
  return r;
}

/// Shuffled disjoint partition into (n_l, n_u, n_test). The labeled part
/// is reshuffled until it contains every class, at most 100 times.
inline SplitResult split(const std::vector<Sample2D>& data, int n_l, int n_u, int n_test,
                         std::uint64_t seed) {
  if (n_l < 2 || n_u < 0 || n_test < 0 ||
      static_cast<std::size_t>(n_l) + n_u + n_test != data.size())
    throw Error(Errc::split, fmt::format("sizes {}+{}+{} do not partition {} samples", n_l,
                                         n_u, n_test, data.size()));
  int num_classes = 0;
  for (const auto& s : data) num_classes = std::max(num_classes, s.label + 1);

  Rng rng(seed);
  std::vector<int> order(data.size());
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> seen(num_classes, false);
    for (int k = 0; k < n_l; ++k) seen[data[order[k]].label] = true;
    if (std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) {
      std::vector<SplitTag> tags(data.size());
      for (std::size_t k = 0; k < order.size(); ++k) {
        const auto pos = static_cast<int>(k);
        tags[order[k]] = pos < n_l ? SplitTag::labeled
                         : pos < n_l + n_u ? SplitTag::unlabeled
                                           : SplitTag::test;
      }
      return split_from_tags(data, tags);
    }
  }
  throw Error(Errc::degenerate_split, "labeled part misses a class after 100 shuffles");
}

// ---------------------------------------------------------------------------
// CSV: header x,y,label,split, floats with 9 significant digits.

inline std::string dataset_csv(const std::vector<Sample2D>& data,
                               const std::vector<SplitTag>& tags) {
  if (tags.size() != data.size()) throw Error(Errc::io, "tag count != sample count");
  std::string out = "x,y,label,split\n";
  for (std::size_t i = 0; i < data.size(); ++i)
    out += fmt::format("{:.9g},{:.9g},{},{}\n", data[i].x, data[i].y, data[i].label,
                       split_tag_name(tags[i]));
  return out;
}

inline void write_dataset_csv(const std::string& path, const std::vector<Sample2D>& data,
                              const std::vector<SplitTag>& tags) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::io, "cannot write " + path);
  f << dataset_csv(data, tags);
  if (!f) throw Error(Errc::io, "write failed for " + path);
}

struct DatasetFile {
  std::vector<Sample2D> samples;
  std::vector<SplitTag> tags;
};

inline DatasetFile parse_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::io, "empty dataset file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "x,y,label,split") throw Error(Errc::io, "unexpected dataset header: " + line);
  DatasetFile d;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string x, y, label, tag;
    if (!std::getline(ss, x, ',') || !std::getline(ss, y, ',') ||
        !std::getline(ss, label, ',') || !std::getline(ss, tag))
      throw Error(Errc::io, "malformed dataset row " + std::to_string(lineno));
    try {
      d.samples.push_back({std::stod(x), std::stod(y), std::stoi(label)});
    } catch (const std::exception&) {
      throw Error(Errc::io, "malformed number in dataset row " + std::to_string(lineno));
    }
    d.tags.push_back(parse_split_tag(tag));
  }
  return d;
}

inline DatasetFile read_dataset_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::io, "cannot read " + path);
  return parse_dataset_csv(f);
}

}  // namespace mkelab

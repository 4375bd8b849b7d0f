#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "mkelab/synthdata.hpp"

using namespace mkelab;

namespace {

// Distance from p to the upper (label 0) or lower (label 1) arc, by dense
// sampling of the parametric curve.
double arc_distance(double x, double y, int arc) {
  double best = 1e300;
  for (int i = 0; i <= 4000; ++i) {
    const double t = std::numbers::pi * i / 4000.0;
    const double ax = arc == 0 ? std::cos(t) : 1.0 - std::cos(t);
    const double ay = arc == 0 ? std::sin(t) : 0.5 - std::sin(t);
    best = std::min(best, std::hypot(x - ax, y - ay));
  }
  return best;
}

}  // namespace

TEST(TwoMoon, BalancedCounts) {
  const auto d = twomoon_generate(500, 0.1, 1);
  ASSERT_EQ(d.size(), 500u);
  EXPECT_EQ(std::count_if(d.begin(), d.end(), [](auto& s) { return s.label == 0; }), 250);
  const auto odd = twomoon_generate(7, 0.1, 1);
  EXPECT_EQ(std::count_if(odd.begin(), odd.end(), [](auto& s) { return s.label == 0; }), 4);
}

TEST(TwoMoon, NoiselessPointsLieOnArcs) {
  for (const auto& s : twomoon_generate(4, 0.0, 3)) {
    const double t_err = s.label == 0 ? std::abs(s.x * s.x + s.y * s.y - 1.0)
                                      : std::abs((1 - s.x) * (1 - s.x) + (0.5 - s.y) * (0.5 - s.y) - 1.0);
    EXPECT_LT(t_err, 1e-12);
  }
  const auto d = twomoon_generate(4, 0.0, 3);
  EXPECT_DOUBLE_EQ(d[0].x, 1.0);
  EXPECT_DOUBLE_EQ(d[0].y, 0.0);
  EXPECT_DOUBLE_EQ(d[2].x, 0.0);
  EXPECT_DOUBLE_EQ(d[2].y, 0.5);
}

TEST(TwoMoon, NearestArcOracle) {
  const auto d = twomoon_generate(500, 0.1, 11);
  int correct = 0;
  for (const auto& s : d) {
    const int pred = arc_distance(s.x, s.y, 0) <= arc_distance(s.x, s.y, 1) ? 0 : 1;
    correct += pred == s.label;
  }
  EXPECT_GE(correct, 495);
}

TEST(TwoMoon, ErrorsAndDeterminism) {
  EXPECT_THROW(twomoon_generate(1, 0.1, 0), Error);
  try {
    twomoon_generate(1, 0.1, 0);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_size);
  }
  EXPECT_THROW(twomoon_generate(10, -1.0, 0), Error);
  EXPECT_EQ(twomoon_generate(50, 0.2, 4), twomoon_generate(50, 0.2, 4));
  EXPECT_NE(twomoon_generate(50, 0.2, 4), twomoon_generate(50, 0.2, 5));
}

TEST(TwoMoon, ScaleMultipliesGeometry) {
  const auto a = twomoon_generate(20, 0.0, 1, 1.0);
  const auto b = twomoon_generate(20, 0.0, 1, 3.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(b[i].x, 3.0 * a[i].x, 1e-12);
    EXPECT_NEAR(b[i].y, 3.0 * a[i].y, 1e-12);
  }
}

TEST(Project, Modalities) {
  const Sample2D s{1.0, -0.5, 0};
  EXPECT_EQ(project(s, Modality::alpha), Vec::Constant(1, 1.0));
  Vec both(2);
  both << 1.0, -0.5;
  EXPECT_EQ(project(s, Modality::both), both);
  EXPECT_EQ(project(Sample2D{0, 0, 1}, Modality::beta), Vec::Constant(1, 0.0));
}

TEST(Split, DefaultCardinalitiesAndDisjointness) {
  const auto d = twomoon_generate(500, 0.1, 1);
  const auto s = split(d, 30, 270, 200, 2);
  EXPECT_EQ(s.labeled.size(), 30);
  EXPECT_EQ(s.unlabeled.size(), 270);
  EXPECT_EQ(s.test.size(), 200);
  EXPECT_EQ(s.unlabeled_oracle.labels.size(), 270u);
  EXPECT_EQ(s.labeled.alpha.rows(), 1);
  // every sample lands in exactly one partition, with its own coordinates
  std::multiset<std::pair<double, double>> seen;
  for (int i = 0; i < 270; ++i) seen.insert({s.unlabeled.alpha(0, i), s.unlabeled.beta(0, i)});
  for (int i = 0; i < 200; ++i) seen.insert({s.test.alpha(0, i), s.test.beta(0, i)});
  int labeled_in_source = 0;
  for (const auto& p : d) {
    auto it = seen.find({p.x, p.y});
    if (it != seen.end()) seen.erase(it);
    else ++labeled_in_source;
  }
  EXPECT_TRUE(seen.empty());
  EXPECT_EQ(labeled_in_source, 30);
  std::set<int> classes(s.labeled.labels.begin(), s.labeled.labels.end());
  EXPECT_EQ(classes.size(), 2u);
}

TEST(Split, SeedsDiffer) {
  const auto d = twomoon_generate(500, 0.1, 1);
  EXPECT_NE(split(d, 30, 270, 200, 2).tags, split(d, 30, 270, 200, 3).tags);
  EXPECT_EQ(split(d, 30, 270, 200, 2).tags, split(d, 30, 270, 200, 2).tags);
}

TEST(Split, MinimalLabeledSet) {
  std::vector<Sample2D> d{{0, 0, 0}, {1, 1, 1}};
  const auto s = split(d, 2, 0, 0, 5);
  EXPECT_EQ(s.labeled.size(), 2);
}

TEST(Split, Errors) {
  const auto d = twomoon_generate(500, 0.1, 1);
  try {
    split(d, 30, 270, 100, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::split);
  }
  EXPECT_THROW(split(d, 1, 299, 200, 2), Error);
  // class 1 never occurs, so no shuffle can cover every class
  std::vector<Sample2D> gap{{0, 0, 0}, {0, 0, 0}, {0, 0, 2}};
  try {
    split(gap, 2, 1, 0, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::degenerate_split);
  }
}

TEST(DatasetCsv, RoundTripAndFormat) {
  const auto d = twomoon_generate(20, 0.1, 4);
  const auto s = split(d, 4, 8, 8, 1);
  const std::string text = dataset_csv(d, s.tags);
  EXPECT_EQ(text.substr(0, text.find('\n')), "x,y,label,split");
  std::stringstream in(text);
  const auto back = parse_dataset_csv(in);
  ASSERT_EQ(back.samples.size(), d.size());
  EXPECT_EQ(back.tags, s.tags);
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_NEAR(back.samples[i].x, d[i].x, 1e-8 * (1 + std::abs(d[i].x)));
    EXPECT_EQ(back.samples[i].label, d[i].label);
  }
  EXPECT_EQ(dataset_csv(back.samples, back.tags), text);
  std::stringstream bad("a,b\n");
  EXPECT_THROW(parse_dataset_csv(bad), Error);
}

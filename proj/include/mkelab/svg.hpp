#pragma once

// Static SVG plot of a dataset and one model's decision regions.

#include <fmt/format.h>

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "mkelab/mke.hpp"
#include "mkelab/synthdata.hpp"

namespace mkelab {

struct PlotOptions {
  int grid = 200;
  int width = 640;
  int height = 480;
  std::string title;
  /// Timestamp written into a leading comment; empty leaves it out.
  std::string timestamp;
};

namespace detail {

inline const char* class_color(int c) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  return colors[c % 5];
}

inline const char* region_color(int c) {
  static const char* colors[] = {"#dbe8f5", "#f8dada", "#dcf0dc", "#e8e0f0", "#fde8d4"};
  return colors[c % 5];
}

}  // namespace detail

/// Scatter of every sample (filled: labeled, hollow: unlabeled, small:
/// test), background shaded by predicted class on a grid x grid lattice,
/// and the zero contour of logit(1) - logit(0) traced by marching squares.
inline std::string render_plot_svg(const TrainedModel& model, const DatasetFile& data,
                                   const PlotOptions& opt = {}) {
  if (data.samples.empty()) throw Error(Errc::io, "dataset has no samples");
  if (opt.grid < 2) throw Error(Errc::usage, "plot grid must be >= 2");
  double x0 = data.samples[0].x, x1 = x0, y0 = data.samples[0].y, y1 = y0;
  for (const auto& s : data.samples) {
    x0 = std::min(x0, s.x);
    x1 = std::max(x1, s.x);
    y0 = std::min(y0, s.y);
    y1 = std::max(y1, s.y);
  }
  const double px = 0.08 * std::max(x1 - x0, 1e-9), py = 0.08 * std::max(y1 - y0, 1e-9);
  x0 -= px;
  x1 += px;
  y0 -= py;
  y1 += py;

  const int margin = 20;
  const double pw = opt.width - 2 * margin, ph = opt.height - 2 * margin;
  auto sx = [&](double x) { return margin + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return margin + (y1 - y) / (y1 - y0) * ph; };

  // Grid vertex (i, j) sits at x0 + i*dx, y0 + j*dy.
  const int g = opt.grid;
  const double dx = (x1 - x0) / (g - 1), dy = (y1 - y0) / (g - 1);
  Mat gx(1, g * g), gy(1, g * g);
  for (int j = 0; j < g; ++j)
    for (int i = 0; i < g; ++i) {
      gx(0, j * g + i) = x0 + i * dx;
      gy(0, j * g + i) = y0 + j * dy;
    }
  const Mat logits = predict_logits(model.mlp, model_inputs(model, gx, gy));
  const auto cls = detail::argmax_columns(logits);
  std::vector<double> margin_val(g * g);
  for (int k = 0; k < g * g; ++k) margin_val[k] = logits(1, k) - logits(0, k);

  std::string svg;
  if (!opt.timestamp.empty()) svg += fmt::format("<!-- generated {} -->\n", opt.timestamp);
  svg += fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
      opt.width, opt.height, opt.width, opt.height);
  svg += fmt::format("<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", opt.width, opt.height);

  // Region fill, run-length merged along each grid row. Cell (i, j) is
  // centered on vertex (i, j).
  svg += "<g shape-rendering=\"crispEdges\">\n";
  const double cw = pw / g, chh = ph / g;
  for (int j = 0; j < g; ++j) {
    int start = 0;
    for (int i = 1; i <= g; ++i) {
      if (i < g && cls[j * g + i] == cls[j * g + start]) continue;
      svg += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"{}\"/>\n",
                         margin + start * cw, margin + (g - 1 - j) * chh, (i - start) * cw, chh,
                         detail::region_color(cls[j * g + start]));
      start = i;
    }
  }
  svg += "</g>\n";

  // Marching squares on the logit margin.
  std::string path;
  auto interp = [&](int ia, int ja, int ib, int jb) {
    const double a = margin_val[ja * g + ia], b = margin_val[jb * g + ib];
    const double t = a == b ? 0.5 : a / (a - b);
    return std::pair{sx(x0 + (ia + t * (ib - ia)) * dx), sy(y0 + (ja + t * (jb - ja)) * dy)};
  };
  for (int j = 0; j + 1 < g; ++j)
    for (int i = 0; i + 1 < g; ++i) {
      std::vector<std::pair<double, double>> cross;
      const int corners[4][2] = {{i, j}, {i + 1, j}, {i + 1, j + 1}, {i, j + 1}};
      for (int e = 0; e < 4; ++e) {
        const auto [ia, ja] = corners[e];
        const auto [ib, jb] = corners[(e + 1) % 4];
        if ((margin_val[ja * g + ia] > 0.0) != (margin_val[jb * g + ib] > 0.0))
          cross.push_back(interp(ia, ja, ib, jb));
      }
      for (std::size_t k = 0; k + 1 < cross.size(); k += 2)
        path += fmt::format("M{:.2f} {:.2f}L{:.2f} {:.2f}", cross[k].first, cross[k].second,
                            cross[k + 1].first, cross[k + 1].second);
    }
  if (!path.empty())
    svg += fmt::format("<path d=\"{}\" stroke=\"black\" stroke-width=\"1.5\" fill=\"none\"/>\n", path);

  for (std::size_t k = 0; k < data.samples.size(); ++k) {
    const auto& s = data.samples[k];
    const char* c = detail::class_color(s.label);
    switch (data.tags[k]) {
      case SplitTag::labeled:
        svg += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"4\" fill=\"{}\" stroke=\"black\"/>\n",
                           sx(s.x), sy(s.y), c);
        break;
      case SplitTag::unlabeled:
        svg += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"2.5\" fill=\"none\" stroke=\"{}\"/>\n",
                           sx(s.x), sy(s.y), c);
        break;
      case SplitTag::test:
        svg += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"1.5\" fill=\"{}\"/>\n", sx(s.x),
                           sy(s.y), c);
        break;
    }
  }

  // Accuracy on the test split (all samples when there is none).
  const SplitResult parts = split_from_tags(data.samples, data.tags);
  LabeledMultimodal eval_set = parts.test;
  if (eval_set.size() == 0) {
    const auto all = split_from_tags(data.samples, std::vector<SplitTag>(data.samples.size(), SplitTag::test));
    eval_set = all.test;
  }
  const EvalReport rep = evaluate(model, eval_set);
  const std::string label = fmt::format("{}test acc {:.4f}", opt.title.empty() ? "" : opt.title + "  ",
                                        rep.accuracy);
  svg += fmt::format(
      "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"22\" fill=\"white\" stroke=\"black\" opacity=\"0.85\"/>\n",
      margin + 6, margin + 6, 12 + 7 * label.size());
  svg += fmt::format(
      "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\">{}</text>\n", margin + 12,
      margin + 21, label);
  svg += "</svg>\n";
  return svg;
}

}  // namespace mkelab

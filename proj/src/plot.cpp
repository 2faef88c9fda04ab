#include "knormlab/plot.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "knormlab/errors.hpp"

namespace knormlab {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                          "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string stem_of(const std::string& path) {
  std::size_t slash = path.find_last_of('/');
  std::string name = slash == std::string::npos ? path : path.substr(slash + 1);
  std::size_t dot = name.find_last_of('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

}  // namespace

std::string render_plot_svg(const std::vector<std::string>& csv_paths,
                            const std::vector<std::string>& labels) {
  const PlotGeometry g;
  struct Series {
    std::string label;
    std::vector<std::pair<double, double>> points;  // (step, accuracy)
  };
  std::vector<Series> series;
  double max_step = 0.0;
  for (std::size_t i = 0; i < csv_paths.size(); ++i) {
    Series s;
    s.label = i < labels.size() && !labels[i].empty() ? labels[i]
                                                      : stem_of(csv_paths[i]);
    for (const MetricsRecord& r : read_metrics_csv(csv_paths[i])) {
      if (r.split != "test") continue;
      s.points.push_back({static_cast<double>(r.step), r.accuracy});
      max_step = std::max(max_step, static_cast<double>(r.step));
    }
    series.push_back(std::move(s));
  }
  if (max_step <= 0.0) max_step = 1.0;

  // data -> pixel: x in [0, max_step], y (accuracy) in [0, 1]
  auto px = [&](double step) {
    return g.left + (g.right - g.left) * (step / max_step);
  };
  auto py = [&](double acc) {
    return g.bottom - (g.bottom - g.top) * acc;
  };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 "
      << static_cast<int>(g.width) << " " << static_cast<int>(g.height)
      << "\" font-family=\"sans-serif\" font-size=\"13\">\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"" << static_cast<int>(g.width)
      << "\" height=\"" << static_cast<int>(g.height) << "\" fill=\"white\"/>\n";
  // axes
  svg << "<line x1=\"" << num(g.left) << "\" y1=\"" << num(g.bottom)
      << "\" x2=\"" << num(g.right) << "\" y2=\"" << num(g.bottom)
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << num(g.left) << "\" y1=\"" << num(g.top) << "\" x2=\""
      << num(g.left) << "\" y2=\"" << num(g.bottom) << "\" stroke=\"black\"/>\n";
  // y ticks at 0, .25, .5, .75, 1
  for (int t = 0; t <= 4; ++t) {
    const double acc = 0.25 * t;
    svg << "<line x1=\"" << num(g.left - 4) << "\" y1=\"" << num(py(acc))
        << "\" x2=\"" << num(g.left) << "\" y2=\"" << num(py(acc))
        << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << num(g.left - 8) << "\" y=\"" << num(py(acc) + 4)
        << "\" text-anchor=\"end\">" << num(acc) << "</text>\n";
  }
  // x ticks: 5 evenly spaced
  for (int t = 0; t <= 4; ++t) {
    const double step = max_step * t / 4.0;
    svg << "<line x1=\"" << num(px(step)) << "\" y1=\"" << num(g.bottom)
        << "\" x2=\"" << num(px(step)) << "\" y2=\"" << num(g.bottom + 4)
        << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << num(px(step)) << "\" y=\"" << num(g.bottom + 18)
        << "\" text-anchor=\"middle\">" << num(step) << "</text>\n";
  }
  // axis labels
  svg << "<text x=\"" << num((g.left + g.right) / 2) << "\" y=\""
      << num(g.height - 8) << "\" text-anchor=\"middle\">round / epoch</text>\n";
  svg << "<text x=\"14\" y=\"" << num((g.top + g.bottom) / 2)
      << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
      << num((g.top + g.bottom) / 2) << ")\">accuracy</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))];
    const Series& s = series[i];
    if (s.points.size() > 1) {
      svg << "<polyline fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t p = 0; p < s.points.size(); ++p) {
        if (p) svg << " ";
        svg << num(px(s.points[p].first)) << "," << num(py(s.points[p].second));
      }
      svg << "\"/>\n";
    }
    for (const auto& [step, acc] : s.points)
      svg << "<circle cx=\"" << num(px(step)) << "\" cy=\"" << num(py(acc))
          << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
    // legend entry
    const double ly = g.top + 16 + 18 * static_cast<double>(i);
    svg << "<line x1=\"" << num(g.left + 10) << "\" y1=\"" << num(ly - 4)
        << "\" x2=\"" << num(g.left + 34) << "\" y2=\"" << num(ly - 4)
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << num(g.left + 40) << "\" y=\"" << num(ly) << "\">"
        << s.label << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void emit_plots(const std::vector<std::string>& csv_paths,
                const std::string& out_path) {
  const std::string svg = render_plot_svg(csv_paths);
  std::ofstream f(out_path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + out_path);
  f << svg;
}

}  // namespace knormlab

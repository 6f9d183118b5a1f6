#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "wmtl/errors.hpp"
#include "wmtl/metrics.hpp"

namespace wmtl {

/// Return curves of several seeds of one method on one task.
struct PlotSeries {
  std::string label;
  std::vector<MetricLog> seeds;
};

namespace detail {

struct XY {
  double x, y;
};

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

/// Mean and std across seeds at each env-step position. Seeds may differ in
/// episode count; positions beyond a seed's log are skipped for that seed.
inline void series_band(const PlotSeries& s, std::vector<XY>& mean_curve,
                        std::vector<XY>& upper, std::vector<XY>& lower) {
  std::size_t longest = 0;
  const MetricLog* ref = nullptr;
  for (const MetricLog& log : s.seeds) {
    if (log.episodes.size() > longest) {
      longest = log.episodes.size();
      ref = &log;
    }
  }
  if (!ref) return;
  for (std::size_t i = 0; i < longest; ++i) {
    std::vector<double> ys;
    for (const MetricLog& log : s.seeds) {
      if (i < log.episodes.size()) ys.push_back(log.episodes[i].episode_return);
    }
    const auto [m, sd] = mean_std(ys);
    const double x = static_cast<double>(ref->episodes[i].env_steps);
    mean_curve.push_back({x, m});
    upper.push_back({x, m + sd});
    lower.push_back({x, m - sd});
  }
}

}  // namespace detail

/// Self-contained SVG line chart: per-seed traces (faint), per-method mean
/// (bold) with a +-std band across seeds. Axes are env steps and episode
/// return.
inline void write_svg_plot(const std::string& path, const std::string& title,
                           const std::vector<PlotSeries>& series) {
  if (series.empty()) throw InputError("plot: no series given");
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  const double W = 760, H = 420;
  const double ml = 70, mr = 20, mt = 40, mb = 50;

  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  struct Prepared {
    std::vector<detail::XY> mean, upper, lower;
    std::vector<std::vector<detail::XY>> traces;
  };
  std::vector<Prepared> prep(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    detail::series_band(series[i], prep[i].mean, prep[i].upper, prep[i].lower);
    for (const MetricLog& log : series[i].seeds) {
      std::vector<detail::XY> t;
      for (const EpisodeRecord& e : log.episodes) {
        t.push_back({static_cast<double>(e.env_steps), e.episode_return});
      }
      prep[i].traces.push_back(std::move(t));
    }
    for (const auto& v : {prep[i].upper, prep[i].lower}) {
      for (const auto& p : v) {
        xmin = std::min(xmin, p.x);
        xmax = std::max(xmax, p.x);
        ymin = std::min(ymin, p.y);
        ymax = std::max(ymax, p.y);
      }
    }
  }
  if (xmin > xmax) throw InputError("plot: series contain no episodes");
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) {
    ymax += 1;
    ymin -= 1;
  }
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
  auto sy = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };
  auto polyline = [&](const std::vector<detail::XY>& pts) {
    std::ostringstream os;
    for (const auto& p : pts) os << detail::fmt(sx(p.x)) << ',' << detail::fmt(sy(p.y)) << ' ';
    return os.str();
  };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"16\">"
      << title << "</text>\n";

  // axes with a handful of ticks
  svg << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\"" << H - mb
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
      << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double x = xmin + (xmax - xmin) * i / 4.0;
    const double y = ymin + (ymax - ymin) * i / 4.0;
    svg << "<text x=\"" << sx(x) << "\" y=\"" << H - mb + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
        << static_cast<long long>(std::llround(x)) << "</text>\n";
    svg << "<text x=\"" << ml - 8 << "\" y=\"" << sy(y) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << std::fixed
        << std::setprecision(1) << y << "</text>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << sy(y) << "\" x2=\"" << W - mr << "\" y2=\"" << sy(y)
        << "\" stroke=\"#dddddd\" stroke-width=\"0.5\"/>\n";
  }
  svg << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">env steps</text>\n";
  svg << "<text x=\"16\" y=\"" << (mt + H - mb) / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 "
         "16 "
      << (mt + H - mb) / 2 << ")\">episode return</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kColors[i % (sizeof kColors / sizeof kColors[0])];
    if (!prep[i].upper.empty()) {
      std::ostringstream band;
      for (const auto& p : prep[i].upper) band << detail::fmt(sx(p.x)) << ',' << detail::fmt(sy(p.y)) << ' ';
      for (auto it = prep[i].lower.rbegin(); it != prep[i].lower.rend(); ++it) {
        band << detail::fmt(sx(it->x)) << ',' << detail::fmt(sy(it->y)) << ' ';
      }
      svg << "<polygon points=\"" << band.str() << "\" fill=\"" << color
          << "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
    }
    for (const auto& trace : prep[i].traces) {
      svg << "<polyline points=\"" << polyline(trace) << "\" fill=\"none\" stroke=\"" << color
          << "\" stroke-opacity=\"0.3\" stroke-width=\"0.8\"/>\n";
    }
    svg << "<polyline points=\"" << polyline(prep[i].mean) << "\" fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n";
    svg << "<rect x=\"" << W - mr - 150 << "\" y=\"" << mt + 18.0 * i << "\" width=\"14\" height=\"4\" fill=\""
        << color << "\"/>\n";
    svg << "<text x=\"" << W - mr - 130 << "\" y=\"" << mt + 18.0 * i + 6
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << series[i].label << "</text>\n";
  }
  svg << "</svg>\n";

  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << svg.str();
  if (!f) throw IoError("write failed for '" + path + "'");
}

}  // namespace wmtl

// SPDX-License-Identifier: Apache-2.0
#include "dropping/plot.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "dropping/errors.hpp"

namespace dropping {

double PlotScale::x(double iteration) const {
  return frame.left + (iteration - x_min) / (x_max - x_min) * frame.plot_width();
}

double PlotScale::y(double value) const { return frame.top + (1.0 - value) * frame.plot_height(); }

double PlotScale::iteration_at(double px) const {
  return x_min + (px - frame.left) / frame.plot_width() * (x_max - x_min);
}

double PlotScale::value_at(double py) const { return 1.0 - (py - frame.top) / frame.plot_height(); }

PlotScale plot_scale(const std::vector<CurveRow>& rows, const PlotFrame& frame) {
  if (rows.empty()) throw InputError("plot: empty curve");
  PlotScale s;
  s.frame = frame;
  s.x_min = static_cast<double>(rows.front().iteration);
  s.x_max = static_cast<double>(rows.back().iteration);
  if (s.x_max <= s.x_min) s.x_max = s.x_min + 1.0;
  return s;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

struct Series {
  const char* id;
  const char* label;
  const char* colour;
  double CurveRow::*field;
};

constexpr Series kSeries[] = {
    {"series-error", "dev error", "#1f77b4", &CurveRow::error},
    {"series-smoothed", "smoothed error", "#ff7f0e", &CurveRow::smoothed},
    {"series-gamma", "gamma", "#2ca02c", &CurveRow::gamma},
};

}  // namespace

void emit_plot(const std::vector<CurveRow>& rows, std::ostream& os, const PlotFrame& frame) {
  const PlotScale s = plot_scale(rows, frame);
  const double x0 = frame.left, x1 = frame.left + frame.plot_width();
  const double y0 = frame.top + frame.plot_height(), y1 = frame.top;

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(frame.width) << "\" height=\""
     << num(frame.height) << "\" viewBox=\"0 0 " << num(frame.width) << ' ' << num(frame.height) << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<g id=\"axes\" stroke=\"black\" stroke-width=\"1\">\n";
  os << "<line x1=\"" << num(x0) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(x1) << "\" y2=\"" << num(y0) << "\"/>\n";
  os << "<line x1=\"" << num(x0) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(x0) << "\" y2=\"" << num(y1) << "\"/>\n";
  os << "</g>\n";

  os << "<g id=\"ticks\" font-family=\"sans-serif\" font-size=\"11\">\n";
  constexpr int kTicks = 5;
  for (int i = 0; i <= kTicks; ++i) {
    const double v = static_cast<double>(i) / kTicks;
    const double py = s.y(v);
    os << "<line x1=\"" << num(x0 - 4) << "\" y1=\"" << num(py) << "\" x2=\"" << num(x0) << "\" y2=\"" << num(py)
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << num(x0 - 8) << "\" y=\"" << num(py + 4) << "\" text-anchor=\"end\">" << num(v).substr(0, 3)
       << "</text>\n";
    const double it = s.x_min + v * (s.x_max - s.x_min);
    const double px = s.x(it);
    os << "<line x1=\"" << num(px) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(px) << "\" y2=\"" << num(y0 + 4)
       << "\" stroke=\"black\"/>\n";
    char label[32];
    std::snprintf(label, sizeof label, "%.0f", it);
    os << "<text x=\"" << num(px) << "\" y=\"" << num(y0 + 18) << "\" text-anchor=\"middle\">" << label << "</text>\n";
  }
  os << "</g>\n";
  os << "<text x=\"" << num((x0 + x1) / 2) << "\" y=\"" << num(frame.height - 15)
     << "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">iteration</text>\n";
  os << "<text x=\"18\" y=\"" << num((y0 + y1) / 2) << "\" font-family=\"sans-serif\" font-size=\"13\" "
     << "text-anchor=\"middle\" transform=\"rotate(-90 18 " << num((y0 + y1) / 2) << ")\">error / gamma</text>\n";

  for (const auto& series : kSeries) {
    os << "<polyline id=\"" << series.id << "\" fill=\"none\" stroke=\"" << series.colour
       << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double v = std::clamp(rows[i].*series.field, 0.0, 1.0);
      os << (i ? " " : "") << num(s.x(static_cast<double>(rows[i].iteration))) << ',' << num(s.y(v));
    }
    os << "\"/>\n";
  }

  os << "<g id=\"legend\" font-family=\"sans-serif\" font-size=\"12\">\n";
  double ly = frame.top + 10;
  for (const auto& series : kSeries) {
    const double lx = x1 + 15;
    os << "<line x1=\"" << num(lx) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(lx + 24) << "\" y2=\"" << num(ly)
       << "\" stroke=\"" << series.colour << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << num(lx + 30) << "\" y=\"" << num(ly + 4) << "\">" << series.label << "</text>\n";
    ly += 20;
  }
  os << "</g>\n</svg>\n";
}

void emit_plot(const std::string& curve_csv, const std::string& svg_path) {
  std::ifstream is(curve_csv);
  if (!is) throw InputError("cannot read curve " + curve_csv);
  const auto rows = read_curve_csv(is);
  if (rows.empty()) throw InputError("plot: curve " + curve_csv + " has no rows");
  std::ofstream os(svg_path);
  if (!os) throw InputError("cannot write plot " + svg_path);
  emit_plot(rows, os);
}

}  // namespace dropping

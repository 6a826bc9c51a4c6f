// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dropping/transfer.hpp"

namespace dropping {

struct PlotFrame {
  double width = 720.0;
  double height = 420.0;
  double left = 70.0;
  double right = 170.0;
  double top = 30.0;
  double bottom = 60.0;

  double plot_width() const { return width - left - right; }
  double plot_height() const { return height - top - bottom; }
};

/// Maps (iteration, value in [0, 1]) to SVG coordinates; the inverse is used by tests.
struct PlotScale {
  PlotFrame frame;
  double x_min = 0.0;
  double x_max = 1.0;

  double x(double iteration) const;
  double y(double value) const;
  double iteration_at(double px) const;
  double value_at(double py) const;
};

PlotScale plot_scale(const std::vector<CurveRow>& rows, const PlotFrame& frame = {});

/// Standalone SVG with one polyline per series (ids series-error, series-smoothed,
/// series-gamma), axes, ticks and a legend. Throws InputError on an empty curve.
void emit_plot(const std::vector<CurveRow>& rows, std::ostream& os, const PlotFrame& frame = {});
void emit_plot(const std::string& curve_csv, const std::string& svg_path);

}  // namespace dropping

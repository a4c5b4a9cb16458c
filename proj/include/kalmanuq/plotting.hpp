#pragma once

#include <string>
#include <vector>

namespace kalmanuq {

// One named line. xs and ys must have equal, nonzero length.
struct PlotSeries {
  std::string label;
  std::vector<double> xs;
  std::vector<double> ys;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotSeries> series;
  int width = 720;
  int height = 480;
};

// Affine data-to-pixel map of a plot: px = x * x_scale + x_offset and
// py = y * y_scale + y_offset (y_scale is negative, SVG y grows downward).
// Exposed so tests can recompute pixel coordinates from the sibling CSV and
// compare them against the written SVG exactly.
struct PlotTransform {
  double x_scale = 1.0;
  double x_offset = 0.0;
  double y_scale = -1.0;
  double y_offset = 0.0;

  double to_px_x(double x) const { return x * x_scale + x_offset; }
  double to_px_y(double y) const { return y * y_scale + y_offset; }
};

// The transform emit_svg_line_plot uses for this spec. Deterministic in the
// spec alone.
PlotTransform plot_transform(const PlotSpec& spec);

// Writes path_base + ".svg" (axes, tick marks, legend, one polyline per
// series; a single-point series becomes a circle marker) and the sibling
// path_base + ".csv" holding every plotted number. When all series share one
// x vector the CSV is the wide table `x,<label...>` with one row per x;
// otherwise it is long `series,x,y` rows. Returns the transform used. Throws
// ConfigError for empty or ragged series and IoError on write failure.
PlotTransform emit_svg_line_plot(const std::string& path_base,
                                 const PlotSpec& spec);

}  // namespace kalmanuq

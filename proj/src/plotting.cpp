#include "kalmanuq/plotting.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "kalmanuq/dataset_io.hpp"
#include "kalmanuq/errors.hpp"

namespace kalmanuq {

namespace {

// Plot box margins inside the canvas, in pixels.
constexpr double kMarginLeft = 64.0;
constexpr double kMarginRight = 20.0;
constexpr double kMarginTop = 36.0;
constexpr double kMarginBottom = 52.0;

constexpr const char* kPalette[] = {"#1f6fb2", "#d1495b", "#2e8b57",
                                    "#8e6bbf", "#c77d2e", "#3b3b3b"};
constexpr int kPaletteSize = 6;

bool csv_safe(const std::string& s) {
  return s.find_first_of(",\"\n\r") == std::string::npos;
}

void validate(const PlotSpec& spec) {
  if (spec.series.empty()) throw ConfigError("a plot needs at least one series");
  if (spec.width < 160 || spec.height < 120)
    throw ConfigError("plot canvas is too small");
  if (!csv_safe(spec.x_label))
    throw ConfigError("axis labels must not contain csv delimiters");
  for (std::size_t k = 0; k < spec.series.size(); ++k) {
    const PlotSeries& s = spec.series[k];
    if (!csv_safe(s.label))
      throw ConfigError("series labels must not contain csv delimiters");
    for (std::size_t l = 0; l < k; ++l)
      if (spec.series[l].label == s.label)
        throw ConfigError("duplicate series label: " + s.label);
    if (s.xs.empty()) throw ConfigError("empty plot series: " + s.label);
    if (s.xs.size() != s.ys.size())
      throw ConfigError("series x and y lengths differ: " + s.label);
    for (double v : s.xs)
      if (!std::isfinite(v))
        throw ConfigError("non-finite x value in series: " + s.label);
    for (double v : s.ys)
      if (!std::isfinite(v))
        throw ConfigError("non-finite y value in series: " + s.label);
  }
}

struct Range {
  double lo = 0.0;
  double hi = 1.0;
};

Range padded(double lo, double hi) {
  if (lo == hi) {
    // Degenerate extent, e.g. a single point or a constant series.
    const double pad = lo == 0.0 ? 1.0 : std::abs(lo) * 0.5;
    return {lo - pad, hi + pad};
  }
  const double pad = (hi - lo) * 0.05;
  return {lo - pad, hi + pad};
}

// Round tick positions covering [lo, hi]: steps of 1, 2 or 5 times a power
// of ten, aiming for about five intervals.
std::vector<double> tick_positions(double lo, double hi) {
  const double span = hi - lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double mult : {1.0, 2.0, 5.0, 10.0}) {
    if (mag * mult >= raw) {
      step = mag * mult;
      break;
    }
  }
  std::vector<double> ticks;
  const double first = std::ceil(lo / step) * step;
  for (double v = first; v <= hi + step * 1e-9; v += step)
    ticks.push_back(std::abs(v) < step * 1e-9 ? 0.0 : v);
  return ticks;
}

std::string tick_label(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

}  // namespace

PlotTransform plot_transform(const PlotSpec& spec) {
  validate(spec);
  double x_lo = std::numeric_limits<double>::infinity();
  double x_hi = -x_lo;
  double y_lo = x_lo;
  double y_hi = -x_lo;
  for (const PlotSeries& s : spec.series) {
    for (double v : s.xs) {
      x_lo = std::min(x_lo, v);
      x_hi = std::max(x_hi, v);
    }
    for (double v : s.ys) {
      y_lo = std::min(y_lo, v);
      y_hi = std::max(y_hi, v);
    }
  }
  const Range xr = padded(x_lo, x_hi);
  const Range yr = padded(y_lo, y_hi);

  const double box_w = spec.width - kMarginLeft - kMarginRight;
  const double box_h = spec.height - kMarginTop - kMarginBottom;

  PlotTransform t;
  t.x_scale = box_w / (xr.hi - xr.lo);
  t.x_offset = kMarginLeft - xr.lo * t.x_scale;
  t.y_scale = -box_h / (yr.hi - yr.lo);
  t.y_offset = kMarginTop - yr.hi * t.y_scale;
  return t;
}

PlotTransform emit_svg_line_plot(const std::string& path_base,
                                 const PlotSpec& spec) {
  const PlotTransform t = plot_transform(spec);

  // Sibling CSV first; the SVG is derived from the same numbers.
  {
    bool shared_x = true;
    for (const PlotSeries& s : spec.series)
      if (s.xs != spec.series.front().xs) {
        shared_x = false;
        break;
      }
    std::ofstream csv(path_base + ".csv");
    if (!csv) throw IoError("cannot open for writing: " + path_base + ".csv");
    if (shared_x) {
      csv << (spec.x_label.empty() ? std::string("x") : spec.x_label);
      for (const PlotSeries& s : spec.series) csv << ',' << s.label;
      csv << '\n';
      for (std::size_t i = 0; i < spec.series.front().xs.size(); ++i) {
        csv << format_value(spec.series.front().xs[i]);
        for (const PlotSeries& s : spec.series)
          csv << ',' << format_value(s.ys[i]);
        csv << '\n';
      }
    } else {
      csv << "series,x,y\n";
      for (const PlotSeries& s : spec.series)
        for (std::size_t i = 0; i < s.xs.size(); ++i)
          csv << s.label << ',' << format_value(s.xs[i]) << ','
              << format_value(s.ys[i]) << '\n';
    }
    if (!csv.good())
      throw IoError("failed writing plot csv: " + path_base + ".csv");
  }

  const double box_left = kMarginLeft;
  const double box_right = spec.width - kMarginRight;
  const double box_top = kMarginTop;
  const double box_bottom = spec.height - kMarginBottom;

  std::ofstream svg(path_base + ".svg");
  if (!svg) throw IoError("cannot open for writing: " + path_base + ".svg");
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width
      << "\" height=\"" << spec.height << "\" viewBox=\"0 0 " << spec.width
      << ' ' << spec.height << "\">\n";
  svg << "<rect width=\"" << spec.width << "\" height=\"" << spec.height
      << "\" fill=\"white\"/>\n";
  if (!spec.title.empty())
    svg << "<text x=\"" << spec.width / 2.0 << "\" y=\"22\" font-size=\"15\" "
        << "font-family=\"sans-serif\" text-anchor=\"middle\">"
        << xml_escape(spec.title) << "</text>\n";

  // Frame and ticks.
  svg << "<rect x=\"" << box_left << "\" y=\"" << box_top << "\" width=\""
      << box_right - box_left << "\" height=\"" << box_bottom - box_top
      << "\" fill=\"none\" stroke=\"#444\"/>\n";

  const double x_data_lo = (box_left - t.x_offset) / t.x_scale;
  const double x_data_hi = (box_right - t.x_offset) / t.x_scale;
  const double y_data_lo = (box_bottom - t.y_offset) / t.y_scale;
  const double y_data_hi = (box_top - t.y_offset) / t.y_scale;

  for (double v : tick_positions(x_data_lo, x_data_hi)) {
    const double px = t.to_px_x(v);
    svg << "<line x1=\"" << px << "\" y1=\"" << box_bottom << "\" x2=\"" << px
        << "\" y2=\"" << box_bottom + 5 << "\" stroke=\"#444\"/>\n";
    svg << "<text x=\"" << px << "\" y=\"" << box_bottom + 18
        << "\" font-size=\"11\" font-family=\"sans-serif\" "
        << "text-anchor=\"middle\">" << tick_label(v) << "</text>\n";
  }
  for (double v : tick_positions(y_data_lo, y_data_hi)) {
    const double py = t.to_px_y(v);
    svg << "<line x1=\"" << box_left - 5 << "\" y1=\"" << py << "\" x2=\""
        << box_left << "\" y2=\"" << py << "\" stroke=\"#444\"/>\n";
    svg << "<text x=\"" << box_left - 8 << "\" y=\"" << py + 4
        << "\" font-size=\"11\" font-family=\"sans-serif\" "
        << "text-anchor=\"end\">" << tick_label(v) << "</text>\n";
  }
  if (!spec.x_label.empty())
    svg << "<text x=\"" << (box_left + box_right) / 2.0 << "\" y=\""
        << spec.height - 14 << "\" font-size=\"13\" "
        << "font-family=\"sans-serif\" text-anchor=\"middle\">"
        << xml_escape(spec.x_label) << "</text>\n";
  if (!spec.y_label.empty())
    svg << "<text x=\"16\" y=\"" << (box_top + box_bottom) / 2.0
        << "\" font-size=\"13\" font-family=\"sans-serif\" "
        << "text-anchor=\"middle\" transform=\"rotate(-90 16 "
        << (box_top + box_bottom) / 2.0 << ")\">" << xml_escape(spec.y_label)
        << "</text>\n";

  // Data, one polyline (or marker) per series. Pixel coordinates are the
  // plot transform of the CSV values, printed round-trip exact so the
  // parse-back comparison can be bitwise.
  for (std::size_t k = 0; k < spec.series.size(); ++k) {
    const PlotSeries& s = spec.series[k];
    const char* color = kPalette[k % kPaletteSize];
    if (s.xs.size() == 1) {
      svg << "<circle cx=\"" << format_value(t.to_px_x(s.xs[0])) << "\" cy=\""
          << format_value(t.to_px_y(s.ys[0])) << "\" r=\"3.5\" fill=\""
          << color << "\"/>\n";
      continue;
    }
    svg << "<polyline fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"1.6\" points=\"";
    for (std::size_t i = 0; i < s.xs.size(); ++i) {
      if (i) svg << ' ';
      svg << format_value(t.to_px_x(s.xs[i])) << ','
          << format_value(t.to_px_y(s.ys[i]));
    }
    svg << "\"/>\n";
  }

  // Legend, top right inside the frame.
  const double legend_x = box_right - 150.0;
  double legend_y = box_top + 14.0;
  for (std::size_t k = 0; k < spec.series.size(); ++k) {
    const char* color = kPalette[k % kPaletteSize];
    svg << "<line x1=\"" << legend_x << "\" y1=\"" << legend_y << "\" x2=\""
        << legend_x + 22 << "\" y2=\"" << legend_y << "\" stroke=\"" << color
        << "\" stroke-width=\"1.6\"/>\n";
    svg << "<text x=\"" << legend_x + 28 << "\" y=\"" << legend_y + 4
        << "\" font-size=\"12\" font-family=\"sans-serif\">"
        << xml_escape(spec.series[k].label) << "</text>\n";
    legend_y += 16.0;
  }

  svg << "</svg>\n";
  if (!svg.good())
    throw IoError("failed writing plot svg: " + path_base + ".svg");
  return t;
}

}  // namespace kalmanuq

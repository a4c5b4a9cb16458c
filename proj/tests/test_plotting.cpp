#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "kalmanuq/dataset_io.hpp"
#include "kalmanuq/errors.hpp"
#include "kalmanuq/plotting.hpp"

using namespace kalmanuq;

namespace {

namespace fs = std::filesystem;

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t n = 0, pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    ++n;
    pos += needle.size();
  }
  return n;
}

struct TempBase {
  std::string base;
  explicit TempBase(const char* name)
      : base((fs::temp_directory_path() / name).string()) {}
  ~TempBase() {
    fs::remove(base + ".svg");
    fs::remove(base + ".csv");
  }
};

}  // namespace

TEST_CASE("shared-x series produce a wide table with one row per step") {
  PlotSpec spec;
  spec.title = "demo";
  spec.x_label = "t";
  spec.y_label = "v";
  PlotSeries a{"first", {1, 2, 3, 4}, {0.5, 0.25, 0.125, 0.0625}};
  PlotSeries b{"second", {1, 2, 3, 4}, {-1.0, 1.0, -1.0, 1.0}};
  spec.series = {a, b};

  TempBase tmp("kuq_plot_wide");
  PlotTransform t = emit_svg_line_plot(tmp.base, spec);

  const std::string csv = slurp(tmp.base + ".csv");
  std::istringstream lines(csv);
  std::string header;
  std::getline(lines, header);
  CHECK(header == "t,first,second");
  int rows = 0;
  std::string line;
  std::vector<std::array<double, 3>> parsed;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    ++rows;
    std::array<double, 3> vals{};
    std::size_t start = 0;
    for (int c = 0; c < 3; ++c) {
      std::size_t comma = line.find(',', start);
      const std::string cell = comma == std::string::npos
                                   ? line.substr(start)
                                   : line.substr(start, comma - start);
      vals[c] = std::stod(cell);
      start = comma + 1;
    }
    parsed.push_back(vals);
  }
  CHECK(rows == 4);
  // Round trip is exact, not approximate.
  for (int i = 0; i < 4; ++i) {
    CHECK(parsed[i][0] == a.xs[i]);
    CHECK(parsed[i][1] == a.ys[i]);
    CHECK(parsed[i][2] == b.ys[i]);
  }

  // The SVG is recomputable from the CSV: every plotted point appears at
  // exactly the pixel the affine transform predicts.
  const std::string svg = slurp(tmp.base + ".svg");
  CHECK(count_of(svg, "<polyline") >= 2);
  CHECK(svg.find("demo") != std::string::npos);
  CHECK(svg.find("first") != std::string::npos);
  CHECK(svg.find("second") != std::string::npos);
  for (int i = 0; i < 4; ++i) {
    const std::string pt = format_value(t.to_px_x(parsed[i][0])) + "," +
                           format_value(t.to_px_y(parsed[i][1]));
    INFO("missing point ", pt);
    CHECK(svg.find(pt) != std::string::npos);
  }

  // The transform is affine with the documented orientation.
  CHECK(t.x_scale > 0.0);
  CHECK(t.y_scale < 0.0);
  CHECK(plot_transform(spec).x_scale == t.x_scale);
  CHECK(plot_transform(spec).y_offset == t.y_offset);
  const double mid = t.to_px_x(2.5);
  CHECK(mid == doctest::Approx(0.5 * (t.to_px_x(2.0) + t.to_px_x(3.0))).epsilon(1e-12));
}

TEST_CASE("mixed-x series fall back to the long table") {
  PlotSpec spec;
  spec.title = "long";
  PlotSeries a{"a", {1, 2, 3}, {1.0, 2.0, 3.0}};
  PlotSeries b{"b", {0.5, 1.5}, {-1.0, -2.0}};
  spec.series = {a, b};

  TempBase tmp("kuq_plot_long");
  emit_svg_line_plot(tmp.base, spec);
  const std::string csv = slurp(tmp.base + ".csv");
  std::istringstream lines(csv);
  std::string header;
  std::getline(lines, header);
  CHECK(header == "series,x,y");
  int rows = 0;
  std::string line;
  while (std::getline(lines, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 5);
  CHECK(csv.find("a,1,1") != std::string::npos);
  CHECK(csv.find("b,0.5,-1") != std::string::npos);
}

TEST_CASE("single-point series are drawn as markers") {
  PlotSpec spec;
  spec.title = "point";
  spec.series = {PlotSeries{"only", {2.0}, {3.0}}};
  TempBase tmp("kuq_plot_point");
  emit_svg_line_plot(tmp.base, spec);
  const std::string svg = slurp(tmp.base + ".svg");
  CHECK(svg.find("<circle") != std::string::npos);
  CHECK(count_of(svg, "<polyline") == 0);
}

TEST_CASE("degenerate ranges still produce a usable scale") {
  PlotSpec spec;
  spec.title = "flat";
  spec.series = {PlotSeries{"c", {1, 2, 3}, {5.0, 5.0, 5.0}}};
  TempBase tmp("kuq_plot_flat");
  PlotTransform t = emit_svg_line_plot(tmp.base, spec);
  CHECK(std::isfinite(t.y_scale));
  CHECK(t.y_scale != 0.0);
}

TEST_CASE("unplottable specs are rejected") {
  TempBase tmp("kuq_plot_bad");
  PlotSpec empty;
  empty.title = "empty";
  CHECK_THROWS_AS(emit_svg_line_plot(tmp.base, empty), ConfigError);

  PlotSpec ragged;
  ragged.series = {PlotSeries{"r", {1, 2}, {1.0}}};
  CHECK_THROWS_AS(emit_svg_line_plot(tmp.base, ragged), ConfigError);

  PlotSpec dup;
  dup.series = {PlotSeries{"s", {1}, {1.0}}, PlotSeries{"s", {1}, {2.0}}};
  CHECK_THROWS_AS(emit_svg_line_plot(tmp.base, dup), ConfigError);

  PlotSpec comma;
  comma.series = {PlotSeries{"bad,label", {1}, {1.0}}};
  CHECK_THROWS_AS(emit_svg_line_plot(tmp.base, comma), ConfigError);

  PlotSpec inf_y;
  inf_y.series = {PlotSeries{"i", {1, 2}, {1.0, INFINITY}}};
  CHECK_THROWS_AS(emit_svg_line_plot(tmp.base, inf_y), ConfigError);
}

TEST_CASE("value formatting survives a text round trip at full precision") {
  // Subnormals are excluded: glibc's stod refuses them even though the
  // formatter emits them exactly.
  for (double v : {0.1, -1.0 / 3.0, 1e-17, 123456.789012345678, 2.5e300,
                   2.3e-308, 0.0}) {
    CHECK(std::stod(format_value(v)) == v);
  }
  CHECK(format_value(1.0) == "1");
}

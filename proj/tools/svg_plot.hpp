#pragma once

// Minimal self-contained SVG charts for run artifacts.

#include <string>
#include <vector>

namespace cdadp::cli {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct LinePlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  // Plot sign(y) log10(1 + |y|) so curves spanning decades stay readable.
  bool symlog = false;
  std::vector<Series> series;
};

std::string render_svg(const LinePlot& plot);

struct BoxGroup {
  std::string label;
  std::vector<double> values;
};

struct BoxPlot {
  std::string title;
  std::string y_label;
  bool symlog = false;
  std::vector<BoxGroup> groups;
};

// Median, quartiles and min/max whiskers per group, with every value drawn as a dot.
std::string render_svg(const BoxPlot& plot);

}  // namespace cdadp::cli

#pragma once

#include <string>
#include <vector>

namespace percflow {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotLabels {
  std::string title;
  std::string x_label;
  std::string y_label;
};

// Self-contained SVG documents. Output depends only on the inputs.
std::string line_plot_svg(const PlotLabels& labels, const std::vector<Series>& series);
// Points per series; `curves` are drawn as lines on top (e.g. a fit).
std::string scatter_svg(const PlotLabels& labels, const std::vector<Series>& points,
                        const std::vector<Series>& curves = {});

}  // namespace percflow

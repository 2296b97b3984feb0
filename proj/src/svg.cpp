#include "percflow/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "percflow/errors.hpp"

namespace percflow {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 420.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 150.0;  // legend column
constexpr double kTop = 40.0;
constexpr double kBottom = 55.0;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Frame {
  double x0, x1, y0, y1;

  double px(double x) const {
    return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight);
  }
  double py(double y) const {
    return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom);
  }
};

Frame fit_frame(const std::vector<const Series*>& all) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0;
  double y0 = x0, y1 = -x0;
  for (const Series* s : all) {
    if (s->x.size() != s->y.size()) throw ShapeError("series '" + s->label + "' has ragged x/y");
    for (std::size_t i = 0; i < s->x.size(); ++i) {
      if (!std::isfinite(s->x[i]) || !std::isfinite(s->y[i])) continue;
      x0 = std::min(x0, s->x[i]);
      x1 = std::max(x1, s->x[i]);
      y0 = std::min(y0, s->y[i]);
      y1 = std::max(y1, s->y[i]);
    }
  }
  if (!std::isfinite(x0)) return {0.0, 1.0, 0.0, 1.0};
  if (x1 - x0 < 1e-12) { x0 -= 0.5; x1 += 0.5; }
  if (y1 - y0 < 1e-12) { y0 -= 0.5; y1 += 0.5; }
  const double pad = 0.05 * (y1 - y0);
  return {x0, x1, y0 - pad, y1 + pad};
}

void axes(std::ostringstream& out, const Frame& f, const PlotLabels& labels) {
  const double l = kLeft, r = kWidth - kRight, t = kTop, b = kHeight - kBottom;
  out << "<rect x=\"" << fmt(l) << "\" y=\"" << fmt(t) << "\" width=\"" << fmt(r - l)
      << "\" height=\"" << fmt(b - t) << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = f.x0 + (f.x1 - f.x0) * k / 4.0;
    const double yv = f.y0 + (f.y1 - f.y0) * k / 4.0;
    out << "<line x1=\"" << fmt(f.px(xv)) << "\" y1=\"" << fmt(b) << "\" x2=\"" << fmt(f.px(xv))
        << "\" y2=\"" << fmt(b + 5) << "\" stroke=\"#333\"/>\n";
    out << "<text x=\"" << fmt(f.px(xv)) << "\" y=\"" << fmt(b + 18)
        << "\" font-size=\"11\" text-anchor=\"middle\">" << tick_label(xv) << "</text>\n";
    out << "<line x1=\"" << fmt(l - 5) << "\" y1=\"" << fmt(f.py(yv)) << "\" x2=\"" << fmt(l)
        << "\" y2=\"" << fmt(f.py(yv)) << "\" stroke=\"#333\"/>\n";
    out << "<text x=\"" << fmt(l - 8) << "\" y=\"" << fmt(f.py(yv) + 4)
        << "\" font-size=\"11\" text-anchor=\"end\">" << tick_label(yv) << "</text>\n";
  }
  out << "<text x=\"" << fmt((l + r) / 2) << "\" y=\"" << fmt(kHeight - 12)
      << "\" font-size=\"13\" text-anchor=\"middle\">" << escape(labels.x_label) << "</text>\n";
  out << "<text x=\"16\" y=\"" << fmt((t + b) / 2) << "\" font-size=\"13\" text-anchor=\"middle\""
      << " transform=\"rotate(-90 16 " << fmt((t + b) / 2) << ")\">" << escape(labels.y_label)
      << "</text>\n";
  out << "<text x=\"" << fmt(kWidth / 2) << "\" y=\"24\" font-size=\"15\" text-anchor=\"middle\">"
      << escape(labels.title) << "</text>\n";
}

void legend(std::ostringstream& out, const std::vector<std::string>& names,
            const std::vector<bool>& as_line) {
  for (std::size_t k = 0; k < names.size(); ++k) {
    const double y = kTop + 14 + 18.0 * k;
    const double x = kWidth - kRight + 12;
    const char* color = kPalette[k % std::size(kPalette)];
    if (as_line[k]) {
      out << "<line x1=\"" << fmt(x) << "\" y1=\"" << fmt(y - 4) << "\" x2=\"" << fmt(x + 18)
          << "\" y2=\"" << fmt(y - 4) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    } else {
      out << "<circle cx=\"" << fmt(x + 9) << "\" cy=\"" << fmt(y - 4) << "\" r=\"3\" fill=\""
          << color << "\"/>\n";
    }
    out << "<text x=\"" << fmt(x + 24) << "\" y=\"" << fmt(y) << "\" font-size=\"11\">"
        << escape(names[k]) << "</text>\n";
  }
}

void polyline(std::ostringstream& out, const Frame& f, const Series& s, const char* color) {
  out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
  bool first = true;
  for (std::size_t i = 0; i < s.x.size(); ++i) {
    if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
    out << (first ? "" : " ") << fmt(f.px(s.x[i])) << ',' << fmt(f.py(s.y[i]));
    first = false;
  }
  out << "\"/>\n";
}

std::string header() {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kWidth) + "\" height=\"" +
         fmt(kHeight) + "\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

}  // namespace

std::string line_plot_svg(const PlotLabels& labels, const std::vector<Series>& series) {
  std::vector<const Series*> all;
  for (const auto& s : series) all.push_back(&s);
  const Frame f = fit_frame(all);
  std::ostringstream out;
  out << header();
  axes(out, f, labels);
  std::vector<std::string> names;
  for (std::size_t k = 0; k < series.size(); ++k) {
    polyline(out, f, series[k], kPalette[k % std::size(kPalette)]);
    names.push_back(series[k].label);
  }
  legend(out, names, std::vector<bool>(names.size(), true));
  out << "</svg>\n";
  return out.str();
}

std::string scatter_svg(const PlotLabels& labels, const std::vector<Series>& points,
                        const std::vector<Series>& curves) {
  std::vector<const Series*> all;
  for (const auto& s : points) all.push_back(&s);
  for (const auto& s : curves) all.push_back(&s);
  const Frame f = fit_frame(all);
  std::ostringstream out;
  out << header();
  axes(out, f, labels);
  std::vector<std::string> names;
  std::vector<bool> as_line;
  std::size_t k = 0;
  for (const auto& s : points) {
    const char* color = kPalette[k++ % std::size(kPalette)];
    out << "<g fill=\"" << color << "\" fill-opacity=\"0.5\">\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      out << "<circle cx=\"" << fmt(f.px(s.x[i])) << "\" cy=\"" << fmt(f.py(s.y[i]))
          << "\" r=\"1.8\"/>\n";
    }
    out << "</g>\n";
    names.push_back(s.label);
    as_line.push_back(false);
  }
  for (const auto& s : curves) {
    polyline(out, f, s, kPalette[k++ % std::size(kPalette)]);
    names.push_back(s.label);
    as_line.push_back(true);
  }
  legend(out, names, as_line);
  out << "</svg>\n";
  return out.str();
}

}  // namespace percflow

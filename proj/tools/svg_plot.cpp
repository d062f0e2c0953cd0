#include "svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace cdadp::cli {

namespace {

constexpr double kWidth = 720.0, kHeight = 440.0;
constexpr double kLeft = 80.0, kRight = 170.0, kTop = 40.0, kBottom = 60.0;

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

double transform(double v, bool symlog) {
  return symlog ? std::copysign(std::log10(1.0 + std::abs(v)), v) : v;
}

double inverse(double t, bool symlog) {
  return symlog ? std::copysign(std::pow(10.0, std::abs(t)) - 1.0, t) : t;
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

std::string num(double v) {
  std::ostringstream ss;
  ss << std::setprecision(4) << v;
  return ss.str();
}

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

void widen(double& lo, double& hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
}

void header(std::ostringstream& s, const std::string& title) {
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
    << "</text>\n";
}

void y_axis(std::ostringstream& s, const Frame& f, bool symlog, const std::string& label) {
  s << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kHeight - kBottom
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double t = f.y0 + (f.y1 - f.y0) * i / 5.0;
    const double y = f.py(t);
    s << "<line x1=\"" << kLeft - 4 << "\" y1=\"" << y << "\" x2=\"" << kWidth - kRight << "\" y2=\"" << y
      << "\" stroke=\"#dddddd\"/>\n";
    s << "<text x=\"" << kLeft - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << num(inverse(t, symlog))
      << "</text>\n";
  }
  s << "<text transform=\"translate(18," << (kTop + kHeight - kBottom) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(label + (symlog ? " (symlog)" : "")) << "</text>\n";
}

}  // namespace

std::string render_svg(const LinePlot& plot) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : plot.series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      const double t = transform(s.y[i], plot.symlog);
      y0 = std::min(y0, t);
      y1 = std::max(y1, t);
    }
  }
  widen(x0, x1);
  widen(y0, y1);
  const Frame f{x0, x1, y0, y1};

  std::ostringstream s;
  header(s, plot.title);
  y_axis(s, f, plot.symlog, plot.y_label);
  s << "<line x1=\"" << kLeft << "\" y1=\"" << kHeight - kBottom << "\" x2=\"" << kWidth - kRight << "\" y2=\""
    << kHeight - kBottom << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double x = x0 + (x1 - x0) * i / 5.0;
    s << "<text x=\"" << f.px(x) << "\" y=\"" << kHeight - kBottom + 16 << "\" text-anchor=\"middle\">" << num(x)
      << "</text>\n";
  }
  s << "<text x=\"" << (kLeft + kWidth - kRight) / 2 << "\" y=\"" << kHeight - 16 << "\" text-anchor=\"middle\">"
    << escape(plot.x_label) << "</text>\n";

  for (std::size_t k = 0; k < plot.series.size(); ++k) {
    const auto& ser = plot.series[k];
    const char* color = kColors[k % std::size(kColors)];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < ser.x.size() && i < ser.y.size(); ++i) {
      if (!std::isfinite(ser.y[i])) continue;
      s << f.px(ser.x[i]) << ',' << f.py(transform(ser.y[i], plot.symlog)) << ' ';
    }
    s << "\"/>\n";
    const double ly = kTop + 10 + 18.0 * static_cast<double>(k);
    s << "<line x1=\"" << kWidth - kRight + 12 << "\" y1=\"" << ly << "\" x2=\"" << kWidth - kRight + 36 << "\" y2=\""
      << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << kWidth - kRight + 42 << "\" y=\"" << ly + 4 << "\">" << escape(ser.label) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string render_svg(const BoxPlot& plot) {
  double y0 = std::numeric_limits<double>::infinity(), y1 = -y0;
  for (const auto& g : plot.groups) {
    for (double v : g.values) {
      if (!std::isfinite(v)) continue;
      y0 = std::min(y0, transform(v, plot.symlog));
      y1 = std::max(y1, transform(v, plot.symlog));
    }
  }
  widen(y0, y1);
  const double n = static_cast<double>(std::max<std::size_t>(plot.groups.size(), 1));
  const Frame f{0.0, n, y0, y1};

  std::ostringstream s;
  header(s, plot.title);
  y_axis(s, f, plot.symlog, plot.y_label);
  for (std::size_t k = 0; k < plot.groups.size(); ++k) {
    std::vector<double> v;
    for (double x : plot.groups[k].values) {
      if (std::isfinite(x)) v.push_back(transform(x, plot.symlog));
    }
    const double cx = f.px(static_cast<double>(k) + 0.5);
    const double half = 0.25 * (f.px(1.0) - f.px(0.0));
    const char* color = kColors[k % std::size(kColors)];
    s << "<text x=\"" << cx << "\" y=\"" << kHeight - kBottom + 16 << "\" text-anchor=\"middle\">"
      << escape(plot.groups[k].label) << "</text>\n";
    if (v.empty()) continue;
    std::sort(v.begin(), v.end());
    auto q = [&](double p) {
      const double pos = p * static_cast<double>(v.size() - 1);
      const auto i = static_cast<std::size_t>(pos);
      const double frac = pos - static_cast<double>(i);
      return i + 1 < v.size() ? v[i] * (1.0 - frac) + v[i + 1] * frac : v[i];
    };
    s << "<line x1=\"" << cx << "\" y1=\"" << f.py(v.front()) << "\" x2=\"" << cx << "\" y2=\"" << f.py(v.back())
      << "\" stroke=\"" << color << "\"/>\n";
    s << "<rect x=\"" << cx - half << "\" y=\"" << f.py(q(0.75)) << "\" width=\"" << 2 * half << "\" height=\""
      << std::max(1.0, f.py(q(0.25)) - f.py(q(0.75))) << "\" fill=\"" << color
      << "\" fill-opacity=\"0.25\" stroke=\"" << color << "\"/>\n";
    s << "<line x1=\"" << cx - half << "\" y1=\"" << f.py(q(0.5)) << "\" x2=\"" << cx + half << "\" y2=\""
      << f.py(q(0.5)) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    for (double x : v) {
      s << "<circle cx=\"" << cx << "\" cy=\"" << f.py(x) << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace cdadp::cli

#include "trainspeed/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace trainspeed::svg {

namespace {

constexpr double kWidth = 1200.0;
constexpr double kHeight = 400.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 1010.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 350.0;

std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  std::string s = buf;
  if (s == "-0.00" || s == "-0.0" || s == "-0") s.erase(0, 1);
  return s;
}

std::string tick_label(double v, double step) {
  int digits = 0;
  while (digits < 6 && std::abs(step * std::pow(10.0, digits) - std::round(step * std::pow(10.0, digits))) > 1e-6) {
    ++digits;
  }
  return fixed(v, digits);
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void widen() {
    if (!(lo < hi)) {
      lo -= 1.0;
      hi += 1.0;
    }
  }
};

}  // namespace

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
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

std::vector<double> ticks(double lo, double hi, int target) {
  if (!(hi > lo) || target < 1) return {lo};
  const double raw = (hi - lo) / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (step >= raw) break;
  }
  std::vector<double> out;
  for (double v = std::ceil(lo / step - 1e-9) * step; v <= hi + step * 1e-9; v += step) {
    out.push_back(std::abs(v) < step * 1e-9 ? 0.0 : v);
  }
  return out;
}

Chart line_chart(const std::vector<Series>& series, const ChartOptions& options) {
  Chart chart;
  std::vector<const Series*> drawn;
  Range xr, yr;
  for (const auto& s : series) {
    std::size_t finite = 0;
    const std::size_t n = std::min(s.x.size(), s.y.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) ++finite;
    }
    if (finite < 2) {
      chart.warnings.push_back("series '" + s.label + "' has " + std::to_string(finite) +
                               " point(s) and was omitted");
      continue;
    }
    drawn.push_back(&s);
    for (std::size_t i = 0; i < n; ++i) {
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) {
        xr.add(s.x[i]);
        yr.add(s.y[i]);
      }
    }
  }
  if (drawn.empty()) {
    xr = {0.0, 1.0};
    yr = {0.0, 1.0};
  }
  if (options.zero_line) yr.add(0.0);
  xr.widen();
  yr.widen();
  const double pad = 0.05 * (yr.hi - yr.lo);
  yr.lo -= pad;
  yr.hi += pad;

  auto px = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * (kRight - kLeft); };
  auto py = [&](double y) { return kBottom - (y - yr.lo) / (yr.hi - yr.lo) * (kBottom - kTop); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << fixed(kWidth, 0) << ' ' << fixed(kHeight, 0)
    << "\" width=\"" << fixed(kWidth, 0) << "\" height=\"" << fixed(kHeight, 0) << "\">\n";
  o << "<rect x=\"0\" y=\"0\" width=\"1200\" height=\"400\" fill=\"#ffffff\"/>\n";
  o << "<text x=\"" << fixed((kLeft + kRight) / 2, 0) << "\" y=\"24\" text-anchor=\"middle\" "
    << "font-family=\"sans-serif\" font-size=\"16\">" << escape(options.title) << "</text>\n";

  o << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333333\">\n";
  const auto xt = ticks(xr.lo, xr.hi);
  const double xstep = xt.size() > 1 ? xt[1] - xt[0] : 1.0;
  for (double v : xt) {
    o << "<line x1=\"" << fixed(px(v)) << "\" y1=\"" << fixed(kTop) << "\" x2=\"" << fixed(px(v)) << "\" y2=\""
      << fixed(kBottom) << "\" stroke=\"#eeeeee\"/>\n";
    o << "<text x=\"" << fixed(px(v)) << "\" y=\"" << fixed(kBottom + 16) << "\" text-anchor=\"middle\">"
      << tick_label(v, xstep) << "</text>\n";
  }
  const auto yt = ticks(yr.lo, yr.hi);
  const double ystep = yt.size() > 1 ? yt[1] - yt[0] : 1.0;
  for (double v : yt) {
    o << "<line x1=\"" << fixed(kLeft) << "\" y1=\"" << fixed(py(v)) << "\" x2=\"" << fixed(kRight) << "\" y2=\""
      << fixed(py(v)) << "\" stroke=\"#eeeeee\"/>\n";
    o << "<text x=\"" << fixed(kLeft - 6) << "\" y=\"" << fixed(py(v) + 4) << "\" text-anchor=\"end\">"
      << tick_label(v, ystep) << "</text>\n";
  }
  o << "</g>\n";
  if (options.zero_line) {
    o << "<line x1=\"" << fixed(kLeft) << "\" y1=\"" << fixed(py(0.0)) << "\" x2=\"" << fixed(kRight) << "\" y2=\""
      << fixed(py(0.0)) << "\" stroke=\"#999999\"/>\n";
  }
  o << "<line x1=\"" << fixed(kLeft) << "\" y1=\"" << fixed(kBottom) << "\" x2=\"" << fixed(kRight) << "\" y2=\""
    << fixed(kBottom) << "\" stroke=\"#000000\"/>\n";
  o << "<line x1=\"" << fixed(kLeft) << "\" y1=\"" << fixed(kTop) << "\" x2=\"" << fixed(kLeft) << "\" y2=\""
    << fixed(kBottom) << "\" stroke=\"#000000\"/>\n";
  o << "<text x=\"" << fixed((kLeft + kRight) / 2, 0) << "\" y=\"390\" text-anchor=\"middle\" "
    << "font-family=\"sans-serif\" font-size=\"12\">" << escape(options.x_label) << "</text>\n";
  o << "<text x=\"16\" y=\"" << fixed((kTop + kBottom) / 2, 0) << "\" text-anchor=\"middle\" "
    << "font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 " << fixed((kTop + kBottom) / 2, 0)
    << ")\">" << escape(options.y_label) << "</text>\n";

  for (const auto* s : drawn) {
    o << "<polyline fill=\"none\" stroke=\"" << escape(s->color) << "\" stroke-width=\"1.2\"";
    if (s->dashed) o << " stroke-dasharray=\"4 3\"";
    o << " points=\"";
    bool first = true;
    const std::size_t n = std::min(s->x.size(), s->y.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(s->x[i]) || !std::isfinite(s->y[i])) continue;
      if (!first) o << ' ';
      o << fixed(px(s->x[i])) << ',' << fixed(py(s->y[i]));
      first = false;
    }
    o << "\"><title>" << escape(s->label) << "</title></polyline>\n";
  }

  o << "<g font-family=\"sans-serif\" font-size=\"12\">\n";
  double ly = kTop + 10;
  for (const auto* s : drawn) {
    o << "<line x1=\"1030\" y1=\"" << fixed(ly) << "\" x2=\"1060\" y2=\"" << fixed(ly) << "\" stroke=\""
      << escape(s->color) << "\" stroke-width=\"2\"" << (s->dashed ? " stroke-dasharray=\"4 3\"" : "") << "/>\n";
    o << "<text x=\"1066\" y=\"" << fixed(ly + 4) << "\">" << escape(s->label) << "</text>\n";
    ly += 20;
  }
  o << "</g>\n</svg>\n";
  chart.markup = o.str();
  return chart;
}

}  // namespace trainspeed::svg

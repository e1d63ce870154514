#include "hiersurp/plot.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "hiersurp/common.h"
#include "hiersurp/csv.h"

namespace hiersurp {

namespace {

std::string xml_escape(const std::string& s) {
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
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

// Round step (1, 2 or 5 times a power of ten) giving about `n` ticks.
double nice_step(double span, int n) {
  const double raw = span / n;
  const double p = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (m * p >= raw) return m * p;
  }
  return 10.0 * p;
}

struct Range {
  double lo = 0.0, hi = 1.0;
};

Range padded(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) return {0.0, 1.0};
  if (hi - lo < 1e-12) {
    const double w = std::max(1.0, std::abs(lo) * 0.1);
    return {lo - w, hi + w};
  }
  const double pad = 0.08 * (hi - lo);
  return {lo - pad, hi + pad};
}

const char* kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

}  // namespace

std::string scatter_svg(const std::vector<PlotPoint>& points, const PlotSpec& spec) {
  const double left = 80, right = 150, top = 40, bottom = 60;
  const double w = spec.width - left - right, h = spec.height - top - bottom;
  double x_lo = INFINITY, x_hi = -INFINITY, y_lo = INFINITY, y_hi = -INFINITY;
  for (const PlotPoint& p : points) {
    x_lo = std::min(x_lo, p.x - p.x_sd);
    x_hi = std::max(x_hi, p.x + p.x_sd);
    y_lo = std::min(y_lo, p.y - p.y_sd);
    y_hi = std::max(y_hi, p.y + p.y_sd);
  }
  const Range xr = padded(x_lo, x_hi), yr = padded(y_lo, y_hi);
  auto sx = [&](double x) { return left + (x - xr.lo) / (xr.hi - xr.lo) * w; };
  auto sy = [&](double y) { return top + (1.0 - (y - yr.lo) / (yr.hi - yr.lo)) * h; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\""
    << spec.height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << num(left + w / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">"
    << xml_escape(spec.title) << "</text>\n";
  o << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(w)
    << "\" height=\"" << num(h) << "\" fill=\"none\" stroke=\"black\"/>\n";
  // Ticks and grid.
  const double xs = nice_step(xr.hi - xr.lo, 6), ys = nice_step(yr.hi - yr.lo, 6);
  for (double t = std::ceil(xr.lo / xs) * xs; t <= xr.hi; t += xs) {
    o << "<line x1=\"" << num(sx(t)) << "\" y1=\"" << num(top) << "\" x2=\"" << num(sx(t))
      << "\" y2=\"" << num(top + h) << "\" stroke=\"#dddddd\"/>\n";
    o << "<text x=\"" << num(sx(t)) << "\" y=\"" << num(top + h + 16)
      << "\" text-anchor=\"middle\">" << tick(std::abs(t) < xs * 1e-9 ? 0.0 : t) << "</text>\n";
  }
  for (double t = std::ceil(yr.lo / ys) * ys; t <= yr.hi; t += ys) {
    o << "<line x1=\"" << num(left) << "\" y1=\"" << num(sy(t)) << "\" x2=\"" << num(left + w)
      << "\" y2=\"" << num(sy(t)) << "\" stroke=\"#dddddd\"/>\n";
    o << "<text x=\"" << num(left - 6) << "\" y=\"" << num(sy(t) + 4)
      << "\" text-anchor=\"end\">" << tick(std::abs(t) < ys * 1e-9 ? 0.0 : t) << "</text>\n";
  }
  o << "<text x=\"" << num(left + w / 2) << "\" y=\"" << num(spec.height - 16)
    << "\" text-anchor=\"middle\">" << xml_escape(spec.x_label) << "</text>\n";
  o << "<text transform=\"translate(20," << num(top + h / 2)
    << ") rotate(-90)\" text-anchor=\"middle\">" << xml_escape(spec.y_label) << "</text>\n";
  // Series colours in order of first appearance.
  std::map<std::string, int> colour;
  std::vector<std::string> order;
  for (const PlotPoint& p : points) {
    if (colour.emplace(p.series, static_cast<int>(order.size()) % 6).second) {
      order.push_back(p.series);
    }
  }
  for (const PlotPoint& p : points) {
    const char* c = kColours[colour[p.series]];
    const double px = sx(p.x), py = sy(p.y);
    if (p.x_sd > 0) {
      o << "<line x1=\"" << num(sx(p.x - p.x_sd)) << "\" y1=\"" << num(py) << "\" x2=\""
        << num(sx(p.x + p.x_sd)) << "\" y2=\"" << num(py) << "\" stroke=\"" << c << "\"/>\n";
    }
    if (p.y_sd > 0) {
      o << "<line x1=\"" << num(px) << "\" y1=\"" << num(sy(p.y - p.y_sd)) << "\" x2=\""
        << num(px) << "\" y2=\"" << num(sy(p.y + p.y_sd)) << "\" stroke=\"" << c << "\"/>\n";
    }
    o << "<circle cx=\"" << num(px) << "\" cy=\"" << num(py) << "\" r=\"4\" fill=\"" << c
      << "\"/>\n";
    if (!p.label.empty()) {
      o << "<text x=\"" << num(px + 6) << "\" y=\"" << num(py - 6) << "\" font-size=\"10\">"
        << xml_escape(p.label) << "</text>\n";
    }
  }
  for (std::size_t i = 0; i < order.size(); ++i) {
    const double ly = top + 10 + 18.0 * static_cast<double>(i);
    o << "<circle cx=\"" << num(left + w + 20) << "\" cy=\"" << num(ly) << "\" r=\"4\" fill=\""
      << kColours[colour[order[i]]] << "\"/>\n";
    o << "<text x=\"" << num(left + w + 30) << "\" y=\"" << num(ly + 4) << "\">"
      << xml_escape(order[i]) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string scatter_csv(const std::vector<PlotPoint>& points) {
  std::ostringstream o;
  o << "series,label,x,x_sd,y,y_sd\n";
  for (const PlotPoint& p : points) {
    write_csv_row(o, {p.series, p.label, fmt(p.x), fmt(p.x_sd), fmt(p.y), fmt(p.y_sd)});
  }
  return o.str();
}

void write_scatter(const std::string& stem, const std::vector<PlotPoint>& points,
                   const PlotSpec& spec) {
  for (const auto& [path, text] : {std::pair{stem + ".svg", scatter_svg(points, spec)},
                                   std::pair{stem + ".csv", scatter_csv(points)}}) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << text;
  }
}

}  // namespace hiersurp

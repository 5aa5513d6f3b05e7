#pragma once

// Self-contained SVG rendering for sample scatters, image grids, image or
// point strips, and line curves. Output is a single <svg> root with a viewBox.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "ltgan/tensor.hpp"

namespace ltgan {

enum class SvgKind { scatter, image_grid, strip, curve };

inline SvgKind parse_svg_kind(const std::string& s) {
  if (s == "scatter") return SvgKind::scatter;
  if (s == "image-grid") return SvgKind::image_grid;
  if (s == "strip") return SvgKind::strip;
  if (s == "curve") return SvgKind::curve;
  throw std::invalid_argument("unknown svg kind '" + s + "' (expected scatter, image-grid, strip or curve)");
}

struct CurveSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;  // NaN entries are gaps
};

struct SvgData {
  std::string title;
  // scatter: one n x 2 tensor per series
  std::vector<Tensor> point_sets;
  std::vector<std::string> point_labels;
  // image-grid / strip: one flattened image per row
  Tensor images;
  std::size_t image_rows = 0;
  std::size_t image_cols = 0;
  std::size_t columns = 8;
  // curve
  std::vector<CurveSeries> curves;
  std::string x_label;
  std::string y_label;
};

inline std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default:
        // control characters are not allowed in XML 1.0
        if (static_cast<unsigned char>(c) < 0x20 && c != '\n' && c != '\t' && c != '\r') out += ' ';
        else out += c;
    }
  }
  return out;
}

namespace detail {

inline std::string num(double v, int decimals = 2) {
  if (!std::isfinite(v)) v = 0.0;
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, decimals);
  std::string s(buf, p);
  if (s == "-0.00" || s == "-0.0" || s == "-0") s.erase(0, 1);
  return s;
}

inline std::string tick(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, std::abs(v) < 1e-12 ? 0.0 : v, std::chars_format::general, 3);
  return std::string(buf, p);
}

inline const char* palette(std::size_t i) {
  static constexpr const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  return colors[i % 8];
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  bool valid() const { return lo <= hi; }
  Range padded() const {
    Range r = *this;
    if (!valid()) return {0.0, 1.0};
    if (r.hi - r.lo < 1e-12) {
      const double pad = std::max(0.5, 0.5 * std::abs(r.lo));
      r.lo -= pad;
      r.hi += pad;
    } else {
      const double pad = 0.05 * (r.hi - r.lo);
      r.lo -= pad;
      r.hi += pad;
    }
    return r;
  }
};

/// Plot frame with margins for axes and labels.
struct Frame {
  double width = 480, height = 360;
  double left = 56, right = 16, top = 32, bottom = 44;
  Range xr, yr;

  double px(double x) const { return left + (x - xr.lo) / (xr.hi - xr.lo) * (width - left - right); }
  double py(double y) const { return height - bottom - (y - yr.lo) / (yr.hi - yr.lo) * (height - top - bottom); }
};

inline std::string open_svg(double w, double h, const std::string& title) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " + num(w, 0) + " " + num(h, 0) + "\" width=\"" + num(w, 0) +
                  "\" height=\"" + num(h, 0) + "\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"" + num(w, 0) + "\" height=\"" + num(h, 0) + "\" fill=\"#ffffff\"/>\n";
  if (!title.empty()) s += "<text x=\"" + num(w / 2) + "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">" + xml_escape(title) + "</text>\n";
  return s;
}

inline std::string axes(const Frame& f, const std::string& x_label, const std::string& y_label) {
  std::string s = "<g class=\"axes\" stroke=\"#333333\" stroke-width=\"1\">\n";
  const double x0 = f.left, x1 = f.width - f.right, y0 = f.height - f.bottom, y1 = f.top;
  s += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x1) + "\" y2=\"" + num(y0) + "\"/>\n";
  s += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x0) + "\" y2=\"" + num(y1) + "\"/>\n";
  s += "</g>\n<g class=\"ticks\" font-size=\"10\" font-family=\"sans-serif\" fill=\"#333333\">\n";
  constexpr int kTicks = 5;
  for (int i = 0; i < kTicks; ++i) {
    const double t = static_cast<double>(i) / (kTicks - 1);
    const double xv = f.xr.lo + t * (f.xr.hi - f.xr.lo), yv = f.yr.lo + t * (f.yr.hi - f.yr.lo);
    const double x = f.px(xv), y = f.py(yv);
    s += "<line x1=\"" + num(x) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x) + "\" y2=\"" + num(y0 + 4) + "\" stroke=\"#333333\"/>\n";
    s += "<text x=\"" + num(x) + "\" y=\"" + num(y0 + 15) + "\" text-anchor=\"middle\">" + xml_escape(tick(xv)) + "</text>\n";
    s += "<line x1=\"" + num(x0 - 4) + "\" y1=\"" + num(y) + "\" x2=\"" + num(x0) + "\" y2=\"" + num(y) + "\" stroke=\"#333333\"/>\n";
    s += "<text x=\"" + num(x0 - 6) + "\" y=\"" + num(y + 3) + "\" text-anchor=\"end\">" + xml_escape(tick(yv)) + "</text>\n";
  }
  s += "</g>\n";
  if (!x_label.empty()) {
    s += "<text x=\"" + num((x0 + x1) / 2) + "\" y=\"" + num(f.height - 6) +
         "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" + xml_escape(x_label) + "</text>\n";
  }
  if (!y_label.empty()) {
    s += "<text x=\"12\" y=\"" + num((y0 + y1) / 2) + "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\" transform=\"rotate(-90 12 " +
         num((y0 + y1) / 2) + ")\">" + xml_escape(y_label) + "</text>\n";
  }
  return s;
}

inline std::string legend(const std::vector<std::string>& labels, double x) {
  std::string s;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].empty()) continue;
    const double y = 40 + 14 * static_cast<double>(i);
    s += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" text-anchor=\"end\" font-size=\"10\" font-family=\"sans-serif\" fill=\"" + palette(i) +
         "\">" + xml_escape(labels[i]) + "</text>\n";
  }
  return s;
}

inline std::string render_scatter(const SvgData& d) {
  Frame f;
  Range xr, yr;
  std::size_t points = 0;
  for (const Tensor& t : d.point_sets) {
    if (t.rank() != 2 || (t.rows() > 0 && t.cols() != 2)) throw ShapeError("render_svg scatter: point sets must be n x 2, got " + shape_string(t.shape()));
    for (std::size_t i = 0; i < t.rows(); ++i) {
      xr.add(t(i, 0));
      yr.add(t(i, 1));
    }
    points += t.rows();
  }
  if (points == 0) throw std::invalid_argument("render_svg scatter: no points");
  f.xr = xr.padded();
  f.yr = yr.padded();
  std::string s = open_svg(f.width, f.height, d.title) + axes(f, d.x_label, d.y_label);
  for (std::size_t k = 0; k < d.point_sets.size(); ++k) {
    const Tensor& t = d.point_sets[k];
    s += "<g class=\"series\" fill=\"" + std::string(palette(k)) + "\" fill-opacity=\"0.6\">\n";
    for (std::size_t i = 0; i < t.rows(); ++i) {
      s += "<circle class=\"marker\" cx=\"" + num(f.px(t(i, 0))) + "\" cy=\"" + num(f.py(t(i, 1))) + "\" r=\"2\"/>\n";
    }
    s += "</g>\n";
  }
  s += legend(d.point_labels, f.width - f.right);
  return s + "</svg>\n";
}

inline std::string render_images(const SvgData& d, std::size_t columns) {
  const Tensor& im = d.images;
  if (im.rank() != 2 || im.rows() == 0) throw std::invalid_argument("render_svg image grid: no images");
  const std::size_t r = d.image_rows, c = d.image_cols;
  if (r == 0 || c == 0 || r * c != im.cols()) {
    throw ShapeError("render_svg image grid: images of width " + std::to_string(im.cols()) + " do not match " + std::to_string(r) + "x" + std::to_string(c));
  }
  columns = std::max<std::size_t>(1, std::min(columns, im.rows()));
  const std::size_t grid_rows = (im.rows() + columns - 1) / columns;
  const double cell = std::max(2.0, 64.0 / static_cast<double>(std::max(r, c)));
  const double gap = 4, top = d.title.empty() ? 4 : 28;
  const double w = gap + static_cast<double>(columns) * (static_cast<double>(c) * cell + gap);
  const double h = top + static_cast<double>(grid_rows) * (static_cast<double>(r) * cell + gap);
  std::string s = open_svg(w, h, d.title);
  for (std::size_t n = 0; n < im.rows(); ++n) {
    const double ox = gap + static_cast<double>(n % columns) * (static_cast<double>(c) * cell + gap);
    const double oy = top + static_cast<double>(n / columns) * (static_cast<double>(r) * cell + gap);
    s += "<g class=\"image\">\n";
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const double v = std::clamp(im(n, i * c + j), 0.0, 1.0);
        const int g = static_cast<int>(std::lround(255.0 * (1.0 - v)));
        s += "<rect x=\"" + num(ox + static_cast<double>(j) * cell) + "\" y=\"" + num(oy + static_cast<double>(i) * cell) + "\" width=\"" + num(cell) +
             "\" height=\"" + num(cell) + "\" fill=\"rgb(" + std::to_string(g) + "," + std::to_string(g) + "," + std::to_string(g) + ")\"/>\n";
      }
    }
    s += "</g>\n";
  }
  return s + "</svg>\n";
}

/// A strip of 2-D points: the sequence drawn as a path with one marker per step.
inline std::string render_point_strip(const SvgData& d) {
  const Tensor& t = d.images;
  if (t.rank() != 2 || t.rows() == 0) throw std::invalid_argument("render_svg strip: no samples");
  if (t.cols() != 2) throw ShapeError("render_svg strip: non-image samples must be n x 2, got " + shape_string(t.shape()));
  Frame f;
  Range xr, yr;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    xr.add(t(i, 0));
    yr.add(t(i, 1));
  }
  f.xr = xr.padded();
  f.yr = yr.padded();
  std::string s = open_svg(f.width, f.height, d.title) + axes(f, d.x_label, d.y_label);
  std::string pts;
  for (std::size_t i = 0; i < t.rows(); ++i) pts += (i ? " " : "") + num(f.px(t(i, 0))) + "," + num(f.py(t(i, 1)));
  s += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"#888888\" stroke-width=\"1\"/>\n<g class=\"series\" fill=\"#1f77b4\">\n";
  for (std::size_t i = 0; i < t.rows(); ++i) s += "<circle class=\"marker\" cx=\"" + num(f.px(t(i, 0))) + "\" cy=\"" + num(f.py(t(i, 1))) + "\" r=\"3\"/>\n";
  return s + "</g>\n</svg>\n";
}

inline std::string render_curve(const SvgData& d) {
  Frame f;
  Range xr, yr;
  bool any = false;
  for (const auto& c : d.curves) {
    if (c.x.size() != c.y.size()) throw ShapeError("render_svg curve: series '" + c.label + "' has mismatched x/y lengths");
    for (std::size_t i = 0; i < c.x.size(); ++i) {
      if (!std::isfinite(c.y[i])) continue;
      xr.add(c.x[i]);
      yr.add(c.y[i]);
      any = true;
    }
  }
  if (!any) throw std::invalid_argument("render_svg curve: no finite points");
  f.xr = xr.padded();
  f.yr = yr.padded();
  std::string s = open_svg(f.width, f.height, d.title) + axes(f, d.x_label, d.y_label);
  std::vector<std::string> labels;
  for (std::size_t k = 0; k < d.curves.size(); ++k) {
    const auto& c = d.curves[k];
    labels.push_back(c.label);
    // gaps split the series into separate polylines
    std::vector<std::string> runs(1);
    for (std::size_t i = 0; i < c.x.size(); ++i) {
      if (!std::isfinite(c.y[i])) {
        if (!runs.back().empty()) runs.emplace_back();
        continue;
      }
      runs.back() += (runs.back().empty() ? "" : " ") + num(f.px(c.x[i])) + "," + num(f.py(c.y[i]));
    }
    for (const auto& r : runs) {
      if (r.empty()) continue;
      s += "<polyline class=\"curve\" points=\"" + r + "\" fill=\"none\" stroke=\"" + palette(k) + "\" stroke-width=\"1.5\"/>\n";
    }
  }
  s += legend(labels, f.width - f.right);
  return s + "</svg>\n";
}

}  // namespace detail

inline std::string render_svg(SvgKind kind, const SvgData& data) {
  switch (kind) {
    case SvgKind::scatter: return detail::render_scatter(data);
    case SvgKind::image_grid: return detail::render_images(data, data.columns);
    case SvgKind::strip:
      if (data.image_rows > 0) return detail::render_images(data, data.images.rank() == 2 ? data.images.rows() : 1);
      return detail::render_point_strip(data);
    case SvgKind::curve: return detail::render_curve(data);
  }
  throw std::invalid_argument("render_svg: unknown kind");
}

}  // namespace ltgan

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgqn/image_io.hpp"
#include "sgqn/tensor.hpp"

// Small software rasterizer for learning-curve figures: an RGB canvas with
// Bresenham lines, filled bands and a 5x7 bitmap font, written out as PNG.

namespace sgqn::plot {

using Color = std::array<float, 3>;

namespace font_detail {

// Each glyph is 7 rows of 5 bits, bit 4 = leftmost column.
inline const uint8_t* glyph(char c) {
  static const uint8_t digits[10][7] = {
      {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}, {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},
      {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}, {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},
      {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}, {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},
      {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}, {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},
      {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}, {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}};
  static const uint8_t lower[26][7] = {
      {0x00, 0x00, 0x0E, 0x01, 0x0F, 0x11, 0x0F}, {0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x1E},
      {0x00, 0x00, 0x0E, 0x10, 0x10, 0x11, 0x0E}, {0x01, 0x01, 0x0D, 0x13, 0x11, 0x11, 0x0F},
      {0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E}, {0x06, 0x09, 0x08, 0x1C, 0x08, 0x08, 0x08},
      {0x00, 0x0F, 0x11, 0x11, 0x0F, 0x01, 0x0E}, {0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x11},
      {0x04, 0x00, 0x0C, 0x04, 0x04, 0x04, 0x0E}, {0x02, 0x00, 0x06, 0x02, 0x02, 0x12, 0x0C},
      {0x10, 0x10, 0x12, 0x14, 0x18, 0x14, 0x12}, {0x0C, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E},
      {0x00, 0x00, 0x1A, 0x15, 0x15, 0x11, 0x11}, {0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11},
      {0x00, 0x00, 0x0E, 0x11, 0x11, 0x11, 0x0E}, {0x00, 0x00, 0x1E, 0x11, 0x1E, 0x10, 0x10},
      {0x00, 0x00, 0x0D, 0x13, 0x0F, 0x01, 0x01}, {0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10},
      {0x00, 0x00, 0x0E, 0x10, 0x0E, 0x01, 0x1E}, {0x08, 0x08, 0x1C, 0x08, 0x08, 0x09, 0x06},
      {0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0D}, {0x00, 0x00, 0x11, 0x11, 0x11, 0x0A, 0x04},
      {0x00, 0x00, 0x11, 0x11, 0x15, 0x15, 0x0A}, {0x00, 0x00, 0x11, 0x0A, 0x04, 0x0A, 0x11},
      {0x00, 0x00, 0x11, 0x11, 0x0F, 0x01, 0x0E}, {0x00, 0x00, 0x1F, 0x02, 0x04, 0x08, 0x1F}};
  static const uint8_t space[7] = {0, 0, 0, 0, 0, 0, 0};
  static const uint8_t dot[7] = {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C};
  static const uint8_t minus[7] = {0x00, 0x00, 0x00, 0x0E, 0x00, 0x00, 0x00};
  static const uint8_t plus[7] = {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00};
  static const uint8_t under[7] = {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F};
  static const uint8_t comma[7] = {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08};
  static const uint8_t percent[7] = {0x19, 0x19, 0x02, 0x04, 0x08, 0x13, 0x13};
  static const uint8_t colon[7] = {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00};
  static const uint8_t slash[7] = {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10};
  static const uint8_t box[7] = {0x1F, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1F};
  if (c >= '0' && c <= '9') return digits[c - '0'];
  if (c >= 'a' && c <= 'z') return lower[c - 'a'];
  if (c >= 'A' && c <= 'Z') return lower[c - 'A'];
  switch (c) {
    case ' ': return space;
    case '.': return dot;
    case '-': return minus;
    case '+': return plus;
    case '_': return under;
    case ',': return comma;
    case '%': return percent;
    case ':': return colon;
    case '/': return slash;
    default: return box;
  }
}

}  // namespace font_detail

struct Canvas {
  int width, height;
  Tensor<float> img;  // [3,H,W]

  Canvas(int w, int h) : width(w), height(h), img({3, h, w}) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("canvas: bad size");
    img.fill(1.0f);
  }

  void set(int x, int y, const Color& c) {
    if (x < 0 || x >= width || y < 0 || y >= height) return;
    for (int k = 0; k < 3; ++k) img[(int64_t(k) * height + y) * width + x] = c[size_t(k)];
  }

  void blend(int x, int y, const Color& c, float a) {
    if (x < 0 || x >= width || y < 0 || y >= height) return;
    for (int k = 0; k < 3; ++k) {
      float& v = img[(int64_t(k) * height + y) * width + x];
      v = (1.0f - a) * v + a * c[size_t(k)];
    }
  }

  void fill_rect(int x0, int y0, int x1, int y1, const Color& c) {
    for (int y = std::max(0, y0); y <= std::min(height - 1, y1); ++y)
      for (int x = std::max(0, x0); x <= std::min(width - 1, x1); ++x) set(x, y, c);
  }

  void line(int x0, int y0, int x1, int y1, const Color& c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
      set(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) { err += dy; x0 += sx; }
      if (e2 <= dx) { err += dx; y0 += sy; }
    }
  }

  void text(int x, int y, const std::string& s, const Color& c, int scale = 1) {
    int cx = x;
    for (char ch : s) {
      const uint8_t* g = font_detail::glyph(ch);
      for (int r = 0; r < 7; ++r)
        for (int b = 0; b < 5; ++b)
          if (g[r] & (1 << (4 - b)))
            for (int yy = 0; yy < scale; ++yy)
              for (int xx = 0; xx < scale; ++xx)
                set(cx + b * scale + xx, y + r * scale + yy, c);
      cx += 6 * scale;
    }
  }

  static int text_width(size_t n, int scale = 1) {
    return n == 0 ? 0 : int(n) * 6 * scale - scale;
  }
};

// One plotted quantity: a mean line and an optional min/max band.
struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> mean;
  std::vector<double> lo, hi;  // ignored unless band
  bool band = false;
  Color color{0.2f, 0.2f, 0.2f};
};

namespace plot_detail {

inline std::vector<double> nice_ticks(double lo, double hi, int want) {
  if (!(hi > lo)) return {lo};
  const double raw = (hi - lo) / std::max(1, want);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (mag * m >= raw) { step = mag * m; break; }
  std::vector<double> t;
  for (double v = std::ceil(lo / step) * step; v <= hi + step * 1e-9; v += step)
    t.push_back(std::abs(v) < step * 1e-9 ? 0.0 : v);
  return t;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

}  // namespace plot_detail

// Draws every series into one set of axes and writes a PNG. Layout is fixed:
// margins for tick labels, legend in the top-right corner of the plot area.
inline void render_plot(const std::vector<Series>& series, const std::string& title,
                        const std::string& x_label, const std::string& y_label,
                        const std::string& out_path, int width = 640, int height = 400) {
  if (series.empty()) throw std::invalid_argument("render_plot: no series");
  for (const auto& s : series) {
    if (s.x.size() != s.mean.size() || (s.band && (s.lo.size() != s.x.size() ||
                                                   s.hi.size() != s.x.size())))
      throw std::invalid_argument("render_plot: ragged series '" + s.label + "'");
    if (s.x.empty()) throw std::invalid_argument("render_plot: empty series '" + s.label + "'");
  }

  double xmin = series[0].x.front(), xmax = xmin, ymin = series[0].mean.front(), ymax = ymin;
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      const double lo = s.band ? s.lo[i] : s.mean[i];
      const double hi = s.band ? s.hi[i] : s.mean[i];
      ymin = std::min(ymin, lo);
      ymax = std::max(ymax, hi);
    }
  if (xmax == xmin) { xmax += 1.0; xmin -= 1.0; }
  if (ymax == ymin) { ymax += 1.0; ymin -= 1.0; }
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  const int ml = 64, mr = 14, mt = 22, mb = 40;
  Canvas cv(width, height);
  const int px0 = ml, px1 = width - mr, py0 = mt, py1 = height - mb;
  auto X = [&](double v) {
    return px0 + int(std::lround((v - xmin) / (xmax - xmin) * (px1 - px0)));
  };
  auto Y = [&](double v) {
    return py1 - int(std::lround((v - ymin) / (ymax - ymin) * (py1 - py0)));
  };

  const Color black{0, 0, 0}, grey{0.82f, 0.82f, 0.82f};

  for (double t : plot_detail::nice_ticks(ymin, ymax, 5)) {
    const int y = Y(t);
    cv.line(px0, y, px1, y, grey);
    const std::string lab = plot_detail::tick_label(t);
    cv.text(px0 - 6 - Canvas::text_width(lab.size()), y - 3, lab, black);
  }
  for (double t : plot_detail::nice_ticks(xmin, xmax, 6)) {
    const int x = X(t);
    cv.line(x, py0, x, py1, grey);
    const std::string lab = plot_detail::tick_label(t);
    cv.text(x - Canvas::text_width(lab.size()) / 2, py1 + 5, lab, black);
  }

  for (const auto& s : series)
    if (s.band && s.x.size() >= 2)
      for (size_t i = 0; i + 1 < s.x.size(); ++i) {
        const int xa = X(s.x[i]), xb = X(s.x[i + 1]);
        for (int x = std::max(xa, px0); x <= std::min(xb, px1); ++x) {
          const double f = xa == xb ? 0.0 : double(x - xa) / double(xb - xa);
          const double lo = s.lo[i] + f * (s.lo[i + 1] - s.lo[i]);
          const double hi = s.hi[i] + f * (s.hi[i + 1] - s.hi[i]);
          const int ylo = Y(lo), yhi = Y(hi);
          for (int y = std::max(std::min(yhi, ylo), py0); y <= std::min(std::max(yhi, ylo), py1);
               ++y)
            cv.blend(x, y, s.color, 0.25f);
        }
      }

  for (const auto& s : series)
    for (size_t i = 0; i + 1 < s.x.size(); ++i) {
      cv.line(X(s.x[i]), Y(s.mean[i]), X(s.x[i + 1]), Y(s.mean[i + 1]), s.color);
      cv.line(X(s.x[i]), Y(s.mean[i]) + 1, X(s.x[i + 1]), Y(s.mean[i + 1]) + 1, s.color);
    }

  cv.line(px0, py0, px0, py1, black);
  cv.line(px0, py1, px1, py1, black);
  cv.text((px0 + px1) / 2 - Canvas::text_width(title.size()) / 2, 6, title, black);
  cv.text((px0 + px1) / 2 - Canvas::text_width(x_label.size()) / 2, height - 14, x_label, black);
  // y label drawn horizontally above the axis to keep the rasterizer simple
  cv.text(4, py0 - 14, y_label, black);

  int ly = py0 + 6;
  int lw = 0;
  for (const auto& s : series) lw = std::max(lw, Canvas::text_width(s.label.size()));
  const int lx = px1 - lw - 34;
  for (const auto& s : series) {
    cv.line(lx, ly + 3, lx + 18, ly + 3, s.color);
    cv.line(lx, ly + 4, lx + 18, ly + 4, s.color);
    cv.text(lx + 24, ly, s.label, black);
    ly += 12;
  }

  write_png_rgb(out_path, cv.img);
}

}  // namespace sgqn::plot

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedsem/image_io.hpp"
#include "fedsem/tensor.hpp"

namespace fedsem {

// Minimal chart/montage rendering so reports are self-contained PNGs with no
// plotting dependency. Text uses an embedded 5x7 font; labels are uppercased.

namespace plotdetail {

// 5x7 glyphs, 7 rows of 5 cells, '#' = on
inline const std::unordered_map<char, const char*>& font() {
  static const std::unordered_map<char, const char*> f = {
      {'A', ".###.#...##...#######...##...##...#"},
      {'B', "####.#...#####.#...##...##...#####."},
      {'C', ".###.#...##....#....#....#...#.###."},
      {'D', "####.#...##...##...##...##...#####."},
      {'E', "######....####.#....#....#....#####"},
      {'F', "######....####.#....#....#....#...."},
      {'G', ".###.#...##....#.####...##...#.###."},
      {'H', "#...##...#######...##...##...##...#"},
      {'I', "#####..#....#....#....#....#..#####"},
      {'J', "..###...#....#....#....#.#..#..##.."},
      {'K', "#...##..#.#.#..##...#.#..#..#.#...#"},
      {'L', "#....#....#....#....#....#....#####"},
      {'M', "#...###.###.#.##.#.##...##...##...#"},
      {'N', "#...###..##.#.##..###...##...##...#"},
      {'O', ".###.#...##...##...##...##...#.###."},
      {'P', "####.#...##...#####.#....#....#...."},
      {'Q', ".###.#...##...##...##.#.##..#..##.#"},
      {'R', "####.#...##...#####.#.#..#..#.#...#"},
      {'S', ".#####....#.....###.....#....#####."},
      {'T', "#####..#....#....#....#....#....#.."},
      {'U', "#...##...##...##...##...##...#.###."},
      {'V', "#...##...##...##...##...#.#.#...#.."},
      {'W', "#...##...##...##.#.##.#.###.###...#"},
      {'X', "#...#.#.#...#.....#....#.#.#..#...#"},
      {'Y', "#...#.#.#...#....#....#....#....#.."},
      {'Z', "#####....#...#...#...#...#....#####"},
      {'0', ".###.#..###.#.###..##...##...#.###."},
      {'1', "..#...##....#....#....#....#..#####"},
      {'2', ".###.#...#....#..##..#...#....#####"},
      {'3', ".###.#...#....#..##.....##...#.###."},
      {'4', "...#...##..#.#.#..#.#####...#....#."},
      {'5', "######....####.....#....##...#.###."},
      {'6', ".###.#....#....####.#...##...#.###."},
      {'7', "#####....#...#...#...#...#....#...."},
      {'8', ".###.#...##...#.###.#...##...#.###."},
      {'9', ".###.#...##...#.####....#....#.###."},
      {'-', "...............#####..............."},
      {'.', "..........................##...##.."},
      {':', "......##...##.........##...##......"},
      {'/', "....#...#....#...#...#...#....#...."},
      {'(', "...#...#...#...#....#....#.....#..."},
      {')', ".#.....#.....#....#...#...#...#...."},
      {'=', "..........#####.....#####.........."},
      {'%', "##..###..#...#...#...#...#..###..##"},
      {'+', "........#....#..#####..#....#......"},
      {'_', "..............................#####"},
      {',', "......................##...##..#..."},
      {' ', "..................................."},
  };
  return f;
}

struct Rgb {
  unsigned char r, g, b;
};

inline const std::array<Rgb, 8>& palette() {
  static const std::array<Rgb, 8> p = {{{31, 119, 180},
                                        {255, 127, 14},
                                        {44, 160, 44},
                                        {214, 39, 40},
                                        {148, 103, 189},
                                        {140, 86, 75},
                                        {23, 190, 207},
                                        {127, 127, 127}}};
  return p;
}

class Canvas {
 public:
  Canvas(int64_t h, int64_t w) : h_(h), w_(w), px_(static_cast<size_t>(h * w * 3), 255) {}

  void set(int64_t y, int64_t x, Rgb c) {
    if (y < 0 || y >= h_ || x < 0 || x >= w_) return;
    const size_t i = static_cast<size_t>((y * w_ + x) * 3);
    px_[i] = c.r;
    px_[i + 1] = c.g;
    px_[i + 2] = c.b;
  }

  void fill_rect(int64_t y0, int64_t x0, int64_t h, int64_t w, Rgb c) {
    for (int64_t y = y0; y < y0 + h; ++y)
      for (int64_t x = x0; x < x0 + w; ++x) set(y, x, c);
  }

  // 2px-thick segment, plain DDA
  void line(double y0, double x0, double y1, double x1, Rgb c) {
    const double dy = y1 - y0, dx = x1 - x0;
    const int steps = std::max(2, static_cast<int>(std::ceil(std::max(std::fabs(dy), std::fabs(dx)))));
    for (int s = 0; s <= steps; ++s) {
      const double t = static_cast<double>(s) / steps;
      const int64_t y = static_cast<int64_t>(std::lround(y0 + t * dy));
      const int64_t x = static_cast<int64_t>(std::lround(x0 + t * dx));
      set(y, x, c);
      set(y, x + 1, c);
      set(y + 1, x, c);
      set(y + 1, x + 1, c);
    }
  }

  void text(int64_t y, int64_t x, std::string s, Rgb c, int scale = 1) {
    for (auto& ch : s) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    const auto& f = font();
    for (char ch : s) {
      auto it = f.find(ch);
      if (it == f.end()) it = f.find(' ');
      const char* g = it->second;
      for (int ry = 0; ry < 7; ++ry)
        for (int rx = 0; rx < 5; ++rx)
          if (g[ry * 5 + rx] == '#')
            fill_rect(y + ry * scale, x + rx * scale, scale, scale, c);
      x += 6 * scale;
    }
  }

  void save(const std::string& path) const { write_png_rgb8(path, h_, w_, px_); }

  int64_t height() const { return h_; }
  int64_t width() const { return w_; }

 private:
  int64_t h_, w_;
  std::vector<unsigned char> px_;
};

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

}  // namespace plotdetail

struct Series {
  std::string label;
  std::vector<double> xs, ys;
};

inline void render_line_chart(const std::string& path, const std::string& title,
                              const std::string& x_label, const std::string& y_label,
                              const std::vector<Series>& series, int64_t width = 960,
                              int64_t height = 600) {
  using namespace plotdetail;
  Canvas c(height, width);
  const Rgb black{40, 40, 40}, gray{200, 200, 200};
  const int64_t left = 80, right = 30, top = 50, bottom = 60;
  const int64_t px0 = left, px1 = width - right, py0 = top, py1 = height - bottom;

  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& s : series)
    for (size_t i = 0; i < s.xs.size(); ++i) {
      if (!std::isfinite(s.xs[i]) || !std::isfinite(s.ys[i])) continue;
      if (first) {
        xmin = xmax = s.xs[i];
        ymin = ymax = s.ys[i];
        first = false;
      }
      xmin = std::min(xmin, s.xs[i]);
      xmax = std::max(xmax, s.xs[i]);
      ymin = std::min(ymin, s.ys[i]);
      ymax = std::max(ymax, s.ys[i]);
    }
  if (xmax - xmin < 1e-12) xmax = xmin + 1.0;
  if (ymax - ymin < 1e-12) ymax = ymin + 1.0;
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto to_px = [&](double x, double y) {
    const double fx = (x - xmin) / (xmax - xmin);
    const double fy = (y - ymin) / (ymax - ymin);
    return std::pair<double, double>{py1 - fy * (py1 - py0), px0 + fx * (px1 - px0)};
  };

  // grid + ticks
  for (int t = 0; t <= 5; ++t) {
    const double xv = xmin + (xmax - xmin) * t / 5.0;
    const double yv = ymin + (ymax - ymin) * t / 5.0;
    const auto [ypx, xpx] = to_px(xv, yv);
    c.line(py0, xpx, py1, xpx, gray);
    c.line(ypx, px0, ypx, px1, gray);
    c.text(py1 + 8, xpx - 12, tick_label(xv), black);
    c.text(ypx - 3, 8, tick_label(yv), black);
  }
  c.line(py0, px0, py1, px0, black);
  c.line(py1, px0, py1, px1, black);
  c.text(12, px0, title, black, 2);
  c.text(py1 + 30, (px0 + px1) / 2 - 3 * static_cast<int64_t>(x_label.size()), x_label, black);
  c.text(py0 - 24, 8, y_label, black);

  // series + legend
  for (size_t si = 0; si < series.size(); ++si) {
    const Rgb col = palette()[si % palette().size()];
    const auto& s = series[si];
    for (size_t i = 1; i < s.xs.size(); ++i) {
      const auto [y0, x0] = to_px(s.xs[i - 1], s.ys[i - 1]);
      const auto [y1, x1] = to_px(s.xs[i], s.ys[i]);
      c.line(y0, x0, y1, x1, col);
    }
    const int64_t ly = py0 + 10 + static_cast<int64_t>(si) * 16;
    c.fill_rect(ly, px1 - 150, 8, 16, col);
    c.text(ly, px1 - 128, s.label, black);
  }
  c.save(path);
}

namespace plotdetail {

inline void gray_text(Tensor& img, int64_t y, int64_t x, std::string s, double value = 0.0) {
  for (auto& ch : s) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  const auto& f = font();
  for (char ch : s) {
    auto it = f.find(ch);
    if (it == f.end()) it = f.find(' ');
    for (int ry = 0; ry < 7; ++ry)
      for (int rx = 0; rx < 5; ++rx)
        if (it->second[ry * 5 + rx] == '#' && y + ry < img.dim(0) && x + rx < img.dim(1) &&
            y + ry >= 0 && x + rx >= 0)
          img.at2(y + ry, x + rx) = value;
    x += 6;
  }
}

}  // namespace plotdetail

// Horizontal strip of grayscale frames with separators; frames are [H,W]
// tensors in [0,1], each labeled with its iteration index.
inline Tensor assemble_filmstrip(const std::vector<std::pair<int, Tensor>>& frames,
                                 int64_t sep = 2) {
  if (frames.empty()) throw std::invalid_argument("assemble_filmstrip: no frames");
  const int64_t H = frames[0].second.dim(0), W = frames[0].second.dim(1);
  const int64_t n = static_cast<int64_t>(frames.size());
  const int64_t label_h = 11;
  Tensor strip({H + label_h, n * W + (n - 1) * sep});
  for (int64_t i = 0; i < strip.numel(); ++i) strip[i] = 1.0;

  for (int64_t f = 0; f < n; ++f) {
    const Tensor& img = frames[static_cast<size_t>(f)].second;
    if (img.dim(0) != H || img.dim(1) != W)
      throw std::invalid_argument("assemble_filmstrip: frame shape mismatch");
    const int64_t x0 = f * (W + sep);
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x)
        strip.at2(y + label_h, x0 + x) = std::clamp(img.at2(y, x), 0.0, 1.0);
    plotdetail::gray_text(strip, 2, x0 + 1,
                          "I=" + std::to_string(frames[static_cast<size_t>(f)].first));
  }
  return strip;
}

inline void write_filmstrip(const std::string& path,
                            const std::vector<std::pair<int, Tensor>>& frames, int64_t sep = 2) {
  write_png_gray8(path, assemble_filmstrip(frames, sep));
}

// Stack several strips vertically (e.g. one per attack run).
inline Tensor vstack_images(const std::vector<Tensor>& images, int64_t sep = 4) {
  if (images.empty()) throw std::invalid_argument("vstack_images: nothing to stack");
  int64_t W = 0, H = 0;
  for (const auto& im : images) {
    W = std::max(W, im.dim(1));
    H += im.dim(0) + sep;
  }
  Tensor out({H - sep, W});
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0;
  int64_t y0 = 0;
  for (const auto& im : images) {
    for (int64_t y = 0; y < im.dim(0); ++y)
      for (int64_t x = 0; x < im.dim(1); ++x) out.at2(y0 + y, x) = im.at2(y, x);
    y0 += im.dim(0) + sep;
  }
  return out;
}

}  // namespace fedsem

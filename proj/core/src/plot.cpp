#include "adfseg/plot.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>

#include "adfseg/errors.hpp"

namespace adfseg {

namespace {

struct Rgb {
  double r, g, b;
};

constexpr Rgb kPalette[] = {
    {0.12, 0.47, 0.71}, {0.89, 0.29, 0.20}, {0.17, 0.63, 0.17},
    {0.58, 0.40, 0.74}, {0.55, 0.34, 0.29}, {0.89, 0.47, 0.76},
};
constexpr Rgb kBlack{0.15, 0.15, 0.15};
constexpr Rgb kGrid{0.85, 0.85, 0.85};

// 5x7 glyphs, one column bitmask per byte (LSB = top row)
struct Glyph {
  char ch;
  uint8_t col[5];
};

constexpr Glyph kFont[] = {
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00}}, {'0', {0x3e, 0x51, 0x49, 0x45, 0x3e}},
    {'1', {0x00, 0x42, 0x7f, 0x40, 0x00}}, {'2', {0x42, 0x61, 0x51, 0x49, 0x46}},
    {'3', {0x21, 0x41, 0x45, 0x4b, 0x31}}, {'4', {0x18, 0x14, 0x12, 0x7f, 0x10}},
    {'5', {0x27, 0x45, 0x45, 0x45, 0x39}}, {'6', {0x3c, 0x4a, 0x49, 0x49, 0x30}},
    {'7', {0x01, 0x71, 0x09, 0x05, 0x03}}, {'8', {0x36, 0x49, 0x49, 0x49, 0x36}},
    {'9', {0x06, 0x49, 0x49, 0x29, 0x1e}}, {'.', {0x00, 0x60, 0x60, 0x00, 0x00}},
    {'-', {0x08, 0x08, 0x08, 0x08, 0x08}}, {'+', {0x08, 0x08, 0x3e, 0x08, 0x08}},
    {'_', {0x40, 0x40, 0x40, 0x40, 0x40}}, {':', {0x00, 0x36, 0x36, 0x00, 0x00}},
    {'/', {0x20, 0x10, 0x08, 0x04, 0x02}}, {'E', {0x7f, 0x49, 0x49, 0x49, 0x41}},
    {'A', {0x7e, 0x11, 0x11, 0x11, 0x7e}}, {'B', {0x7f, 0x49, 0x49, 0x49, 0x36}},
    {'C', {0x3e, 0x41, 0x41, 0x41, 0x22}}, {'D', {0x7f, 0x41, 0x41, 0x22, 0x1c}},
    {'F', {0x7f, 0x09, 0x09, 0x09, 0x01}}, {'G', {0x3e, 0x41, 0x49, 0x49, 0x7a}},
    {'H', {0x7f, 0x08, 0x08, 0x08, 0x7f}}, {'I', {0x00, 0x41, 0x7f, 0x41, 0x00}},
    {'J', {0x20, 0x40, 0x41, 0x3f, 0x01}}, {'K', {0x7f, 0x08, 0x14, 0x22, 0x41}},
    {'L', {0x7f, 0x40, 0x40, 0x40, 0x40}}, {'M', {0x7f, 0x02, 0x0c, 0x02, 0x7f}},
    {'N', {0x7f, 0x04, 0x08, 0x10, 0x7f}}, {'O', {0x3e, 0x41, 0x41, 0x41, 0x3e}},
    {'P', {0x7f, 0x09, 0x09, 0x09, 0x06}}, {'Q', {0x3e, 0x41, 0x51, 0x21, 0x5e}},
    {'R', {0x7f, 0x09, 0x19, 0x29, 0x46}}, {'S', {0x46, 0x49, 0x49, 0x49, 0x31}},
    {'T', {0x01, 0x01, 0x7f, 0x01, 0x01}}, {'U', {0x3f, 0x40, 0x40, 0x40, 0x3f}},
    {'V', {0x1f, 0x20, 0x40, 0x20, 0x1f}}, {'W', {0x3f, 0x40, 0x38, 0x40, 0x3f}},
    {'X', {0x63, 0x14, 0x08, 0x14, 0x63}}, {'Y', {0x07, 0x08, 0x70, 0x08, 0x07}},
    {'Z', {0x61, 0x51, 0x49, 0x45, 0x43}},
};

const uint8_t* find_glyph(char c) {
  const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (const auto& g : kFont) {
    if (g.ch == up) return g.col;
  }
  return kFont[0].col;  // unknown -> space
}

class Canvas {
 public:
  Canvas(int64_t h, int64_t w) : img_(3, h, w) { img_.fill(1.0); }

  void put(int64_t y, int64_t x, const Rgb& c) {
    if (y < 0 || y >= img_.h || x < 0 || x >= img_.w) return;
    img_.at(0, y, x) = c.r;
    img_.at(1, y, x) = c.g;
    img_.at(2, y, x) = c.b;
  }

  void line(double y0, double x0, double y1, double x1, const Rgb& c) {
    const double len = std::max(std::abs(y1 - y0), std::abs(x1 - x0));
    const int64_t steps = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(len)) * 2);
    for (int64_t i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / static_cast<double>(steps);
      put(static_cast<int64_t>(std::lround(y0 + t * (y1 - y0))),
          static_cast<int64_t>(std::lround(x0 + t * (x1 - x0))), c);
    }
  }

  void rect(int64_t y0, int64_t x0, int64_t y1, int64_t x1, const Rgb& c) {
    for (int64_t y = y0; y <= y1; ++y)
      for (int64_t x = x0; x <= x1; ++x) put(y, x, c);
  }

  void text(int64_t y, int64_t x, const std::string& s, const Rgb& c) {
    for (char ch : s) {
      const uint8_t* cols = find_glyph(ch);
      for (int cx = 0; cx < 5; ++cx)
        for (int cy = 0; cy < 7; ++cy)
          if (cols[cx] & (1 << cy)) put(y + cy, x + cx, c);
      x += 6;
    }
  }

  const Image& image() const { return img_; }

 private:
  Image img_;
};

std::string format_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

}  // namespace

void plot_lines(const std::string& path, const std::vector<std::vector<double>>& series,
                const std::vector<std::string>& labels, const std::string& title) {
  if (series.empty()) throw ContractError("plot_lines: no series");
  const int64_t H = 480, W = 640, ml = 60, mr = 20, mt = 30, mb = 40;
  Canvas cv(H, W);
  double lo = 0, hi = 1e-12;
  size_t max_len = 1;
  for (const auto& s : series) {
    for (double v : s) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    max_len = std::max(max_len, s.size());
  }
  if (hi <= lo) hi = lo + 1;
  auto ypix = [&](double v) {
    return static_cast<double>(mt) + (static_cast<double>(H - mt - mb)) * (hi - v) / (hi - lo);
  };
  auto xpix = [&](size_t i, size_t n) {
    const double frac = n <= 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
    return static_cast<double>(ml) + frac * static_cast<double>(W - ml - mr);
  };
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    const int64_t y = static_cast<int64_t>(ypix(v));
    cv.line(y, ml, y, W - mr, kGrid);
    cv.text(y - 3, 4, format_tick(v), kBlack);
  }
  cv.line(mt, ml, H - mb, ml, kBlack);
  cv.line(H - mb, ml, H - mb, W - mr, kBlack);
  cv.text(H - mb + 8, ml, "0", kBlack);
  cv.text(H - mb + 8, W - mr - 30, format_tick(static_cast<double>(max_len - 1)), kBlack);
  cv.text(10, ml, title, kBlack);
  for (size_t si = 0; si < series.size(); ++si) {
    const Rgb& c = kPalette[si % std::size(kPalette)];
    const auto& s = series[si];
    for (size_t i = 0; i + 1 < s.size(); ++i) {
      cv.line(ypix(s[i]), xpix(i, s.size()), ypix(s[i + 1]), xpix(i + 1, s.size()), c);
    }
    if (si < labels.size()) {
      const int64_t ly = mt + 12 * static_cast<int64_t>(si);
      cv.rect(ly, W - mr - 90, ly + 6, W - mr - 84, c);
      cv.text(ly, W - mr - 80, labels[si], kBlack);
    }
  }
  write_png(path, cv.image());
}

void plot_bars(const std::string& path, const std::vector<double>& values,
               const std::vector<std::string>& labels, const std::string& title) {
  if (values.empty()) throw ContractError("plot_bars: no values");
  const int64_t H = 480, W = 640, ml = 60, mr = 20, mt = 30, mb = 60;
  Canvas cv(H, W);
  const double hi = std::max(1.0, *std::max_element(values.begin(), values.end()));
  auto ypix = [&](double v) {
    return static_cast<int64_t>(mt + (H - mt - mb) * (hi - v) / hi);
  };
  for (int t = 0; t <= 4; ++t) {
    const double v = hi * t / 4.0;
    cv.line(ypix(v), ml, ypix(v), W - mr, kGrid);
    cv.text(ypix(v) - 3, 4, format_tick(v), kBlack);
  }
  cv.line(mt, ml, H - mb, ml, kBlack);
  cv.line(H - mb, ml, H - mb, W - mr, kBlack);
  const int64_t n = static_cast<int64_t>(values.size());
  const int64_t span = (W - ml - mr) / n;
  for (int64_t i = 0; i < n; ++i) {
    const Rgb& c = kPalette[static_cast<size_t>(i) % std::size(kPalette)];
    const int64_t x0 = ml + i * span + span / 6;
    const int64_t x1 = ml + (i + 1) * span - span / 6;
    cv.rect(ypix(values[static_cast<size_t>(i)]), x0, H - mb - 1, x1, c);
    if (static_cast<size_t>(i) < labels.size()) {
      cv.text(H - mb + 8, x0, labels[static_cast<size_t>(i)], kBlack);
    }
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.3f", values[static_cast<size_t>(i)]);
    cv.text(ypix(values[static_cast<size_t>(i)]) - 10, x0, buf, kBlack);
  }
  cv.text(10, ml, title, kBlack);
  write_png(path, cv.image());
}

}  // namespace adfseg

#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

namespace adfseg {

/// Planar C×H×W raster with values in [0,1]. C is 1 (data path) or 3 (plots).
struct Image {
  int64_t c{0}, h{0}, w{0};
  std::vector<double> pix;

  Image() = default;
  Image(int64_t c_, int64_t h_, int64_t w_) : c(c_), h(h_), w(w_), pix(static_cast<size_t>(c_ * h_ * w_), 0.0) {}

  double& at(int64_t ch, int64_t y, int64_t x) { return pix[static_cast<size_t>((ch * h + y) * w + x)]; }
  double at(int64_t ch, int64_t y, int64_t x) const { return pix[static_cast<size_t>((ch * h + y) * w + x)]; }
  int64_t numel() const { return c * h * w; }
  void fill(double v) { std::fill(pix.begin(), pix.end(), v); }
};

/// Decodes any PNG to single-channel [0,1] (libpng converts color to gray).
Image read_png_gray(const std::string& path);

/// Encodes 8-bit grayscale (c=1) or RGB (c=3); values clamped to [0,1].
void write_png(const std::string& path, const Image& img);

/// Bilinear, pixel-center aligned.
Image resize_bilinear(const Image& src, int64_t oh, int64_t ow);

/// Samples src at (y+dy, x+dx) with bilinear interpolation and border clamp;
/// used to misalign the secondary modality by a small shift.
Image shift_bilinear(const Image& src, double dy, double dx);

}  // namespace adfseg

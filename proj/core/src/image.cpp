#include "adfseg/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "adfseg/errors.hpp"

namespace adfseg {

Image read_png_gray(const std::string& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw IoError("cannot read PNG " + path + ": " + png.message);
  }
  png.format = PNG_FORMAT_GRAY;
  std::vector<uint8_t> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    throw IoError("cannot decode PNG " + path + ": " + msg);
  }
  Image img(1, png.height, png.width);
  for (int64_t i = 0; i < img.numel(); ++i) img.pix[static_cast<size_t>(i)] = buf[static_cast<size_t>(i)] / 255.0;
  return img;
}

void write_png(const std::string& path, const Image& img) {
  if (img.c != 1 && img.c != 3) throw ContractError("write_png: channels must be 1 or 3");
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.w);
  png.height = static_cast<png_uint_32>(img.h);
  png.format = img.c == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  // interleave + quantize
  std::vector<uint8_t> buf(static_cast<size_t>(img.c * img.h * img.w));
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x)
      for (int64_t ch = 0; ch < img.c; ++ch) {
        const double v = std::clamp(img.at(ch, y, x), 0.0, 1.0);
        buf[static_cast<size_t>((y * img.w + x) * img.c + ch)] =
            static_cast<uint8_t>(std::lround(v * 255.0));
      }
  if (!png_image_write_to_file(&png, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path + ": " + png.message);
  }
}

namespace {

double sample_clamped(const Image& src, int64_t ch, double y, double x) {
  const double yc = std::clamp(y, 0.0, static_cast<double>(src.h - 1));
  const double xc = std::clamp(x, 0.0, static_cast<double>(src.w - 1));
  const int64_t y0 = static_cast<int64_t>(std::floor(yc));
  const int64_t x0 = static_cast<int64_t>(std::floor(xc));
  const int64_t y1 = std::min(y0 + 1, src.h - 1);
  const int64_t x1 = std::min(x0 + 1, src.w - 1);
  const double fy = yc - static_cast<double>(y0);
  const double fx = xc - static_cast<double>(x0);
  const double top = src.at(ch, y0, x0) * (1 - fx) + src.at(ch, y0, x1) * fx;
  const double bot = src.at(ch, y1, x0) * (1 - fx) + src.at(ch, y1, x1) * fx;
  return top * (1 - fy) + bot * fy;
}

}  // namespace

Image resize_bilinear(const Image& src, int64_t oh, int64_t ow) {
  if (oh < 1 || ow < 1) throw ContractError("resize_bilinear: target dims must be positive");
  if (oh == src.h && ow == src.w) return src;
  Image out(src.c, oh, ow);
  const double sy = static_cast<double>(src.h) / static_cast<double>(oh);
  const double sx = static_cast<double>(src.w) / static_cast<double>(ow);
  for (int64_t ch = 0; ch < src.c; ++ch)
    for (int64_t y = 0; y < oh; ++y)
      for (int64_t x = 0; x < ow; ++x) {
        const double syn = (static_cast<double>(y) + 0.5) * sy - 0.5;
        const double sxn = (static_cast<double>(x) + 0.5) * sx - 0.5;
        out.at(ch, y, x) = sample_clamped(src, ch, syn, sxn);
      }
  return out;
}

Image shift_bilinear(const Image& src, double dy, double dx) {
  Image out(src.c, src.h, src.w);
  for (int64_t ch = 0; ch < src.c; ++ch)
    for (int64_t y = 0; y < src.h; ++y)
      for (int64_t x = 0; x < src.w; ++x)
        out.at(ch, y, x) = sample_clamped(src, ch, static_cast<double>(y) + dy, static_cast<double>(x) + dx);
  return out;
}

}  // namespace adfseg

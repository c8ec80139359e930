#include "oseg/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace oseg {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

uint8_t to_byte(double v) {
  v = std::min(1.0, std::max(0.0, v));
  return static_cast<uint8_t>(std::lround(v * 255.0));
}

}  // namespace

void write_png(const std::string& path, const Tensor& image) {
  require(image.ndim() == 3 && image.shape[0] == 3, "write_png: image must be [3,H,W]");
  const int h = image.shape[1], w = image.shape[2];
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("write_png: cannot open " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: libpng error writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const int64_t i = static_cast<int64_t>(r) * w + c;
      row[3 * c + 0] = to_byte(image[i]);
      row[3 * c + 1] = to_byte(image[plane + i]);
      row[3 * c + 2] = to_byte(image[2 * plane + i]);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("read_png: cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: libpng error reading " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  // Normalize everything to 8-bit RGB.
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
  Tensor image({3, h, w});
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int r = 0; r < h; ++r) {
    png_read_row(png, row.data(), nullptr);
    for (int c = 0; c < w; ++c) {
      const int64_t i = static_cast<int64_t>(r) * w + c;
      image[i] = row[3 * c + 0] / 255.0;
      image[plane + i] = row[3 * c + 1] / 255.0;
      image[2 * plane + i] = row[3 * c + 2] / 255.0;
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

std::array<double, 3> rgb_to_hsv(double r, double g, double b) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  double h = 0.0;
  if (d > 0.0) {
    if (mx == r)
      h = 60.0 * std::fmod((g - b) / d, 6.0);
    else if (mx == g)
      h = 60.0 * ((b - r) / d + 2.0);
    else
      h = 60.0 * ((r - g) / d + 4.0);
    if (h < 0.0) h += 360.0;
  }
  const double s = mx > 0.0 ? d / mx : 0.0;
  return {h, s, mx};
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(h, 360.0);
  if (h < 0.0) h += 360.0;
  const double c = v * s;
  const double x = c * (1.0 - std::fabs(std::fmod(h / 60.0, 2.0) - 1.0));
  const double m = v - c;
  double r = 0, g = 0, b = 0;
  if (h < 60) {
    r = c; g = x;
  } else if (h < 120) {
    r = x; g = c;
  } else if (h < 180) {
    g = c; b = x;
  } else if (h < 240) {
    g = x; b = c;
  } else if (h < 300) {
    r = x; b = c;
  } else {
    r = c; b = x;
  }
  return {r + m, g + m, b + m};
}

}  // namespace oseg

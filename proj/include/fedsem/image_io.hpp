#pragma once

#include <png.h>

#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "fedsem/errors.hpp"
#include "fedsem/tensor.hpp"

namespace fedsem {

// Grayscale PNG I/O backed by libpng. Images travel as [0,1] tensors in
// memory; 8-bit (images) or 1-bit (masks) only at the file boundary.

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr fp(std::fopen(path.c_str(), mode));
  if (!fp) {
    if (mode[0] == 'r') throw MissingInputError("cannot open " + path);
    throw std::runtime_error("cannot write " + path);
  }
  return fp;
}

}  // namespace detail

// bit_depth 8: values quantized as round(v * 255); bit_depth 1: nonzero -> 1.
inline void write_png_gray(const std::string& path, int64_t height, int64_t width,
                           const std::vector<unsigned char>& pixels, int bit_depth) {
  if (static_cast<int64_t>(pixels.size()) != height * width)
    throw std::invalid_argument("write_png_gray: pixel count mismatch");
  auto fp = detail::open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng failure writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth < 8) png_set_packing(png);  // we hand over one pixel per byte
  std::vector<png_bytep> rows(static_cast<size_t>(height));
  for (int64_t y = 0; y < height; ++y)
    rows[static_cast<size_t>(y)] = const_cast<png_bytep>(pixels.data() + y * width);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline void write_png_gray8(const std::string& path, const Tensor& img01) {
  if (img01.ndim() != 2) throw std::invalid_argument("write_png_gray8: expects [H,W]");
  const int64_t H = img01.dim(0), W = img01.dim(1);
  std::vector<unsigned char> px(static_cast<size_t>(H * W));
  for (int64_t i = 0; i < H * W; ++i) {
    double v = std::clamp(img01[i], 0.0, 1.0);
    px[static_cast<size_t>(i)] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  write_png_gray(path, H, W, px, 8);
}

struct GrayImage {
  int64_t height = 0, width = 0;
  int bit_depth = 8;
  std::vector<unsigned char> pixels;  // one byte per pixel, raw sample values

  Tensor to_unit_tensor() const {
    Tensor t({height, width});
    const double maxval = static_cast<double>((1 << bit_depth) - 1);
    for (int64_t i = 0; i < height * width; ++i)
      t[i] = static_cast<double>(pixels[static_cast<size_t>(i)]) / maxval;
    return t;
  }
};

inline GrayImage read_png_gray(const std::string& path) {
  auto fp = detail::open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng failure reading " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  int bit_depth = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_GRAY)
    throw std::runtime_error("read_png_gray: " + path + " is not grayscale");
  if (bit_depth == 16) {
    png_set_strip_16(png);
    bit_depth = 8;
  }
  if (bit_depth < 8) png_set_packing(png);  // unpack to one byte per pixel
  png_read_update_info(png, info);
  GrayImage img;
  img.height = png_get_image_height(png, info);
  img.width = png_get_image_width(png, info);
  img.bit_depth = bit_depth;
  img.pixels.resize(static_cast<size_t>(img.height * img.width));
  std::vector<png_bytep> rows(static_cast<size_t>(img.height));
  for (int64_t y = 0; y < img.height; ++y)
    rows[static_cast<size_t>(y)] = img.pixels.data() + y * img.width;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline void write_png_rgb8(const std::string& path, int64_t height, int64_t width,
                           const std::vector<unsigned char>& rgb) {
  if (static_cast<int64_t>(rgb.size()) != height * width * 3)
    throw std::invalid_argument("write_png_rgb8: pixel count mismatch");
  auto fp = detail::open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng failure writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<size_t>(height));
  for (int64_t y = 0; y < height; ++y)
    rows[static_cast<size_t>(y)] = const_cast<png_bytep>(rgb.data() + y * width * 3);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace fedsem

#pragma once

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "ridgegen/tensor.hpp"

namespace ridgegen {

// 8-bit grayscale PNG I/O. Pixels map linearly between [0, 1] doubles and
// 0..255 bytes (round-half-up on write). Byte output is deterministic for
// identical pixel content (fixed compression settings, no ancillary chunks).

inline void write_png_gray8(const std::filesystem::path& path, const Tensor<double>& img) {
  check_usage(img.defined() && img.ndim() == 2, "write_png_gray8: expected a 2-D image");
  const int64_t h = img.dim(0), w = img.dim(1);
  std::vector<unsigned char> bytes(static_cast<size_t>(h * w));
  for (int64_t i = 0; i < h * w; ++i) {
    const double v = std::min(std::max(img[i], 0.0), 1.0);
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }

  std::FILE* fp = std::fopen(path.string().c_str(), "wb");
  check_usage(fp != nullptr, "write_png_gray8: cannot open " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw integrity_error("write_png_gray8: libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw integrity_error("write_png_gray8: libpng error writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int64_t y = 0; y < h; ++y) rows[y] = bytes.data() + y * w;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline Tensor<double> read_png_gray8(const std::filesystem::path& path) {
  std::FILE* fp = std::fopen(path.string().c_str(), "rb");
  check_usage(fp != nullptr, "read_png_gray8: cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw integrity_error("read_png_gray8: libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw integrity_error("read_png_gray8: not a readable png: " + path.string());
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  // Normalize any input to 8-bit single-channel gray.
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (png_get_color_type(png, info) & PNG_COLOR_MASK_COLOR)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);

  const int64_t h = png_get_image_height(png, info);
  const int64_t w = png_get_image_width(png, info);
  if (png_get_channels(png, info) != 1) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw integrity_error("read_png_gray8: could not reduce to one channel: " + path.string());
  }
  std::vector<unsigned char> bytes(static_cast<size_t>(h * w));
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int64_t y = 0; y < h; ++y) rows[y] = bytes.data() + y * w;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);

  Tensor<double> img({h, w});
  for (int64_t i = 0; i < h * w; ++i) img[i] = bytes[i] / 255.0;
  return img;
}

}  // namespace ridgegen

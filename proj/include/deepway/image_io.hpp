#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "deepway/core.hpp"

namespace deepway {

// 8-bit raster with 1 (gray) or 3 (RGB) channels, row-major, interleaved.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> data;
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] inline void png_error_handler(png_structp, png_const_charp msg) {
  throw format_error(std::string("png: ") + msg);
}
inline void png_warning_handler(png_structp, png_const_charp) {}

}  // namespace detail

inline void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw argument_error("png writer supports 1 or 3 channels");
  detail::FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) throw storage_error("cannot open for writing: " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            detail::png_error_handler, detail::png_warning_handler);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};

  png_init_io(png, file.get());
  png_set_IHDR(png, info, img.width, img.height, 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.data.data() + y * stride));
  png_write_end(png, nullptr);
  if (std::fflush(file.get()) != 0) throw storage_error("write failed: " + path.string());
}

// Reads any PNG and converts it to 8-bit grayscale.
inline Image read_png_gray(const std::filesystem::path& path) {
  detail::FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) throw storage_error("cannot open: " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw format_error("not a PNG file: " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           detail::png_error_handler, detail::png_warning_handler);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};

  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (depth == 16) png_set_strip_16(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);

  Image img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = 1;
  if (png_get_rowbytes(png, info) != static_cast<std::size_t>(img.width))
    throw format_error("unexpected PNG layout after conversion: " + path.string());
  img.data.resize(static_cast<std::size_t>(img.width) * img.height);
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = img.data.data() + static_cast<std::size_t>(y) * img.width;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  return img;
}

inline void write_mask_png(const std::filesystem::path& path, const OccupancyGrid& grid) {
  Image img{grid.width(), grid.height(), 1, {}};
  img.data.reserve(grid.cells().size());
  for (auto c : grid.cells()) img.data.push_back(c ? 255 : 0);
  write_png(path, img);
}

// Any nonzero value is occupied; values other than 0/255 trigger a warning.
inline OccupancyGrid read_mask_png(const std::filesystem::path& path, std::ostream* warn = &std::cerr) {
  Image img = read_png_gray(path);
  std::vector<std::uint8_t> cells(img.data.size());
  bool odd = false;
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const auto v = img.data[i];
    if (v != 0 && v != 255) odd = true;
    cells[i] = v ? 1 : 0;
  }
  if (odd && warn)
    *warn << "warning: " << path.string() << " has values other than 0/255; nonzero treated as occupied\n";
  return OccupancyGrid(img.height, img.width, std::move(cells));
}

}  // namespace deepway

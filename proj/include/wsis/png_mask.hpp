#pragma once

// VOC-style label masks stored as 8-bit grayscale or paletted PNG.
// Requires linking against libpng.

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "wsis/core.hpp"

namespace wsis::png {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void warning_sink(png_structp, png_const_charp) {}

}  // namespace detail

/// Raw 8-bit sample plane from a single-channel or paletted PNG.
inline Plane<int> read_index_plane(const std::filesystem::path& path) {
  detail::FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) throw IoError("cannot open '" + path.string() + "'");

  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw FormatError("'" + path.string() + "' is not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                           detail::warning_sink);
  if (!png) throw Error("libpng: cannot allocate read struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("libpng: cannot allocate info struct");
  }

  // Everything touched after setjmp lives in plain storage owned outside the
  // jump scope.
  std::vector<png_byte> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0, height = 0;
  int bit_depth = 0, color_type = 0;
  std::string failure;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("'" + path.string() + "': corrupt PNG data");
  }

  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_get_IHDR(png, info, &width, &height, &bit_depth, &color_type, nullptr, nullptr, nullptr);

  if (color_type != PNG_COLOR_TYPE_GRAY && color_type != PNG_COLOR_TYPE_PALETTE)
    failure = "'" + path.string() + "': only grayscale or paletted PNG masks are supported";
  else if (bit_depth > 8)
    failure = "'" + path.string() + "': 16-bit PNG masks are not supported";

  if (failure.empty()) {
    if (bit_depth < 8) png_set_packing(png);  // keeps raw indices, one per byte
    png_read_update_info(png, info);
    pixels.resize(static_cast<std::size_t>(width) * height);
    rows.resize(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * width;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (!failure.empty()) throw FormatError(failure);

  const ImageGrid grid(static_cast<int>(height), static_cast<int>(width));
  return Plane<int>(grid, std::vector<int>(pixels.begin(), pixels.end()));
}

/// Label mask → SemanticMap. Value 255 is recorded as ignore and stored as
/// background; num_classes is the largest remaining label (at least 1).
inline SemanticMap load_mask_png(const std::filesystem::path& path) {
  auto labels = read_index_plane(path);
  PixelSet ignored;
  int max_label = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == SemanticMap::kIgnoreLabel) {
      ignored.push_back(static_cast<std::int32_t>(i));
      labels[i] = 0;
    } else {
      max_label = std::max(max_label, labels[i]);
    }
  }
  return SemanticMap(std::move(labels), std::max(1, max_label), std::move(ignored));
}

/// The standard 256-entry VOC colour map.
inline std::vector<png_color> voc_palette() {
  std::vector<png_color> pal(256);
  for (int i = 0; i < 256; ++i) {
    int r = 0, g = 0, b = 0, c = i;
    for (int j = 0; j < 8; ++j) {
      r |= ((c >> 0) & 1) << (7 - j);
      g |= ((c >> 1) & 1) << (7 - j);
      b |= ((c >> 2) & 1) << (7 - j);
      c >>= 3;
    }
    pal[i] = png_color{static_cast<png_byte>(r), static_cast<png_byte>(g), static_cast<png_byte>(b)};
  }
  return pal;
}

/// Writes an 8-bit paletted (VOC palette) PNG of label values in [0, 255].
inline void save_mask_png(const std::filesystem::path& path, const Plane<int>& labels) {
  for (int v : labels.values())
    if (v < 0 || v > 255) throw ValidationError("PNG mask value outside [0, 255]");

  detail::FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) throw IoError("cannot write '" + path.string() + "'");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                            detail::warning_sink);
  if (!png) throw Error("libpng: cannot allocate write struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("libpng: cannot allocate info struct");
  }

  const auto w = static_cast<std::size_t>(labels.width());
  std::vector<png_byte> pixels(labels.values().begin(), labels.values().end());
  std::vector<png_bytep> rows(static_cast<std::size_t>(labels.height()));
  for (std::size_t y = 0; y < rows.size(); ++y) rows[y] = pixels.data() + y * w;
  const auto palette = voc_palette();

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng: failed writing '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(labels.width()),
               static_cast<png_uint_32>(labels.height()), 8, PNG_COLOR_TYPE_PALETTE,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_PLTE(png, info, palette.data(), static_cast<int>(palette.size()));
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace wsis::png

#pragma once

#include <png.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "semdepth/grid.hpp"

namespace semdepth {

struct Palette {
  std::array<std::array<std::uint8_t, 3>, 256> colors{};
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) {
    throw std::runtime_error(std::string("cannot open '") + path + "' for " +
                             (mode[0] == 'r' ? "reading" : "writing"));
  }
  return f;
}

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;

  PngReader() {
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png) info = png_create_info_struct(png);
    if (!png || !info) {
      png_destroy_read_struct(&png, &info, nullptr);
      throw std::runtime_error("libpng: failed to allocate read structs");
    }
  }
  ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }
  PngReader(const PngReader&) = delete;
  PngReader& operator=(const PngReader&) = delete;
};

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;

  PngWriter() {
    png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png) info = png_create_info_struct(png);
    if (!png || !info) {
      png_destroy_write_struct(&png, &info);
      throw std::runtime_error("libpng: failed to allocate write structs");
    }
  }
  ~PngWriter() { png_destroy_write_struct(&png, &info); }
  PngWriter(const PngWriter&) = delete;
  PngWriter& operator=(const PngWriter&) = delete;
};

struct RawPng {
  int height = 0;
  int width = 0;
  int channels = 0;
  int bit_depth = 0;
  int color_type = 0;
  std::vector<std::uint8_t> bytes;  // row-major, host-endian for 16-bit
};

/// Reads a PNG without palette expansion; 16-bit samples are byte-swapped to
/// host order.
inline RawPng read_raw_png(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  PngReader r;
  RawPng out;
  if (setjmp(png_jmpbuf(r.png))) {
    throw std::runtime_error("failed to decode PNG '" + path + "'");
  }
  png_init_io(r.png, f.get());
  png_read_info(r.png, r.info);
  out.width = static_cast<int>(png_get_image_width(r.png, r.info));
  out.height = static_cast<int>(png_get_image_height(r.png, r.info));
  out.bit_depth = png_get_bit_depth(r.png, r.info);
  out.color_type = png_get_color_type(r.png, r.info);
  if (out.bit_depth < 8) png_set_packing(r.png);
  if (out.bit_depth == 16) png_set_swap(r.png);
  png_read_update_info(r.png, r.info);
  out.channels = png_get_channels(r.png, r.info);
  const std::size_t rowbytes = png_get_rowbytes(r.png, r.info);
  out.bytes.resize(rowbytes * out.height);
  std::vector<png_bytep> rows(out.height);
  for (int y = 0; y < out.height; ++y) rows[y] = out.bytes.data() + rowbytes * y;
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);
  return out;
}

}  // namespace detail

/// 8-bit RGB image as a Grid with values 0..255.
inline Grid read_png_rgb8(const std::string& path) {
  detail::RawPng raw = detail::read_raw_png(path);
  if (raw.bit_depth != 8 || raw.color_type != PNG_COLOR_TYPE_RGB || raw.channels != 3) {
    throw std::runtime_error("'" + path + "' is not an 8-bit RGB PNG");
  }
  Grid img(raw.height, raw.width, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    img.data[i] = static_cast<double>(raw.bytes[i]);
  }
  return img;
}

inline void write_png_rgb8(const std::string& path, const Grid& img) {
  if (img.channels != 3) throw std::invalid_argument("write_png_rgb8: need 3 channels");
  detail::FilePtr f = detail::open_file(path, "wb");
  detail::PngWriter w;
  if (setjmp(png_jmpbuf(w.png))) {
    throw std::runtime_error("failed to encode PNG '" + path + "'");
  }
  png_init_io(w.png, f.get());
  png_set_IHDR(w.png, w.info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        double v = img.at(y, x, c);
        if (!(v >= 0.0 && v <= 255.0)) {
          throw std::invalid_argument("write_png_rgb8: value out of [0,255] at pixel (" +
                                      std::to_string(y) + "," + std::to_string(x) + ")");
        }
        row[static_cast<std::size_t>(x) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(v));
      }
    }
    png_write_row(w.png, row.data());
  }
  png_write_end(w.png, nullptr);
}

/// 8-bit class-index image. Accepts palette or grayscale PNGs; raw index
/// values are returned either way.
inline LabelMap read_png_labels(const std::string& path) {
  detail::RawPng raw = detail::read_raw_png(path);
  if (raw.bit_depth > 8 || raw.channels != 1 ||
      (raw.color_type != PNG_COLOR_TYPE_PALETTE && raw.color_type != PNG_COLOR_TYPE_GRAY)) {
    throw std::runtime_error("'" + path + "' is not an 8-bit indexed/gray PNG");
  }
  LabelMap labels(raw.height, raw.width);
  for (std::size_t i = 0; i < labels.labels.size(); ++i) labels.labels[i] = raw.bytes[i];
  return labels;
}

inline void write_png_labels(const std::string& path, const LabelMap& labels,
                             const Palette& palette) {
  detail::FilePtr f = detail::open_file(path, "wb");
  detail::PngWriter w;
  if (setjmp(png_jmpbuf(w.png))) {
    throw std::runtime_error("failed to encode PNG '" + path + "'");
  }
  png_init_io(w.png, f.get());
  png_set_IHDR(w.png, w.info, labels.width, labels.height, 8, PNG_COLOR_TYPE_PALETTE,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  std::array<png_color, 256> plte;
  for (int i = 0; i < 256; ++i) {
    plte[i].red = palette.colors[i][0];
    plte[i].green = palette.colors[i][1];
    plte[i].blue = palette.colors[i][2];
  }
  png_set_PLTE(w.png, w.info, plte.data(), 256);
  png_write_info(w.png, w.info);
  for (int y = 0; y < labels.height; ++y) {
    png_write_row(w.png, const_cast<png_bytep>(&labels.labels[static_cast<std::size_t>(y) *
                                                              labels.width]));
  }
  png_write_end(w.png, nullptr);
}

struct Gray16 {
  int height = 0;
  int width = 0;
  std::vector<std::uint16_t> values;  // row-major
};

inline Gray16 read_png_gray16(const std::string& path) {
  detail::RawPng raw = detail::read_raw_png(path);
  if (raw.bit_depth != 16 || raw.color_type != PNG_COLOR_TYPE_GRAY || raw.channels != 1) {
    throw std::runtime_error("'" + path + "' is not a 16-bit grayscale PNG");
  }
  Gray16 out;
  out.height = raw.height;
  out.width = raw.width;
  out.values.resize(static_cast<std::size_t>(raw.height) * raw.width);
  std::memcpy(out.values.data(), raw.bytes.data(), out.values.size() * sizeof(std::uint16_t));
  return out;
}

inline void write_png_gray16(const std::string& path, const Gray16& img) {
  if (img.height < 1 || img.width < 1 ||
      img.values.size() != static_cast<std::size_t>(img.height) * img.width) {
    throw std::invalid_argument("write_png_gray16: inconsistent dimensions");
  }
  detail::FilePtr f = detail::open_file(path, "wb");
  detail::PngWriter w;
  if (setjmp(png_jmpbuf(w.png))) {
    throw std::runtime_error("failed to encode PNG '" + path + "'");
  }
  png_init_io(w.png, f.get());
  png_set_IHDR(w.png, w.info, img.width, img.height, 16, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  png_set_swap(w.png);  // values are host-endian (little on this target)
  for (int y = 0; y < img.height; ++y) {
    png_write_row(w.png, const_cast<png_bytep>(reinterpret_cast<const png_byte*>(
                              &img.values[static_cast<std::size_t>(y) * img.width])));
  }
  png_write_end(w.png, nullptr);
}

}  // namespace semdepth

#include "maskdepth/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

// libpng reports errors through longjmp. Every object with a destructor is
// constructed before setjmp so unwinding by longjmp skips nothing.

namespace maskdepth {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr file(std::fopen(path.c_str(), mode));
  if (!file) throw DataError("cannot open " + path.string());
  return file;
}

struct Decoded {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  int color_type = 0;
  std::vector<unsigned char> bytes;
};

enum class ReadMode { rgb8, raw };

bool decode_png(std::FILE* file, ReadMode mode, Decoded& out, std::vector<png_bytep>& rows) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) return false;
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_init_io(png, file);
  png_read_info(png, info);
  out.color_type = png_get_color_type(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  if (mode == ReadMode::rgb8) {
    if (out.bit_depth == 16) png_set_strip_16(png);
    if (out.color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (out.color_type == PNG_COLOR_TYPE_GRAY && out.bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (out.color_type == PNG_COLOR_TYPE_GRAY || out.color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.bytes.resize(stride * static_cast<std::size_t>(out.height));
  rows.resize(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y) rows[y] = out.bytes.data() + stride * static_cast<std::size_t>(y);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

bool encode_png(std::FILE* file, int width, int height, int bit_depth, int color_type,
                std::vector<png_bytep>& rows) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) return false;
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, file);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace

ImageTensor read_png_rgb(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  Decoded decoded;
  std::vector<png_bytep> rows;
  if (!decode_png(file.get(), ReadMode::rgb8, decoded, rows) || decoded.channels != 3) {
    throw DataError("malformed PNG image: " + path.string());
  }
  ImageTensor image(3, decoded.height, decoded.width);
  for (int y = 0; y < decoded.height; ++y) {
    for (int x = 0; x < decoded.width; ++x) {
      for (int c = 0; c < 3; ++c) image.at(c, y, x) = static_cast<float>(rows[y][x * 3 + c]) / 255.0f;
    }
  }
  return image;
}

void write_png_rgb(const std::filesystem::path& path, const ImageTensor& image) {
  if (image.channels != 3) throw ShapeError("write_png_rgb needs 3 channels");
  std::vector<unsigned char> bytes(static_cast<std::size_t>(image.pixels()) * 3);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        bytes[(static_cast<std::size_t>(y) * image.width + x) * 3 + c] =
            static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
  for (int y = 0; y < image.height; ++y) rows[y] = bytes.data() + static_cast<std::size_t>(y) * image.width * 3;
  FilePtr file = open_file(path, "wb");
  if (!encode_png(file.get(), image.width, image.height, 8, PNG_COLOR_TYPE_RGB, rows)) {
    throw DataError("failed to write PNG " + path.string());
  }
}

Pixels16 read_png_gray16(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  Decoded decoded;
  std::vector<png_bytep> rows;
  if (!decode_png(file.get(), ReadMode::raw, decoded, rows)) throw DataError("malformed PNG: " + path.string());
  if (decoded.color_type != PNG_COLOR_TYPE_GRAY || decoded.bit_depth != 16) {
    throw DataError("depth PNG must be single-channel 16-bit: " + path.string());
  }
  Pixels16 pixels(decoded.height, decoded.width);
  for (int y = 0; y < decoded.height; ++y) {
    for (int x = 0; x < decoded.width; ++x) {
      pixels(y, x) = static_cast<std::uint16_t>((rows[y][2 * x] << 8) | rows[y][2 * x + 1]);
    }
  }
  return pixels;
}

void write_png_gray16(const std::filesystem::path& path, const Pixels16& pixels) {
  const auto height = static_cast<int>(pixels.rows());
  const auto width = static_cast<int>(pixels.cols());
  std::vector<unsigned char> bytes(static_cast<std::size_t>(height) * width * 2);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::uint16_t v = pixels(y, x);
      const std::size_t at = (static_cast<std::size_t>(y) * width + x) * 2;
      bytes[at] = static_cast<unsigned char>(v >> 8);
      bytes[at + 1] = static_cast<unsigned char>(v & 0xff);
    }
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) rows[y] = bytes.data() + static_cast<std::size_t>(y) * width * 2;
  FilePtr file = open_file(path, "wb");
  if (!encode_png(file.get(), width, height, 16, PNG_COLOR_TYPE_GRAY, rows)) {
    throw DataError("failed to write PNG " + path.string());
  }
}

}  // namespace maskdepth

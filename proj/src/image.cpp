#include "retex/image.hpp"

#include <cmath>
#include <cstdio>
#include <memory>
#include <png.h>
#include <stdexcept>

namespace retex {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void save_png(const std::string& path, const Image& image, int bit_depth) {
  if (image.empty()) fail("save_png: empty image: " + path);
  if (image.channels != 1 && image.channels != 3)
    fail("save_png: unsupported channel count " + std::to_string(image.channels) +
         ": " + path);
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) fail("save_png: cannot open " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, nullptr);
  if (!png) fail("save_png: png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail("save_png: png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("save_png: libpng error writing " + path);
  }
  png_init_io(png, file.get());
  int color = image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), bit_depth, color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::size_t samples = image.width * image.channels;
  double scale = bit_depth == 8 ? 255.0 : 65535.0;
  if (bit_depth == 8) {
    std::vector<png_byte> row(samples);
    for (std::size_t y = 0; y < image.height; ++y) {
      for (std::size_t i = 0; i < samples; ++i) {
        double v = image.pixels[y * samples + i];
        v = v < 0 ? 0 : (v > 1 ? 1 : v);
        row[i] = static_cast<png_byte>(std::lround(v * scale));
      }
      png_write_row(png, row.data());
    }
  } else {
    png_set_swap(png);  // samples are little-endian in memory
    std::vector<png_uint_16> row(samples);
    for (std::size_t y = 0; y < image.height; ++y) {
      for (std::size_t i = 0; i < samples; ++i) {
        double v = image.pixels[y * samples + i];
        v = v < 0 ? 0 : (v > 1 ? 1 : v);
        row[i] = static_cast<png_uint_16>(std::lround(v * scale));
      }
      png_write_row(png, reinterpret_cast<png_bytep>(row.data()));
    }
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image make_image(std::size_t width, std::size_t height, std::size_t channels,
                 double fill) {
  Image image;
  image.width = width;
  image.height = height;
  image.channels = channels;
  image.pixels.assign(width * height * channels, fill);
  return image;
}

double quantize_unit(double v, std::size_t levels) {
  double steps = static_cast<double>(levels - 1);
  double q = std::round((v < 0 ? 0 : (v > 1 ? 1 : v)) * steps) / steps;
  return q;
}

void quantize_image(Image& image, std::size_t levels) {
  for (double& v : image.pixels) v = quantize_unit(v, levels);
}

void save_png8(const std::string& path, const Image& image) {
  save_png(path, image, 8);
}

void save_png16(const std::string& path, const Image& image) {
  save_png(path, image, 16);
}

Image load_png(const std::string& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) fail("load_png: cannot open " + path);
  png_byte header[8];
  if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8))
    fail("load_png: not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           nullptr, nullptr);
  if (!png) fail("load_png: png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail("load_png: png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("load_png: libpng error reading " + path);
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_uint_32 width = png_get_image_width(png, info);
  png_uint_32 height = png_get_image_height(png, info);
  png_byte color = png_get_color_type(png, info);
  png_byte depth = png_get_bit_depth(png, info);

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);
  png_read_update_info(png, info);

  depth = png_get_bit_depth(png, info);
  png_byte channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3)
    fail("load_png: unsupported channel count " + std::to_string(channels) + ": " +
         path);

  Image image = make_image(width, height, channels);
  std::size_t samples = image.width * image.channels;
  double scale = depth == 8 ? 255.0 : 65535.0;
  if (depth == 8) {
    std::vector<png_byte> row(samples);
    for (std::size_t y = 0; y < height; ++y) {
      png_read_row(png, row.data(), nullptr);
      for (std::size_t i = 0; i < samples; ++i)
        image.pixels[y * samples + i] = row[i] / scale;
    }
  } else {
    std::vector<png_uint_16> row(samples);
    for (std::size_t y = 0; y < height; ++y) {
      png_read_row(png, reinterpret_cast<png_bytep>(row.data()), nullptr);
      for (std::size_t i = 0; i < samples; ++i)
        image.pixels[y * samples + i] = row[i] / scale;
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

Image resize_bilinear(const Image& image, std::size_t width, std::size_t height) {
  if (image.empty()) fail("resize_bilinear: empty image");
  if (width == image.width && height == image.height) return image;
  Image out = make_image(width, height, image.channels);
  auto tap = [](std::size_t o, std::size_t out_size, std::size_t in_size,
                std::size_t& i0, std::size_t& i1, double& w1) {
    double src = (static_cast<double>(o) + 0.5) * static_cast<double>(in_size) /
                     static_cast<double>(out_size) -
                 0.5;
    if (src < 0) src = 0;
    double f = std::floor(src);
    i0 = static_cast<std::size_t>(f);
    if (i0 >= in_size - 1) {
      i0 = i1 = in_size - 1;
      w1 = 0;
    } else {
      i1 = i0 + 1;
      w1 = src - f;
    }
  };
  for (std::size_t y = 0; y < height; ++y) {
    std::size_t y0, y1;
    double wy;
    tap(y, height, image.height, y0, y1, wy);
    for (std::size_t x = 0; x < width; ++x) {
      std::size_t x0, x1;
      double wx;
      tap(x, width, image.width, x0, x1, wx);
      for (std::size_t c = 0; c < image.channels; ++c) {
        double v = (1 - wy) * ((1 - wx) * image.at(y0, x0, c) +
                               wx * image.at(y0, x1, c)) +
                   wy * ((1 - wx) * image.at(y1, x0, c) + wx * image.at(y1, x1, c));
        out.at(y, x, c) = v;
      }
    }
  }
  return out;
}

Image crop_image(const Image& image, std::size_t x0, std::size_t y0,
                 std::size_t width, std::size_t height) {
  if (x0 + width > image.width || y0 + height > image.height)
    fail("crop_image: crop " + std::to_string(width) + "x" +
         std::to_string(height) + "+" + std::to_string(x0) + "+" +
         std::to_string(y0) + " outside " + std::to_string(image.width) + "x" +
         std::to_string(image.height));
  Image out = make_image(width, height, image.channels);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < image.channels; ++c)
        out.at(y, x, c) = image.at(y0 + y, x0 + x, c);
  return out;
}

}  // namespace retex

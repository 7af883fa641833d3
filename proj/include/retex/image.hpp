#pragma once

// In-memory images and PNG I/O.
//
// An Image is HWC row-major with double values in [0,1].  PNGs are written
// as 8-bit or 16-bit RGB (or grayscale for single-channel images); loading
// maps sample values back to [0,1] by dividing by the depth maximum.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "retex/tensor.hpp"

namespace retex {

struct Image {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<double> pixels;  // height * width * channels

  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width + x) * channels + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
  bool empty() const { return pixels.empty(); }
};

Image make_image(std::size_t width, std::size_t height, std::size_t channels,
                 double fill = 0.0);

// Texel index for a unit coordinate: floor(t * n) clamped into [0, n-1].
// Every nearest-texel lookup (photo synthesis, raster projection, texture
// recovery) shares this so the same (u, v) always lands on the same texel.
inline std::size_t texel_index(double t, std::size_t n) {
  double f = std::floor(t * static_cast<double>(n));
  if (f < 0) return 0;
  if (f >= static_cast<double>(n)) return n - 1;
  return static_cast<std::size_t>(f);
}

// Rounds to the nearest code of a uniform grid with `levels` codes on [0,1].
double quantize_unit(double v, std::size_t levels);
// Applies quantize_unit to every sample (the in-memory counterpart of a
// PNG round trip at the given bit depth).
void quantize_image(Image& image, std::size_t levels);

void save_png8(const std::string& path, const Image& image);
void save_png16(const std::string& path, const Image& image);
// Reads 8- or 16-bit grayscale or RGB PNGs; palette images are expanded,
// alpha is stripped.
Image load_png(const std::string& path);

// HWC image -> tensor of the same layout.
template <typename T>
TensorT<T> image_to_tensor(const Image& image) {
  std::vector<T> v(image.pixels.begin(), image.pixels.end());
  return TensorT<T>::from_data({image.height, image.width, image.channels},
                               std::move(v));
}

// [H,W,C] tensor -> image; values are copied verbatim (no clamping).
template <typename T>
Image tensor_to_image(const TensorT<T>& t) {
  if (t.shape().size() != 3)
    throw TensorError("tensor_to_image: need [H,W,C], have " + shape_str(t.shape()));
  Image image;
  image.height = t.dim(0);
  image.width = t.dim(1);
  image.channels = t.dim(2);
  image.pixels.assign(t.data().begin(), t.data().end());
  return image;
}

// Bilinear resize on raw image data (used for dataset preparation, not on
// the tape; the half-pixel source convention matches downsample_bilinear).
Image resize_bilinear(const Image& image, std::size_t width, std::size_t height);

// Crop of size (width, height) with top-left corner (x0, y0).
Image crop_image(const Image& image, std::size_t x0, std::size_t y0,
                 std::size_t width, std::size_t height);

}  // namespace retex

#pragma once

// Per-label textures and the projection operator.
//
// A neural texture maps (u, v) to RGB through a fixed random-frequency
// Fourier embedding followed by a small MLP; projection applies the texture
// owned by each pixel's label, so a rendered scene becomes a differentiable
// image of the current texture estimates.  A raster texture is the ablation
// variant: a plain trainable texel grid read by nearest lookup.
//
// Texel indexing everywhere: column texel_index(u, R), row
// R - 1 - texel_index(v, R), matching photo synthesis in the dataset module.

#include <cstdint>
#include <string>
#include <vector>

#include "retex/blob_io.hpp"
#include "retex/image.hpp"
#include "retex/tensor.hpp"

namespace retex {

template <typename T>
struct NeuralTextureT {
  TensorT<T> frequencies;          // [K,2], frozen (never gets gradient)
  std::vector<TensorT<T>> layers;  // W1,b1,W2,b2,W3,b3; trainable

  std::vector<TensorT<T>> parameters() const { return layers; }
};

// Frequencies ~ Normal(0, freq_sigma); weights uniform in
// +-1/sqrt(fan_in), biases zero; all draws fixed by the seed.
template <typename T>
NeuralTextureT<T> new_texture(std::size_t k, double freq_sigma,
                              std::uint64_t seed, std::size_t hidden = 128);

// [B,2K] embedding (sin g_1, cos g_1, ..., sin g_K, cos g_K) for
// g_k = f_k . (u,v).  Computed off the tape: neither uv nor the frozen
// frequencies take gradients.
template <typename T>
TensorT<T> embed(const NeuralTextureT<T>& tex, const std::vector<double>& us,
                 const std::vector<double>& vs);

// MLP forward: leaky-relu(0.2) hidden layers, sigmoid output, [B,3].
template <typename T>
TensorT<T> evaluate(const NeuralTextureT<T>& tex, const TensorT<T>& embedding);

// Convenience: embed + evaluate.
template <typename T>
TensorT<T> evaluate_uv(const NeuralTextureT<T>& tex,
                       const std::vector<double>& us,
                       const std::vector<double>& vs);

template <typename T>
struct RasterTextureT {
  TensorT<T> grid;  // [R,R,3] trainable texels, row 0 at v = 1
  std::size_t resolution() const { return grid.dim(0); }
};

// Mid-gray grid; unconstrained during training, clamp on export.
template <typename T>
RasterTextureT<T> new_raster_texture(std::size_t resolution, T fill = T(0.5));

// Texture image (for example a dataset ground-truth file) as a raster
// texture; rows are taken verbatim.
template <typename T>
RasterTextureT<T> raster_texture_from_image(const Image& image);

// Either all-neural or all-raster; index i serves label i + 1.
template <typename T>
struct TextureBankT {
  std::vector<NeuralTextureT<T>> neural;
  std::vector<RasterTextureT<T>> raster;

  bool is_raster() const { return !raster.empty(); }
  std::size_t label_count() const {
    return is_raster() ? raster.size() : neural.size();
  }
  std::vector<TensorT<T>> parameters() const;
};

// L neural textures, each with its own frozen frequency draw seeded from
// (seed, label); share_frequencies draws them once for all labels.
template <typename T>
TextureBankT<T> make_texture_bank(std::size_t label_count, std::size_t k,
                                  double freq_sigma, std::uint64_t seed,
                                  std::size_t hidden = 128,
                                  bool share_frequencies = false);

template <typename T>
TextureBankT<T> make_raster_bank(std::size_t label_count,
                                 std::size_t resolution);

// Projection: [H,W,3] tensor with pixel (y,x) = texture[label](u,v) taken
// from the scene image.  Gradient reaches a texture only through pixels
// bearing its label.  A pixel whose label channel decodes to no surface is
// an error naming the pixel.
template <typename T>
TensorT<T> project(const TextureBankT<T>& bank, const Image& uvl);

// Texel-center bake of a neural texture onto an R x R grid.
template <typename T>
RasterTextureT<T> bake(const NeuralTextureT<T>& tex, std::size_t resolution);

// Texture i serves label perm[i-1] afterwards; perm must be a bijection of
// 1..L.
template <typename T>
void swap_labels(TextureBankT<T>& bank, const std::vector<std::size_t>& perm);

// Checkpoint blob (frequencies and weights, or raster grids).
template <typename T>
void save_bank(const TextureBankT<T>& bank, const std::string& path);
template <typename T>
TextureBankT<T> load_bank(const std::string& path);

// Blob-embedded forms ("bank/" and "tex<i>/" sections), for containers that
// hold a bank next to other state.
template <typename T>
void save_bank(const TextureBankT<T>& bank, BlobWriter& writer);
template <typename T>
TextureBankT<T> load_bank(const BlobReader& reader);

using NeuralTexture = NeuralTextureT<double>;
using RasterTexture = RasterTextureT<double>;
using TextureBank = TextureBankT<double>;

}  // namespace retex

#pragma once

// Unprojection: scatter photos back into texture space.
//
// Each photo pixel carries (u, v, label) through the scene image, so its
// color can be averaged into a per-label texel grid.  The scatter is a
// differentiable mean: the backward pass hands a texel's gradient back to
// its contributing pixels in equal 1/count shares.  Batches of
// unprojections drive the consistency loss (surfaces should look the same
// from every view) and, averaged, yield recovered textures.
//
// Grid axes are [label, U, V, channel] with U = texel_index(u, D) and
// V = texel_index(v, D); u = v = 1 clamps into the last texel.

#include <cstdint>
#include <vector>

#include "retex/image.hpp"
#include "retex/tensor.hpp"

namespace retex {

template <typename T>
struct UnprojectionT {
  TensorT<T> values;  // [L,D,D,3] per-texel mean color, 0 where empty
  std::vector<std::uint32_t> counts;  // L*D*D pixels that landed on each texel
  std::size_t label_count = 0;
  std::size_t resolution = 0;

  std::size_t texel(std::size_t label, std::size_t u_idx,
                    std::size_t v_idx) const {
    return ((label - 1) * resolution + u_idx) * resolution + v_idx;
  }
};

// Scatter-mean of the photo over the scene's (u, v, label) coordinates.
// Accumulation runs in row-major pixel order, so results are reproducible
// bit for bit.  Undecodable labels and shape mismatches are errors.
template <typename T>
UnprojectionT<T> unproject(const Image& scene, const TensorT<T>& photo,
                           std::size_t label_count,
                           std::size_t resolution = 128);

// Mean per-texel-channel standard deviation across the batch, normalized by
// the full grid size L*D*D*3.  A texel empty in some sample is normally
// excluded from that texel's population (visibility changes alone cost
// nothing); include_empty keeps the strict formula where every sample
// participates with its stored zero.  Texels with fewer than two
// participants contribute nothing.
template <typename T>
TensorT<T> consistency_loss(const std::vector<UnprojectionT<T>>& batch,
                            bool include_empty = false);

template <typename T>
struct RecoveredTextureT {
  std::vector<T> means;  // [L,D,D,3], mean over samples that saw the texel
  std::vector<std::uint32_t> sample_counts;       // samples with a hit
  std::vector<std::uint32_t> observation_counts;  // total pixel hits
  std::size_t label_count = 0;
  std::size_t resolution = 0;

  std::size_t texel(std::size_t label, std::size_t u_idx,
                    std::size_t v_idx) const {
    return ((label - 1) * resolution + u_idx) * resolution + v_idx;
  }
};

// Two-level average: per sample the scatter already averaged pixels, here
// the per-sample means are averaged again over the samples that saw each
// texel.  Evaluation artifact, not on the tape.
template <typename T>
RecoveredTextureT<T> recovered_texture(const std::vector<UnprojectionT<T>>& batch);

// One label's grid as an image (texel (U, V) at column U, row D - 1 - V,
// matching the texture PNG convention).
template <typename T>
Image texture_image(const RecoveredTextureT<T>& recovered, std::size_t label);
// Same layout, total observation count per texel as a single channel.
template <typename T>
Image observation_image(const RecoveredTextureT<T>& recovered,
                        std::size_t label);

struct ShadowDecomposition {
  Image reprojection;  // recovered texture read back through the scene
  Image shadow;        // photo - reprojection, signed
  Image valid;         // 1 where the recovered texel was observed
};

// Splits a photo into the surface color predicted by the recovered texture
// and a signed residual.  reprojection + shadow == photo everywhere; where
// the recovered texture is empty the reprojection is 0 and valid is 0.
template <typename T>
ShadowDecomposition shadow_decompose(const Image& scene, const Image& photo,
                                     const RecoveredTextureT<T>& recovered);

using Unprojection = UnprojectionT<double>;
using RecoveredTexture = RecoveredTextureT<double>;

}  // namespace retex

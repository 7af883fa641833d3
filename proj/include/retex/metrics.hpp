#pragma once

// Image similarity metrics on the autodiff tape: mean squared distance,
// multi-scale structural similarity, and their combination
// omega = l2 - msssim, the quantity every training loss minimizes.
//
// msssim follows the standard construction: a Gaussian-window SSIM whose
// contrast/structure term is averaged at every dyadic scale, the luminance
// term only at the coarsest, combined as a weighted product.  Inputs are
// [N,C,H,W]; statistics pool over batch, channels and pixels, so the result
// is a batch mean.  Latent feature maps go through the same pipeline, just
// with more channels.

#include <cstddef>
#include <vector>

#include "retex/tensor.hpp"

namespace retex {

struct MsssimConfig {
  std::size_t max_scales = 5;
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01, k2 = 0.03;  // stability constants, dynamic range 1
  // Published five-scale weights; renormalized over the scales in use.
  std::vector<double> weights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
};

// Scales usable for an HxW image: every dyadic level whose downsampled size
// still fits the window, capped at max_scales.  64x64 with an 11-tap window
// gives 3.
std::size_t msssim_scale_count(std::size_t h, std::size_t w,
                               const MsssimConfig& cfg = {});

// Mean over all elements of the squared difference; any equal shapes.
template <typename T>
TensorT<T> l2(const TensorT<T>& x, const TensorT<T>& y);

// Scalar in [0, 1] for images (negative correlation is clamped before the
// weighted product).  Rejects images smaller than the window.
template <typename T>
TensorT<T> msssim(const TensorT<T>& x, const TensorT<T>& y,
                  const MsssimConfig& cfg = {});

// l2 - msssim; -1 at perfect similarity.
template <typename T>
TensorT<T> omega(const TensorT<T>& x, const TensorT<T>& y,
                 const MsssimConfig& cfg = {});

}  // namespace retex

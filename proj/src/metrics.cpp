#include "retex/metrics.hpp"

#include <cmath>
#include <string>

namespace retex {

std::size_t msssim_scale_count(std::size_t h, std::size_t w,
                               const MsssimConfig& cfg) {
  std::size_t scales = 0;
  while (scales < cfg.max_scales && h >= cfg.window && w >= cfg.window) {
    ++scales;
    h /= 2;
    w /= 2;
  }
  return scales;
}

template <typename T>
TensorT<T> l2(const TensorT<T>& x, const TensorT<T>& y) {
  if (x.shape() != y.shape())
    throw TensorError("l2: shape mismatch " + shape_str(x.shape()) + " vs " +
                      shape_str(y.shape()));
  return reduce_mean(square(sub(x, y)));
}

namespace {

// [1,1,K,K] separable Gaussian, normalized to sum 1.
template <typename T>
TensorT<T> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> g(size);
  double sum = 0, half = (static_cast<double>(size) - 1) / 2;
  for (std::size_t i = 0; i < size; ++i) {
    double d = static_cast<double>(i) - half;
    g[i] = std::exp(-d * d / (2 * sigma * sigma));
    sum += g[i];
  }
  std::vector<T> w(size * size);
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j)
      w[i * size + j] = static_cast<T>(g[i] * g[j] / (sum * sum));
  return TensorT<T>::from_data({1, 1, size, size}, std::move(w));
}

// Per-channel Gaussian blur: channels ride the batch axis through a
// single-channel convolution.
template <typename T>
TensorT<T> blur(const TensorT<T>& x, const TensorT<T>& window,
                std::size_t pad) {
  std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  TensorT<T> flat = reshape(x, {n * c, 1, h, w});
  TensorT<T> padded = pad_reflect2(flat, pad);
  TensorT<T> out = conv2d(padded, window, TensorT<T>{}, 1, 0);
  return reshape(out, {n, c, h, w});
}

}  // namespace

template <typename T>
TensorT<T> msssim(const TensorT<T>& x, const TensorT<T>& y,
                  const MsssimConfig& cfg) {
  if (x.shape() != y.shape())
    throw TensorError("msssim: shape mismatch " + shape_str(x.shape()) +
                      " vs " + shape_str(y.shape()));
  if (x.shape().size() != 4)
    throw TensorError("msssim: need [N,C,H,W], have " + shape_str(x.shape()));
  std::size_t scales = msssim_scale_count(x.dim(2), x.dim(3), cfg);
  if (scales == 0)
    throw TensorError("msssim: image " + std::to_string(x.dim(2)) + "x" +
                      std::to_string(x.dim(3)) + " is smaller than the window; need at least " +
                      std::to_string(cfg.window) + "x" + std::to_string(cfg.window));

  double weight_sum = 0;
  for (std::size_t s = 0; s < scales; ++s) weight_sum += cfg.weights[s];

  const T c1 = static_cast<T>(cfg.k1 * cfg.k1);
  const T c2 = static_cast<T>(cfg.k2 * cfg.k2);
  TensorT<T> window = gaussian_window<T>(cfg.window, cfg.sigma);
  std::size_t pad = cfg.window / 2;

  TensorT<T> cur_x = x, cur_y = y;
  TensorT<T> result;
  for (std::size_t s = 0; s < scales; ++s) {
    TensorT<T> mu_x = blur(cur_x, window, pad);
    TensorT<T> mu_y = blur(cur_y, window, pad);
    TensorT<T> var_x = sub(blur(square(cur_x), window, pad), square(mu_x));
    TensorT<T> var_y = sub(blur(square(cur_y), window, pad), square(mu_y));
    TensorT<T> cov = sub(blur(mul(cur_x, cur_y), window, pad), mul(mu_x, mu_y));
    TensorT<T> cs = div(affine(cov, T(2), c2),
                        affine(add(var_x, var_y), T(1), c2));
    TensorT<T> term;
    if (s + 1 == scales) {
      // Coarsest scale: the full per-pixel ssim map, luminance included.
      TensorT<T> lum = div(affine(mul(mu_x, mu_y), T(2), c1),
                           affine(add(square(mu_x), square(mu_y)), T(1), c1));
      term = reduce_mean(mul(lum, cs));
    } else {
      term = reduce_mean(cs);
    }
    T exponent = static_cast<T>(cfg.weights[s] / weight_sum);
    TensorT<T> factor = pow_scalar(relu(term), exponent);
    result = s == 0 ? factor : mul(result, factor);
    if (s + 1 < scales) {
      cur_x = avg_pool2(cur_x);
      cur_y = avg_pool2(cur_y);
    }
  }
  return result;
}

template <typename T>
TensorT<T> omega(const TensorT<T>& x, const TensorT<T>& y,
                 const MsssimConfig& cfg) {
  return sub(l2(x, y), msssim(x, y, cfg));
}

#define RETEX_METRICS_INSTANTIATE(T)                                       \
  template TensorT<T> l2<T>(const TensorT<T>&, const TensorT<T>&);         \
  template TensorT<T> msssim<T>(const TensorT<T>&, const TensorT<T>&,      \
                                const MsssimConfig&);                      \
  template TensorT<T> omega<T>(const TensorT<T>&, const TensorT<T>&,       \
                               const MsssimConfig&);

RETEX_METRICS_INSTANTIATE(float)
RETEX_METRICS_INSTANTIATE(double)

}  // namespace retex

#include "retex/unprojection.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "retex/scene.hpp"

namespace retex {

namespace {

// Per-pixel flat texel index for a scene image; shared by the scatter
// forward and backward and by shadow reprojection.
std::vector<std::uint32_t> pixel_texels(const Image& scene,
                                        std::size_t label_count,
                                        std::size_t resolution,
                                        const char* who) {
  if (scene.channels != 3)
    throw std::invalid_argument(std::string(who) +
                                ": scene image must have 3 channels");
  std::vector<std::uint32_t> flat(scene.width * scene.height);
  for (std::size_t y = 0; y < scene.height; ++y)
    for (std::size_t x = 0; x < scene.width; ++x) {
      auto label = decode_label_checked(scene.at(y, x, 2), label_count);
      if (!label)
        throw std::runtime_error(
            std::string(who) + ": pixel (" + std::to_string(x) + ", " +
            std::to_string(y) + ") has label value " +
            std::to_string(scene.at(y, x, 2)) +
            " which decodes to no surface");
      std::size_t u_idx = texel_index(scene.at(y, x, 0), resolution);
      std::size_t v_idx = texel_index(scene.at(y, x, 1), resolution);
      flat[y * scene.width + x] = static_cast<std::uint32_t>(
          ((*label - 1) * resolution + u_idx) * resolution + v_idx);
    }
  return flat;
}

}  // namespace

template <typename T>
UnprojectionT<T> unproject(const Image& scene, const TensorT<T>& photo,
                           std::size_t label_count, std::size_t resolution) {
  if (label_count < 1 || resolution < 1)
    throw std::invalid_argument("unproject: label count and resolution must be >= 1");
  Shape want{scene.height, scene.width, 3};
  if (photo.shape() != want)
    throw TensorError("unproject: photo " + shape_str(photo.shape()) +
                      " does not match the scene's " + shape_str(want));

  auto flat = std::make_shared<std::vector<std::uint32_t>>(
      pixel_texels(scene, label_count, resolution, "unproject"));

  UnprojectionT<T> result;
  result.label_count = label_count;
  result.resolution = resolution;
  std::size_t texels = label_count * resolution * resolution;
  result.counts.assign(texels, 0);
  for (std::uint32_t t : *flat) ++result.counts[t];

  std::vector<T> sums(texels * 3, T(0));
  std::span<const T> px = photo.data();
  for (std::size_t p = 0; p < flat->size(); ++p)
    for (std::size_t c = 0; c < 3; ++c)
      sums[(*flat)[p] * 3 + c] += px[p * 3 + c];
  for (std::size_t t = 0; t < texels; ++t)
    if (result.counts[t])
      for (std::size_t c = 0; c < 3; ++c)
        sums[t * 3 + c] /= static_cast<T>(result.counts[t]);

  auto counts = std::make_shared<std::vector<std::uint32_t>>(result.counts);
  result.values = make_op<T>(
      {label_count, resolution, resolution, 3}, std::move(sums), {photo},
      [flat, counts](detail::NodeT<T>& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < flat->size(); ++i) {
          std::uint32_t t = (*flat)[i];
          T share = T(1) / static_cast<T>((*counts)[t]);
          for (std::size_t c = 0; c < 3; ++c)
            p.grad[i * 3 + c] += node.grad[t * 3 + c] * share;
        }
      });
  return result;
}

template <typename T>
TensorT<T> consistency_loss(const std::vector<UnprojectionT<T>>& batch,
                            bool include_empty) {
  if (batch.size() < 2)
    throw std::invalid_argument(
        "consistency_loss: need at least two unprojections, got " +
        std::to_string(batch.size()));
  std::size_t l = batch[0].label_count, d = batch[0].resolution;
  for (const auto& u : batch)
    if (u.label_count != l || u.resolution != d)
      throw std::invalid_argument(
          "consistency_loss: unprojections disagree on grid dimensions");

  std::size_t n = batch.size(), texels = l * d * d;
  double norm = 1.0 / static_cast<double>(texels * 3);

  auto counts = std::make_shared<std::vector<std::vector<std::uint32_t>>>();
  std::vector<TensorT<T>> parents;
  for (const auto& u : batch) {
    counts->push_back(u.counts);
    parents.push_back(u.values);
  }

  // Population std per texel-channel over the participating samples, summed
  // and normalized by the full grid size.  The backward of
  // sqrt(sum((x - m)^2) / M) is (x_i - m) / (M * s); a zero-spread texel is
  // skipped in both passes (its subgradient is taken as 0).
  double total = 0;
  std::vector<std::size_t> members;
  for (std::size_t t = 0; t < texels; ++t) {
    members.clear();
    for (std::size_t i = 0; i < n; ++i)
      if (include_empty || (*counts)[i][t] > 0) members.push_back(i);
    if (members.size() < 2) continue;
    double m_count = static_cast<double>(members.size());
    for (std::size_t c = 0; c < 3; ++c) {
      // An all-equal population has std 0 exactly; computing it through the
      // mean would leave (x+x+x)/3 != x rounding dust behind.
      double first = static_cast<double>(batch[members[0]].values.data()[t * 3 + c]);
      bool all_equal = true;
      for (std::size_t i : members)
        if (static_cast<double>(batch[i].values.data()[t * 3 + c]) != first) {
          all_equal = false;
          break;
        }
      if (all_equal) continue;
      double mean = 0;
      for (std::size_t i : members)
        mean += static_cast<double>(batch[i].values.data()[t * 3 + c]);
      mean /= m_count;
      double var = 0;
      for (std::size_t i : members) {
        double dlt = static_cast<double>(batch[i].values.data()[t * 3 + c]) - mean;
        var += dlt * dlt;
      }
      total += std::sqrt(var / m_count);
    }
  }

  return make_op<T>(
      {}, {static_cast<T>(total * norm)}, std::move(parents),
      [counts, texels, n, norm, include_empty](detail::NodeT<T>& node) {
        T g = node.grad[0];
        std::vector<std::size_t> members;
        for (std::size_t t = 0; t < texels; ++t) {
          members.clear();
          for (std::size_t i = 0; i < n; ++i)
            if (include_empty || (*counts)[i][t] > 0) members.push_back(i);
          if (members.size() < 2) continue;
          double m_count = static_cast<double>(members.size());
          for (std::size_t c = 0; c < 3; ++c) {
            double first =
                static_cast<double>(node.parents[members[0]]->value[t * 3 + c]);
            bool all_equal = true;
            for (std::size_t i : members)
              if (static_cast<double>(node.parents[i]->value[t * 3 + c]) !=
                  first) {
                all_equal = false;
                break;
              }
            if (all_equal) continue;
            double mean = 0;
            for (std::size_t i : members)
              mean += static_cast<double>(
                  node.parents[i]->value[t * 3 + c]);
            mean /= m_count;
            double var = 0;
            for (std::size_t i : members) {
              double dlt =
                  static_cast<double>(node.parents[i]->value[t * 3 + c]) - mean;
              var += dlt * dlt;
            }
            double s = std::sqrt(var / m_count);
            if (s == 0) continue;
            for (std::size_t i : members) {
              auto& p = *node.parents[i];
              if (!p.requires_grad) continue;
              p.ensure_grad();
              double x = static_cast<double>(p.value[t * 3 + c]);
              p.grad[t * 3 + c] += static_cast<T>(
                  static_cast<double>(g) * norm * (x - mean) / (m_count * s));
            }
          }
        }
      });
}

template <typename T>
RecoveredTextureT<T> recovered_texture(
    const std::vector<UnprojectionT<T>>& batch) {
  if (batch.empty())
    throw std::invalid_argument("recovered_texture: empty batch");
  std::size_t l = batch[0].label_count, d = batch[0].resolution;
  for (const auto& u : batch)
    if (u.label_count != l || u.resolution != d)
      throw std::invalid_argument(
          "recovered_texture: unprojections disagree on grid dimensions");

  RecoveredTextureT<T> rec;
  rec.label_count = l;
  rec.resolution = d;
  std::size_t texels = l * d * d;
  rec.means.assign(texels * 3, T(0));
  rec.sample_counts.assign(texels, 0);
  rec.observation_counts.assign(texels, 0);
  for (const auto& u : batch) {
    std::span<const T> v = u.values.data();
    for (std::size_t t = 0; t < texels; ++t) {
      if (!u.counts[t]) continue;
      ++rec.sample_counts[t];
      rec.observation_counts[t] += u.counts[t];
      for (std::size_t c = 0; c < 3; ++c) rec.means[t * 3 + c] += v[t * 3 + c];
    }
  }
  for (std::size_t t = 0; t < texels; ++t)
    if (rec.sample_counts[t])
      for (std::size_t c = 0; c < 3; ++c)
        rec.means[t * 3 + c] /= static_cast<T>(rec.sample_counts[t]);
  return rec;
}

template <typename T>
Image texture_image(const RecoveredTextureT<T>& recovered, std::size_t label) {
  if (label < 1 || label > recovered.label_count)
    throw std::out_of_range("texture_image: label out of range");
  std::size_t d = recovered.resolution;
  Image img = make_image(d, d, 3);
  for (std::size_t u_idx = 0; u_idx < d; ++u_idx)
    for (std::size_t v_idx = 0; v_idx < d; ++v_idx) {
      std::size_t t = recovered.texel(label, u_idx, v_idx);
      for (std::size_t c = 0; c < 3; ++c)
        img.at(d - 1 - v_idx, u_idx, c) =
            static_cast<double>(recovered.means[t * 3 + c]);
    }
  return img;
}

template <typename T>
Image observation_image(const RecoveredTextureT<T>& recovered,
                        std::size_t label) {
  if (label < 1 || label > recovered.label_count)
    throw std::out_of_range("observation_image: label out of range");
  std::size_t d = recovered.resolution;
  Image img = make_image(d, d, 1);
  for (std::size_t u_idx = 0; u_idx < d; ++u_idx)
    for (std::size_t v_idx = 0; v_idx < d; ++v_idx)
      img.at(d - 1 - v_idx, u_idx, 0) = static_cast<double>(
          recovered.observation_counts[recovered.texel(label, u_idx, v_idx)]);
  return img;
}

template <typename T>
ShadowDecomposition shadow_decompose(const Image& scene, const Image& photo,
                                     const RecoveredTextureT<T>& recovered) {
  if (photo.width != scene.width || photo.height != scene.height ||
      photo.channels != 3)
    throw std::invalid_argument(
        "shadow_decompose: photo does not match the scene's size");
  std::vector<std::uint32_t> flat = pixel_texels(
      scene, recovered.label_count, recovered.resolution, "shadow_decompose");

  ShadowDecomposition out;
  out.reprojection = make_image(scene.width, scene.height, 3);
  out.shadow = make_image(scene.width, scene.height, 3);
  out.valid = make_image(scene.width, scene.height, 1);
  for (std::size_t p = 0; p < flat.size(); ++p) {
    std::uint32_t t = flat[p];
    bool seen = recovered.sample_counts[t] > 0;
    out.valid.pixels[p] = seen ? 1.0 : 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      double r = seen ? static_cast<double>(recovered.means[t * 3 + c]) : 0.0;
      out.reprojection.pixels[p * 3 + c] = r;
      out.shadow.pixels[p * 3 + c] = photo.pixels[p * 3 + c] - r;
    }
  }
  return out;
}

#define RETEX_UNPROJECTION_INSTANTIATE(T)                                      \
  template struct UnprojectionT<T>;                                            \
  template struct RecoveredTextureT<T>;                                        \
  template UnprojectionT<T> unproject<T>(const Image&, const TensorT<T>&,      \
                                         std::size_t, std::size_t);            \
  template TensorT<T> consistency_loss<T>(                                     \
      const std::vector<UnprojectionT<T>>&, bool);                             \
  template RecoveredTextureT<T> recovered_texture<T>(                          \
      const std::vector<UnprojectionT<T>>&);                                   \
  template Image texture_image<T>(const RecoveredTextureT<T>&, std::size_t);   \
  template Image observation_image<T>(const RecoveredTextureT<T>&,             \
                                      std::size_t);                            \
  template ShadowDecomposition shadow_decompose<T>(                            \
      const Image&, const Image&, const RecoveredTextureT<T>&);

RETEX_UNPROJECTION_INSTANTIATE(float)
RETEX_UNPROJECTION_INSTANTIATE(double)

}  // namespace retex

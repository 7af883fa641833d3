#include "retex/neural_texture.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "retex/blob_io.hpp"
#include "retex/rng.hpp"
#include "retex/scene.hpp"

namespace retex {

namespace {

template <typename T>
TensorT<T> uniform_param(Shape shape, double bound, Rng& rng) {
  std::size_t n = shape_numel(shape);
  std::vector<T> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = static_cast<T>(rng.uniform(-bound, bound));
  return TensorT<T>::param(std::move(shape), std::move(v));
}

}  // namespace

template <typename T>
NeuralTextureT<T> new_texture(std::size_t k, double freq_sigma,
                              std::uint64_t seed, std::size_t hidden) {
  if (k < 1) throw std::invalid_argument("new_texture: need at least one frequency");
  if (freq_sigma <= 0)
    throw std::invalid_argument("new_texture: frequency sigma must be positive");
  Rng rng(seed);
  NeuralTextureT<T> tex;
  std::vector<T> freqs(k * 2);
  for (T& f : freqs) f = static_cast<T>(freq_sigma * rng.normal());
  tex.frequencies = TensorT<T>::from_data({k, 2}, std::move(freqs));

  std::size_t in = 2 * k;
  tex.layers.push_back(uniform_param<T>({in, hidden}, 1.0 / std::sqrt(in), rng));
  tex.layers.push_back(TensorT<T>::param({hidden}, std::vector<T>(hidden, T(0))));
  tex.layers.push_back(
      uniform_param<T>({hidden, hidden}, 1.0 / std::sqrt(hidden), rng));
  tex.layers.push_back(TensorT<T>::param({hidden}, std::vector<T>(hidden, T(0))));
  tex.layers.push_back(
      uniform_param<T>({hidden, 3}, 1.0 / std::sqrt(hidden), rng));
  tex.layers.push_back(TensorT<T>::param({3}, std::vector<T>(3, T(0))));
  return tex;
}

template <typename T>
TensorT<T> embed(const NeuralTextureT<T>& tex, const std::vector<double>& us,
                 const std::vector<double>& vs) {
  if (us.size() != vs.size())
    throw std::invalid_argument("embed: u and v counts differ");
  std::size_t k = tex.frequencies.dim(0), b = us.size();
  std::span<const T> f = tex.frequencies.data();
  std::vector<T> out(b * 2 * k);
  for (std::size_t i = 0; i < b; ++i) {
    T* row = out.data() + i * 2 * k;
    for (std::size_t j = 0; j < k; ++j) {
      T g = static_cast<T>(f[2 * j] * us[i] + f[2 * j + 1] * vs[i]);
      row[2 * j] = std::sin(g);
      row[2 * j + 1] = std::cos(g);
    }
  }
  return TensorT<T>::from_data({b, 2 * k}, std::move(out));
}

template <typename T>
TensorT<T> evaluate(const NeuralTextureT<T>& tex, const TensorT<T>& embedding) {
  if (embedding.shape().size() != 2 ||
      embedding.dim(1) != 2 * tex.frequencies.dim(0))
    throw TensorError("evaluate: embedding " + shape_str(embedding.shape()) +
                      " does not match 2K = " +
                      std::to_string(2 * tex.frequencies.dim(0)));
  const auto& w = tex.layers;
  TensorT<T> h = leaky_relu(add(matmul(embedding, w[0]), w[1]), T(0.2));
  h = leaky_relu(add(matmul(h, w[2]), w[3]), T(0.2));
  return sigmoid(add(matmul(h, w[4]), w[5]));
}

template <typename T>
TensorT<T> evaluate_uv(const NeuralTextureT<T>& tex,
                       const std::vector<double>& us,
                       const std::vector<double>& vs) {
  return evaluate(tex, embed(tex, us, vs));
}

template <typename T>
RasterTextureT<T> new_raster_texture(std::size_t resolution, T fill) {
  if (resolution < 1)
    throw std::invalid_argument("new_raster_texture: resolution must be >= 1");
  RasterTextureT<T> raster;
  raster.grid = TensorT<T>::param(
      {resolution, resolution, 3},
      std::vector<T>(resolution * resolution * 3, fill));
  return raster;
}

template <typename T>
RasterTextureT<T> raster_texture_from_image(const Image& image) {
  if (image.channels != 3 || image.width != image.height)
    throw std::invalid_argument("raster_texture_from_image: need a square 3-channel image");
  RasterTextureT<T> raster;
  std::vector<T> v(image.pixels.begin(), image.pixels.end());
  raster.grid = TensorT<T>::param({image.height, image.width, 3}, std::move(v));
  return raster;
}

template <typename T>
std::vector<TensorT<T>> TextureBankT<T>::parameters() const {
  std::vector<TensorT<T>> params;
  for (const auto& tex : neural)
    for (const auto& p : tex.layers) params.push_back(p);
  for (const auto& tex : raster) params.push_back(tex.grid);
  return params;
}

template <typename T>
TextureBankT<T> make_texture_bank(std::size_t label_count, std::size_t k,
                                  double freq_sigma, std::uint64_t seed,
                                  std::size_t hidden, bool share_frequencies) {
  if (label_count < 1)
    throw std::invalid_argument("make_texture_bank: need at least one label");
  TextureBankT<T> bank;
  for (std::size_t label = 1; label <= label_count; ++label) {
    std::uint64_t tex_seed = mix_seed(seed, share_frequencies ? 1 : label);
    NeuralTextureT<T> tex = new_texture<T>(k, freq_sigma, tex_seed, hidden);
    if (share_frequencies && label > 1) {
      // Same frequency draw, independent weights.
      Rng wrng(mix_seed(seed, 100 + label));
      std::size_t in = 2 * k;
      tex.layers[0] = uniform_param<T>({in, hidden}, 1.0 / std::sqrt(in), wrng);
      tex.layers[2] =
          uniform_param<T>({hidden, hidden}, 1.0 / std::sqrt(hidden), wrng);
      tex.layers[4] =
          uniform_param<T>({hidden, 3}, 1.0 / std::sqrt(hidden), wrng);
    }
    bank.neural.push_back(std::move(tex));
  }
  return bank;
}

template <typename T>
TextureBankT<T> make_raster_bank(std::size_t label_count,
                                 std::size_t resolution) {
  if (label_count < 1)
    throw std::invalid_argument("make_raster_bank: need at least one label");
  TextureBankT<T> bank;
  for (std::size_t label = 1; label <= label_count; ++label)
    bank.raster.push_back(new_raster_texture<T>(resolution));
  return bank;
}

namespace {

// Rebuilds a full pixel grid from per-label row blocks.  parts[j] is
// [rows_j, width]; maps[j][r] is the destination row.  Backward routes each
// destination row's gradient back to the part it came from.
template <typename T>
TensorT<T> assemble_rows(std::size_t total_rows, std::size_t width,
                         const std::vector<TensorT<T>>& parts,
                         std::vector<std::vector<std::uint32_t>> maps) {
  std::vector<T> value(total_rows * width, T(0));
  for (std::size_t j = 0; j < parts.size(); ++j) {
    std::span<const T> src = parts[j].data();
    for (std::size_t r = 0; r < maps[j].size(); ++r)
      std::copy(src.begin() + r * width, src.begin() + (r + 1) * width,
                value.begin() + maps[j][r] * width);
  }
  auto shared_maps =
      std::make_shared<std::vector<std::vector<std::uint32_t>>>(std::move(maps));
  return make_op<T>(
      {total_rows, width}, std::move(value), parts,
      [shared_maps, width](detail::NodeT<T>& node) {
        for (std::size_t j = 0; j < node.parents.size(); ++j) {
          auto& p = *node.parents[j];
          if (!p.requires_grad) continue;
          p.ensure_grad();
          const auto& map = (*shared_maps)[j];
          for (std::size_t r = 0; r < map.size(); ++r)
            for (std::size_t c = 0; c < width; ++c)
              p.grad[r * width + c] += node.grad[map[r] * width + c];
        }
      });
}

struct LabelGroup {
  std::vector<double> us, vs;
  std::vector<std::uint32_t> pixels;       // destination rows in the H*W grid
  std::vector<std::uint32_t> texel_rows;   // raster mode: rows into [R*R,3]
};

std::vector<LabelGroup> group_pixels(const Image& uvl, std::size_t label_count,
                                     std::size_t raster_resolution) {
  if (uvl.channels != 3)
    throw std::invalid_argument("project: scene image must have 3 channels");
  std::vector<LabelGroup> groups(label_count);
  for (std::size_t y = 0; y < uvl.height; ++y)
    for (std::size_t x = 0; x < uvl.width; ++x) {
      auto label = decode_label_checked(uvl.at(y, x, 2), label_count);
      if (!label)
        throw std::runtime_error(
            "project: pixel (" + std::to_string(x) + ", " + std::to_string(y) +
            ") has label value " + std::to_string(uvl.at(y, x, 2)) +
            " which decodes to no surface");
      LabelGroup& g = groups[*label - 1];
      double u = uvl.at(y, x, 0), v = uvl.at(y, x, 1);
      g.us.push_back(u);
      g.vs.push_back(v);
      g.pixels.push_back(static_cast<std::uint32_t>(y * uvl.width + x));
      if (raster_resolution) {
        std::size_t r = raster_resolution;
        std::size_t col = texel_index(u, r);
        std::size_t row = r - 1 - texel_index(v, r);
        g.texel_rows.push_back(static_cast<std::uint32_t>(row * r + col));
      }
    }
  return groups;
}

}  // namespace

template <typename T>
TensorT<T> project(const TextureBankT<T>& bank, const Image& uvl) {
  std::size_t label_count = bank.label_count();
  if (label_count == 0)
    throw std::invalid_argument("project: empty texture bank");
  bool raster = bank.is_raster();
  std::vector<LabelGroup> groups =
      group_pixels(uvl, label_count, raster ? bank.raster[0].resolution() : 0);

  std::vector<TensorT<T>> parts;
  std::vector<std::vector<std::uint32_t>> maps;
  for (std::size_t i = 0; i < label_count; ++i) {
    if (groups[i].pixels.empty()) continue;
    if (raster) {
      const RasterTextureT<T>& tex = bank.raster[i];
      std::size_t r = tex.resolution();
      TensorT<T> flat = reshape(tex.grid, {r * r, 3});
      parts.push_back(gather_rows(flat, groups[i].texel_rows));
    } else {
      parts.push_back(evaluate(bank.neural[i], embed(bank.neural[i],
                                                     groups[i].us,
                                                     groups[i].vs)));
    }
    maps.push_back(std::move(groups[i].pixels));
  }
  TensorT<T> flat =
      assemble_rows<T>(uvl.height * uvl.width, 3, parts, std::move(maps));
  return reshape(flat, {uvl.height, uvl.width, 3});
}

template <typename T>
RasterTextureT<T> bake(const NeuralTextureT<T>& tex, std::size_t resolution) {
  if (resolution < 1) throw std::invalid_argument("bake: resolution must be >= 1");
  std::vector<double> us(resolution * resolution), vs(us.size());
  for (std::size_t row = 0; row < resolution; ++row)
    for (std::size_t col = 0; col < resolution; ++col) {
      // Row 0 holds the v = 1 edge, so its texel centers sit at high v.
      us[row * resolution + col] = (col + 0.5) / resolution;
      vs[row * resolution + col] = (resolution - 1 - row + 0.5) / resolution;
    }
  TensorT<T> rgb = evaluate_uv(tex, us, vs);
  RasterTextureT<T> raster;
  raster.grid = TensorT<T>::param(
      {resolution, resolution, 3},
      std::vector<T>(rgb.data().begin(), rgb.data().end()));
  return raster;
}

template <typename T>
void swap_labels(TextureBankT<T>& bank, const std::vector<std::size_t>& perm) {
  std::size_t label_count = bank.label_count();
  if (perm.size() != label_count)
    throw std::invalid_argument("swap_labels: permutation size " +
                                std::to_string(perm.size()) + " for " +
                                std::to_string(label_count) + " labels");
  std::vector<bool> seen(label_count, false);
  for (std::size_t p : perm) {
    if (p < 1 || p > label_count || seen[p - 1])
      throw std::invalid_argument("swap_labels: not a bijection of 1.." +
                                  std::to_string(label_count));
    seen[p - 1] = true;
  }
  if (bank.is_raster()) {
    std::vector<RasterTextureT<T>> next(label_count);
    for (std::size_t i = 0; i < label_count; ++i) next[perm[i] - 1] = bank.raster[i];
    bank.raster = std::move(next);
  } else {
    std::vector<NeuralTextureT<T>> next(label_count);
    for (std::size_t i = 0; i < label_count; ++i) next[perm[i] - 1] = bank.neural[i];
    bank.neural = std::move(next);
  }
}

template <typename T>
void save_bank(const TextureBankT<T>& bank, const std::string& path) {
  BlobWriter writer;
  save_bank(bank, writer);
  writer.write(path);
}

template <typename T>
void save_bank(const TextureBankT<T>& bank, BlobWriter& writer) {
  writer.add_string("bank/kind", bank.is_raster() ? "raster" : "neural");
  writer.add_u64("bank/labels", bank.label_count());
  writer.add_u64("bank/scalar_bytes", sizeof(T));
  for (std::size_t i = 0; i < bank.label_count(); ++i) {
    std::string prefix = "tex" + std::to_string(i + 1) + "/";
    if (bank.is_raster()) {
      const auto& grid = bank.raster[i].grid;
      writer.add_u64(prefix + "resolution", grid.dim(0));
      writer.add_array<T>(prefix + "grid", grid.data());
    } else {
      const auto& tex = bank.neural[i];
      writer.add_u64(prefix + "k", tex.frequencies.dim(0));
      writer.add_u64(prefix + "hidden", tex.layers[0].dim(1));
      writer.add_array<T>(prefix + "frequencies", tex.frequencies.data());
      for (std::size_t l = 0; l < tex.layers.size(); ++l)
        writer.add_array<T>(prefix + "layer" + std::to_string(l),
                            tex.layers[l].data());
    }
  }
}

template <typename T>
TextureBankT<T> load_bank(const std::string& path) {
  BlobReader reader(path);
  return load_bank<T>(reader);
}

template <typename T>
TextureBankT<T> load_bank(const BlobReader& reader) {
  const std::string& path = reader.path();
  if (reader.get_u64("bank/scalar_bytes") != sizeof(T))
    throw BlobError("texture bank at " + path + " holds " +
                    std::to_string(reader.get_u64("bank/scalar_bytes")) +
                    "-byte scalars, expected " + std::to_string(sizeof(T)));
  std::string kind = reader.get_string("bank/kind");
  std::size_t label_count = reader.get_u64("bank/labels");
  TextureBankT<T> bank;
  for (std::size_t i = 1; i <= label_count; ++i) {
    std::string prefix = "tex" + std::to_string(i) + "/";
    if (kind == "raster") {
      std::size_t r = reader.get_u64(prefix + "resolution");
      RasterTextureT<T> tex;
      tex.grid =
          TensorT<T>::param({r, r, 3}, reader.get_array<T>(prefix + "grid"));
      bank.raster.push_back(std::move(tex));
    } else {
      std::size_t k = reader.get_u64(prefix + "k");
      std::size_t hidden = reader.get_u64(prefix + "hidden");
      NeuralTextureT<T> tex;
      tex.frequencies = TensorT<T>::from_data(
          {k, 2}, reader.get_array<T>(prefix + "frequencies"));
      Shape shapes[6] = {{2 * k, hidden}, {hidden},         {hidden, hidden},
                         {hidden},        {hidden, 3},      {3}};
      for (std::size_t l = 0; l < 6; ++l)
        tex.layers.push_back(TensorT<T>::param(
            shapes[l], reader.get_array<T>(prefix + "layer" + std::to_string(l))));
      bank.neural.push_back(std::move(tex));
    }
  }
  return bank;
}

#define RETEX_TEXTURE_INSTANTIATE(T)                                           \
  template struct TextureBankT<T>;                                             \
  template NeuralTextureT<T> new_texture<T>(std::size_t, double,               \
                                            std::uint64_t, std::size_t);       \
  template TensorT<T> embed<T>(const NeuralTextureT<T>&,                       \
                               const std::vector<double>&,                     \
                               const std::vector<double>&);                    \
  template TensorT<T> evaluate<T>(const NeuralTextureT<T>&,                    \
                                  const TensorT<T>&);                          \
  template TensorT<T> evaluate_uv<T>(const NeuralTextureT<T>&,                 \
                                     const std::vector<double>&,               \
                                     const std::vector<double>&);              \
  template RasterTextureT<T> new_raster_texture<T>(std::size_t, T);            \
  template RasterTextureT<T> raster_texture_from_image<T>(const Image&);       \
  template TextureBankT<T> make_texture_bank<T>(std::size_t, std::size_t,      \
                                                double, std::uint64_t,         \
                                                std::size_t, bool);            \
  template TextureBankT<T> make_raster_bank<T>(std::size_t, std::size_t);      \
  template TensorT<T> project<T>(const TextureBankT<T>&, const Image&);        \
  template RasterTextureT<T> bake<T>(const NeuralTextureT<T>&, std::size_t);   \
  template void swap_labels<T>(TextureBankT<T>&,                               \
                               const std::vector<std::size_t>&);               \
  template void save_bank<T>(const TextureBankT<T>&, const std::string&);      \
  template TextureBankT<T> load_bank<T>(const std::string&);                   \
  template void save_bank<T>(const TextureBankT<T>&, BlobWriter&);             \
  template TextureBankT<T> load_bank<T>(const BlobReader&);

RETEX_TEXTURE_INSTANTIATE(float)
RETEX_TEXTURE_INSTANTIATE(double)

}  // namespace retex

#include "retex/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "retex/dataset.hpp"
#include "retex/unprojection.hpp"

namespace retex {

namespace {

bool uses_textures(Variant variant) { return variant != Variant::no_texture; }

// The variants that compute the unprojection-consistency and
// texture-realism losses.
bool uses_surface_losses(Variant variant) {
  return variant == Variant::full || variant == Variant::raster;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void put_field(std::string& out, const char* key, const std::string& value) {
  out += key;
  out += '=';
  out += value;
  out += '\n';
}

void put_field(std::string& out, const char* key, double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  put_field(out, key, std::string(buf));
}

void put_field(std::string& out, const char* key, std::size_t value) {
  put_field(out, key, std::to_string(value));
}

void put_metric(std::string& out, const char* key, const MsssimConfig& m) {
  std::string base(key);
  put_field(out, (base + ".max_scales").c_str(), std::to_string(m.max_scales));
  put_field(out, (base + ".window").c_str(), std::to_string(m.window));
  put_field(out, (base + ".sigma").c_str(), m.sigma);
  put_field(out, (base + ".k1").c_str(), m.k1);
  put_field(out, (base + ".k2").c_str(), m.k2);
}

// [H,W,C] values of an image, off the tape.
template <typename T>
TensorT<T> to_tensor_hwc(const Image& img) {
  std::vector<T> values(img.pixels.begin(), img.pixels.end());
  return TensorT<T>::from_data({img.height, img.width, img.channels},
                               std::move(values));
}

// [H,W,C] -> [1,C,H,W].
template <typename T>
TensorT<T> nchw_row(const TensorT<T>& hwc) {
  return reshape(permute(hwc, {2, 0, 1}),
                 {1, hwc.dim(2), hwc.dim(0), hwc.dim(1)});
}

// Sample i of a [N,C,H,W] batch as [H,W,C], staying on the tape.
template <typename T>
TensorT<T> sample_hwc(const TensorT<T>& nchw, std::size_t i) {
  std::size_t c = nchw.dim(1), h = nchw.dim(2), w = nchw.dim(3);
  return permute(reshape(slice(nchw, 0, i, 1), {c, h, w}), {1, 2, 0});
}

// Clamped copy of an [H,W,C] tensor's values as an image.
template <typename T>
Image hwc_to_image(const TensorT<T>& t) {
  Image img = make_image(t.dim(1), t.dim(0), t.dim(2));
  std::span<const T> d = t.data();
  for (std::size_t k = 0; k < img.pixels.size(); ++k)
    img.pixels[k] = std::clamp(static_cast<double>(d[k]), 0.0, 1.0);
  return img;
}

// Nearest-pixel rescale.  Scenes must go through this one: every output
// triplet is an actual source sample, so uv and label stay decodable.
Image resize_nearest(const Image& img, std::size_t h, std::size_t w) {
  if (h == img.height && w == img.width) return img;
  Image out = make_image(w, h, img.channels);
  for (std::size_t y = 0; y < h; ++y) {
    std::size_t sy = std::min(
        img.height - 1,
        static_cast<std::size_t>((y + 0.5) * img.height / h));
    for (std::size_t x = 0; x < w; ++x) {
      std::size_t sx = std::min(
          img.width - 1, static_cast<std::size_t>((x + 0.5) * img.width / w));
      for (std::size_t c = 0; c < img.channels; ++c)
        out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

// Bilinear rescale with half-pixel centers, for photos.
Image resize_bilinear(const Image& img, std::size_t h, std::size_t w) {
  if (h == img.height && w == img.width) return img;
  Image out = make_image(w, h, img.channels);
  for (std::size_t y = 0; y < h; ++y) {
    double fy = (y + 0.5) * img.height / h - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
    std::size_t y0 = static_cast<std::size_t>(fy);
    std::size_t y1 = std::min(y0 + 1, img.height - 1);
    double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < w; ++x) {
      double fx = (x + 0.5) * img.width / w - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
      std::size_t x0 = static_cast<std::size_t>(fx);
      std::size_t x1 = std::min(x0 + 1, img.width - 1);
      double tx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < img.channels; ++c) {
        double top = img.at(y0, x0, c) * (1 - tx) + img.at(y0, x1, c) * tx;
        double bot = img.at(y1, x0, c) * (1 - tx) + img.at(y1, x1, c) * tx;
        out.at(y, x, c) = top * (1 - ty) + bot * ty;
      }
    }
  }
  return out;
}

Image crop_image(const Image& img, std::size_t crop, Rng& rng) {
  if (crop == 0 || crop > img.width || crop > img.height)
    throw TrainError("crop " + std::to_string(crop) + " does not fit a " +
                     std::to_string(img.width) + "x" +
                     std::to_string(img.height) + " image");
  std::size_t oy = rng.index(img.height - crop + 1);
  std::size_t ox = rng.index(img.width - crop + 1);
  Image out = make_image(crop, crop, img.channels);
  for (std::size_t y = 0; y < crop; ++y) {
    const double* src = &img.pixels[((oy + y) * img.width + ox) * img.channels];
    std::copy(src, src + crop * img.channels,
              &out.pixels[y * crop * img.channels]);
  }
  return out;
}

void check_finite(const char* column, double value, std::size_t iteration) {
  if (!std::isfinite(value))
    throw TrainError("training aborted at iteration " +
                     std::to_string(iteration) + ": " + column + " = " +
                     std::to_string(value));
}

}  // namespace

std::string variant_name(Variant variant) {
  switch (variant) {
    case Variant::full: return "full";
    case Variant::no_consistency: return "no-consistency";
    case Variant::no_texture: return "no-texture";
    case Variant::raster: return "raster";
  }
  throw TrainError("unknown variant value");
}

Variant variant_from_name(const std::string& name) {
  if (name == "full") return Variant::full;
  if (name == "no-consistency") return Variant::no_consistency;
  if (name == "no-texture") return Variant::no_texture;
  if (name == "raster") return Variant::raster;
  throw TrainError("unknown variant \"" + name +
                   "\"; expected full, no-consistency, no-texture, or raster");
}

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.iterations == 0) throw TrainError("iterations must be positive");
  if (cfg.batch_size == 0) throw TrainError("batch_size must be positive");
  if (uses_surface_losses(cfg.variant) && cfg.batch_size < 2)
    throw TrainError(
        "the unprojection-consistency loss is a std across the batch and "
        "needs batch_size >= 2");
  if (cfg.crop == 0 || cfg.crop % 8 != 0)
    throw TrainError("crop must be a positive multiple of 8, not " +
                     std::to_string(cfg.crop));
  if (cfg.schedule.empty()) throw TrainError("resolution schedule is empty");
  if (cfg.schedule.front().start != 0)
    throw TrainError("the first schedule stage must start at iteration 0");
  std::size_t min_height = cfg.schedule.front().height;
  for (std::size_t i = 0; i < cfg.schedule.size(); ++i) {
    const ScheduleStage& stage = cfg.schedule[i];
    if (stage.height == 0 || stage.height % 8 != 0)
      throw TrainError("schedule heights must be positive multiples of 8, not " +
                       std::to_string(stage.height));
    if (i > 0 && stage.start <= cfg.schedule[i - 1].start)
      throw TrainError("schedule stage starts must increase strictly");
    min_height = std::min(min_height, stage.height);
  }
  std::size_t effective = std::min(cfg.crop, min_height);
  std::size_t code_need = 8 * cfg.translator.latent_metric.window;
  if (effective < code_need)
    throw TrainError("effective crop " + std::to_string(effective) +
                     " is too small: the content-code omega needs at least " +
                     std::to_string(code_need) + " pixels per side");
  if (effective < cfg.translator.image_metric.window)
    throw TrainError("effective crop " + std::to_string(effective) +
                     " is smaller than the image-metric window " +
                     std::to_string(cfg.translator.image_metric.window));
  if (!(cfg.lr_translator >= 0) || !(cfg.lr_texture >= 0))
    throw TrainError("learning rates must be finite and nonnegative");
  for (double w : {cfg.w_cyc, cfg.w_rec, cfg.w_con, cfg.w_adv, cfg.w_uc,
                   cfg.w_tr})
    if (!std::isfinite(w)) throw TrainError("loss weights must be finite");
  if (cfg.variant == Variant::raster && cfg.raster_resolution == 0)
    throw TrainError("raster_resolution must be positive");
  if (uses_textures(cfg.variant) && cfg.variant != Variant::raster) {
    if (cfg.texture_k == 0 || cfg.texture_hidden == 0)
      throw TrainError("texture_k and texture_hidden must be positive");
    if (!(cfg.texture_freq_sigma > 0))
      throw TrainError("texture_freq_sigma must be positive");
  }
  if (uses_surface_losses(cfg.variant) && cfg.unproject_resolution == 0)
    throw TrainError("unproject_resolution must be positive");
}

TranslatorConfig effective_translator_config(const TrainConfig& cfg) {
  TranslatorConfig tc = cfg.translator;
  tc.a_channels = uses_textures(cfg.variant) ? 6 : 3;
  return tc;
}

std::uint64_t config_hash(const TrainConfig& cfg) {
  std::string s;
  put_field(s, "batch_size", cfg.batch_size);
  put_field(s, "crop", cfg.crop);
  std::string sched;
  for (const ScheduleStage& stage : cfg.schedule)
    sched += std::to_string(stage.start) + ":" + std::to_string(stage.height) + ",";
  put_field(s, "schedule", sched);
  put_field(s, "lr_translator", cfg.lr_translator);
  put_field(s, "lr_texture", cfg.lr_texture);
  put_field(s, "halving_period", cfg.halving_period);
  put_field(s, "w_cyc", cfg.w_cyc);
  put_field(s, "w_rec", cfg.w_rec);
  put_field(s, "w_con", cfg.w_con);
  put_field(s, "w_adv", cfg.w_adv);
  put_field(s, "w_uc", cfg.w_uc);
  put_field(s, "w_tr", cfg.w_tr);
  put_field(s, "variant", variant_name(cfg.variant));
  put_field(s, "seed", std::to_string(cfg.seed));
  put_field(s, "train_count", cfg.train_count);
  TranslatorConfig tc = effective_translator_config(cfg);
  put_field(s, "translator.a_channels", tc.a_channels);
  put_field(s, "translator.width1", tc.width1);
  put_field(s, "translator.width2", tc.width2);
  put_field(s, "translator.latent", tc.latent);
  put_field(s, "translator.head_width", tc.head_width);
  put_field(s, "translator.disc_width", tc.disc_width);
  put_field(s, "translator.noise_std", tc.noise_std);
  put_field(s, "translator.norm_eps", tc.norm_eps);
  put_metric(s, "translator.image_metric", tc.image_metric);
  put_metric(s, "translator.latent_metric", tc.latent_metric);
  put_field(s, "texture_k", cfg.texture_k);
  put_field(s, "texture_freq_sigma", cfg.texture_freq_sigma);
  put_field(s, "texture_hidden", cfg.texture_hidden);
  put_field(s, "share_frequencies", std::string(cfg.share_frequencies ? "1" : "0"));
  put_field(s, "raster_resolution", cfg.raster_resolution);
  put_field(s, "unproject_resolution", cfg.unproject_resolution);
  put_field(s, "strict_consistency", std::string(cfg.strict_consistency ? "1" : "0"));
  put_field(s, "detach_realism_target", std::string(cfg.detach_realism_target ? "1" : "0"));
  return fnv1a(s);
}

TrainConfig train_config_from_config(const Config& config) {
  TrainConfig cfg;
  cfg.iterations = static_cast<std::size_t>(
      config.get_int_or("iterations", static_cast<std::int64_t>(cfg.iterations)));
  cfg.batch_size = static_cast<std::size_t>(
      config.get_int_or("batch_size", static_cast<std::int64_t>(cfg.batch_size)));
  cfg.crop = static_cast<std::size_t>(
      config.get_int_or("crop", static_cast<std::int64_t>(cfg.crop)));
  cfg.lr_translator = config.get_double_or("lr_translator", cfg.lr_translator);
  cfg.lr_texture = config.get_double_or("lr_texture", cfg.lr_texture);
  cfg.halving_period = static_cast<std::size_t>(config.get_int_or(
      "halving_period", static_cast<std::int64_t>(cfg.halving_period)));
  cfg.variant = variant_from_name(config.get_string_or("variant", "full"));
  cfg.seed = static_cast<std::uint64_t>(config.get_int_or("seed", 0));
  cfg.train_count = static_cast<std::size_t>(config.get_int_or("train_count", 0));
  cfg.w_cyc = config.get_double_or("weights.cyc", cfg.w_cyc);
  cfg.w_rec = config.get_double_or("weights.rec", cfg.w_rec);
  cfg.w_con = config.get_double_or("weights.con", cfg.w_con);
  cfg.w_adv = config.get_double_or("weights.adv", cfg.w_adv);
  cfg.w_uc = config.get_double_or("weights.uc", cfg.w_uc);
  cfg.w_tr = config.get_double_or("weights.tr", cfg.w_tr);
  if (config.has("schedule.iterations") || config.has("schedule.heights")) {
    std::vector<double> starts = config.get_doubles("schedule.iterations");
    std::vector<double> heights = config.get_doubles("schedule.heights");
    if (starts.empty() || starts.size() != heights.size())
      throw TrainError(
          "schedule.iterations and schedule.heights must list the same "
          "nonzero number of stages");
    cfg.schedule.clear();
    for (std::size_t i = 0; i < starts.size(); ++i) {
      if (starts[i] < 0 || heights[i] <= 0)
        throw TrainError("schedule stages must be nonnegative iteration and "
                         "positive height pairs");
      cfg.schedule.push_back({static_cast<std::size_t>(starts[i]),
                              static_cast<std::size_t>(heights[i])});
    }
  }
  cfg.translator.width1 = static_cast<std::size_t>(config.get_int_or(
      "translator.width1", static_cast<std::int64_t>(cfg.translator.width1)));
  cfg.translator.width2 = static_cast<std::size_t>(config.get_int_or(
      "translator.width2", static_cast<std::int64_t>(cfg.translator.width2)));
  cfg.translator.latent = static_cast<std::size_t>(config.get_int_or(
      "translator.latent", static_cast<std::int64_t>(cfg.translator.latent)));
  cfg.translator.head_width = static_cast<std::size_t>(
      config.get_int_or("translator.head_width",
                        static_cast<std::int64_t>(cfg.translator.head_width)));
  cfg.translator.disc_width = static_cast<std::size_t>(
      config.get_int_or("translator.disc_width",
                        static_cast<std::int64_t>(cfg.translator.disc_width)));
  cfg.translator.noise_std =
      config.get_double_or("translator.noise_std", cfg.translator.noise_std);
  cfg.translator.norm_eps =
      config.get_double_or("translator.norm_eps", cfg.translator.norm_eps);
  cfg.texture_k = static_cast<std::size_t>(
      config.get_int_or("texture.k", static_cast<std::int64_t>(cfg.texture_k)));
  cfg.texture_freq_sigma =
      config.get_double_or("texture.freq_sigma", cfg.texture_freq_sigma);
  cfg.texture_hidden = static_cast<std::size_t>(config.get_int_or(
      "texture.hidden", static_cast<std::int64_t>(cfg.texture_hidden)));
  cfg.share_frequencies =
      config.get_bool_or("texture.share_frequencies", cfg.share_frequencies);
  cfg.raster_resolution = static_cast<std::size_t>(
      config.get_int_or("texture.raster_resolution",
                        static_cast<std::int64_t>(cfg.raster_resolution)));
  cfg.unproject_resolution = static_cast<std::size_t>(
      config.get_int_or("unproject_resolution",
                        static_cast<std::int64_t>(cfg.unproject_resolution)));
  cfg.strict_consistency =
      config.get_bool_or("strict_consistency", cfg.strict_consistency);
  cfg.detach_realism_target =
      config.get_bool_or("detach_realism_target", cfg.detach_realism_target);
  cfg.checkpoint_period = static_cast<std::size_t>(
      config.get_int_or("checkpoint_period",
                        static_cast<std::int64_t>(cfg.checkpoint_period)));
  cfg.preview_period = static_cast<std::size_t>(config.get_int_or(
      "preview_period", static_cast<std::int64_t>(cfg.preview_period)));
  validate_train_config(cfg);
  return cfg;
}

template <typename T>
AdamT<T>::AdamT(std::vector<TensorT<T>> params, double lr, double beta1,
                double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].numel(), T(0));
    v_[i].assign(params_[i].numel(), T(0));
  }
}

template <typename T>
void AdamT<T>::zero_grad() {
  for (const TensorT<T>& p : params_) p.zero_grad();
}

template <typename T>
void AdamT<T>::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    std::vector<T>& x = params_[i].raw();
    std::span<const T> g =
        params_[i].has_grad() ? params_[i].grad() : std::span<const T>{};
    for (std::size_t j = 0; j < x.size(); ++j) {
      double gj = g.empty() ? 0.0 : static_cast<double>(g[j]);
      double m = beta1_ * static_cast<double>(m_[i][j]) + (1.0 - beta1_) * gj;
      double v =
          beta2_ * static_cast<double>(v_[i][j]) + (1.0 - beta2_) * gj * gj;
      m_[i][j] = static_cast<T>(m);
      v_[i][j] = static_cast<T>(v);
      x[j] = static_cast<T>(static_cast<double>(x[j]) -
                            lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_));
    }
  }
}

template <typename T>
void AdamT<T>::save(BlobWriter& writer, const std::string& prefix) const {
  writer.add_u64(prefix + "/t", t_);
  writer.add_u64(prefix + "/count", params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    writer.add_array<T>(prefix + "/m/" + std::to_string(i),
                        std::span<const T>(m_[i]));
    writer.add_array<T>(prefix + "/v/" + std::to_string(i),
                        std::span<const T>(v_[i]));
  }
}

template <typename T>
void AdamT<T>::load(const BlobReader& reader, const std::string& prefix) {
  if (reader.get_u64(prefix + "/count") != params_.size())
    throw BlobError(reader.path() + ": optimizer " + prefix + " holds " +
                    std::to_string(reader.get_u64(prefix + "/count")) +
                    " tensors, expected " + std::to_string(params_.size()));
  t_ = reader.get_u64(prefix + "/t");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    std::vector<T> m = reader.get_array<T>(prefix + "/m/" + std::to_string(i));
    std::vector<T> v = reader.get_array<T>(prefix + "/v/" + std::to_string(i));
    if (m.size() != params_[i].numel() || v.size() != params_[i].numel())
      throw BlobError(reader.path() + ": optimizer " + prefix + " tensor " +
                      std::to_string(i) + " has the wrong size");
    m_[i] = std::move(m);
    v_[i] = std::move(v);
  }
}

EpochSampler::EpochSampler(std::size_t n, std::uint64_t seed) : rng_(seed) {
  if (n == 0) throw TrainError("sampler needs at least one element");
  order_.resize(n);
  std::iota(order_.begin(), order_.end(), 0);
  cursor_ = n;  // forces a shuffle on the first draw
}

std::size_t EpochSampler::next() {
  if (order_.empty()) throw TrainError("sampler was never initialized");
  if (cursor_ >= order_.size()) {
    rng_.shuffle(order_.begin(), order_.end());
    cursor_ = 0;
  }
  return static_cast<std::size_t>(order_[cursor_++]);
}

void EpochSampler::save(BlobWriter& writer, const std::string& prefix) const {
  writer.add_array<std::uint64_t>(prefix + "/order",
                                  std::span<const std::uint64_t>(order_));
  writer.add_u64(prefix + "/cursor", cursor_);
  writer.add_string(prefix + "/rng", rng_.serialize());
}

EpochSampler EpochSampler::load(const BlobReader& reader,
                                const std::string& prefix) {
  EpochSampler out;
  out.order_ = reader.get_array<std::uint64_t>(prefix + "/order");
  out.cursor_ = reader.get_u64(prefix + "/cursor");
  out.rng_ = Rng::deserialize(reader.get_string(prefix + "/rng"));
  if (out.order_.empty() || out.cursor_ > out.order_.size())
    throw BlobError(reader.path() + ": sampler " + prefix + " is malformed");
  return out;
}

template <typename T>
TextureBankT<T> make_train_bank(const TrainConfig& cfg,
                                std::size_t label_count) {
  if (cfg.variant == Variant::no_texture) return {};
  if (cfg.variant == Variant::raster)
    return make_raster_bank<T>(label_count, cfg.raster_resolution);
  return make_texture_bank<T>(label_count, cfg.texture_k,
                              cfg.texture_freq_sigma, mix_seed(cfg.seed, 2),
                              cfg.texture_hidden, cfg.share_frequencies);
}

template <typename T>
TrainerStateT<T> make_trainer(const TrainConfig& cfg,
                              const TextureBankT<T>& bank,
                              std::size_t scene_count,
                              std::size_t photo_count) {
  validate_train_config(cfg);
  TrainerStateT<T> state;
  state.translator =
      make_translator<T>(effective_translator_config(cfg), mix_seed(cfg.seed, 1));
  state.opt_translator =
      AdamT<T>(state.translator.generator_parameters(), cfg.lr_translator);
  state.opt_disc =
      AdamT<T>(state.translator.discriminator_parameters(), cfg.lr_translator);
  state.opt_texture = AdamT<T>(bank.parameters(), cfg.lr_texture);
  state.scenes = EpochSampler(scene_count, mix_seed(cfg.seed, 4));
  state.photos = EpochSampler(photo_count, mix_seed(cfg.seed, 5));
  state.rng = Rng(mix_seed(cfg.seed, 3));
  return state;
}

CroppedPair crop_pair(const Image& scene, const Image* photo,
                      std::size_t crop, Rng& rng) {
  CroppedPair out;
  out.scene = crop_image(scene, crop, rng);
  if (photo) out.photo = crop_image(*photo, crop, rng);
  return out;
}

std::size_t schedule_resolution(std::size_t iteration, const TrainConfig& cfg) {
  std::size_t height = cfg.schedule.front().height;
  for (const ScheduleStage& stage : cfg.schedule)
    if (iteration >= stage.start) height = stage.height;
  return height;
}

std::size_t scheduled_width(std::size_t height, std::size_t source_width,
                            std::size_t source_height) {
  if (source_height == 0 || source_width == 0)
    throw TrainError("source image size is zero");
  double w = static_cast<double>(height) * static_cast<double>(source_width) /
             static_cast<double>(source_height);
  auto rounded = static_cast<std::size_t>(std::llround(w / 8.0)) * 8;
  return rounded < 8 ? 8 : rounded;
}

template <typename T>
LossReport train_step(TrainerStateT<T>& state, TextureBankT<T>& bank,
                      const std::vector<Image>& batch_scenes,
                      const std::vector<Image>& batch_photos,
                      const TrainConfig& cfg) {
  std::size_t n = batch_scenes.size();
  if (n == 0 || batch_photos.size() != n)
    throw TrainError("scene and photo batches must have the same nonzero size");
  bool textures = uses_textures(cfg.variant);
  bool surface = uses_surface_losses(cfg.variant);
  if (surface && n < 2)
    throw TrainError(
        "the unprojection-consistency loss needs at least two samples");

  double factor =
      cfg.halving_period
          ? std::exp2(-static_cast<double>(state.iteration / cfg.halving_period))
          : 1.0;
  state.opt_translator.set_lr(cfg.lr_translator * factor);
  state.opt_disc.set_lr(cfg.lr_translator * factor);
  state.opt_texture.set_lr(cfg.lr_texture * factor);

  std::vector<TensorT<T>> a_rows, p_rows, pi_rows;
  for (std::size_t i = 0; i < n; ++i) {
    TensorT<T> s = nchw_row(to_tensor_hwc<T>(batch_scenes[i]));
    if (textures) {
      TensorT<T> pi = nchw_row(project(bank, batch_scenes[i]));
      pi_rows.push_back(pi);
      a_rows.push_back(concat<T>({pi, s}, 1));
    } else {
      a_rows.push_back(s);
    }
    p_rows.push_back(nchw_row(to_tensor_hwc<T>(batch_photos[i])));
  }
  TensorT<T> a = n == 1 ? a_rows[0] : concat(a_rows, 0);
  TensorT<T> p = n == 1 ? p_rows[0] : concat(p_rows, 0);

  TranslationLossesT<T> losses =
      translation_losses(state.translator, a, p, true, &state.rng);

  TensorT<T> uc, tr;
  if (surface) {
    std::vector<UnprojectionT<T>> unprojections;
    for (std::size_t i = 0; i < n; ++i)
      unprojections.push_back(unproject(batch_scenes[i],
                                        sample_hwc(losses.fake_photo, i),
                                        bank.label_count(),
                                        cfg.unproject_resolution));
    uc = consistency_loss(unprojections, cfg.strict_consistency);
    TensorT<T> pi_batch = n == 1 ? pi_rows[0] : concat(pi_rows, 0);
    TensorT<T> target = cfg.detach_realism_target ? losses.fake_photo.detach()
                                                  : losses.fake_photo;
    tr = omega(pi_batch, target, cfg.translator.image_metric);
  }

  LossReport report;
  report.cyc = losses.cyc.item();
  report.rec = losses.rec.item();
  report.con = losses.con.item();
  report.adv_gen = losses.adv_gen.item();
  report.adv_disc = losses.adv_disc.item();
  if (surface) {
    report.uc = uc.item();
    report.tr = tr.item();
  }
  report.lr_translator = state.opt_translator.lr();
  report.lr_texture = state.opt_texture.lr();

  check_finite("l_cyc", report.cyc, state.iteration);
  check_finite("l_rec", report.rec, state.iteration);
  check_finite("l_con", report.con, state.iteration);
  check_finite("l_adv_g", report.adv_gen, state.iteration);
  check_finite("l_adv_d", report.adv_disc, state.iteration);
  if (surface) {
    check_finite("l_uc", *report.uc, state.iteration);
    check_finite("l_tr", *report.tr, state.iteration);
  }

  state.opt_translator.zero_grad();
  state.opt_disc.zero_grad();
  state.opt_texture.zero_grad();

  TensorT<T> generator = affine(losses.cyc, static_cast<T>(cfg.w_cyc), T(0));
  generator =
      add(generator, affine(losses.rec, static_cast<T>(cfg.w_rec), T(0)));
  generator =
      add(generator, affine(losses.con, static_cast<T>(cfg.w_con), T(0)));
  generator =
      add(generator, affine(losses.adv_gen, static_cast<T>(cfg.w_adv), T(0)));
  if (surface) {
    generator = add(generator, affine(uc, static_cast<T>(cfg.w_uc), T(0)));
    generator = add(generator, affine(tr, static_cast<T>(cfg.w_tr), T(0)));
  }
  generator.backward();
  affine(losses.adv_disc, static_cast<T>(cfg.w_adv), T(0)).backward();

  state.opt_translator.step();
  state.opt_texture.step();
  state.opt_disc.step();
  ++state.iteration;
  return report;
}

template <typename T>
void save_checkpoint(const std::string& path, const TrainerStateT<T>& state,
                     const TextureBankT<T>& bank, const TrainConfig& cfg) {
  BlobWriter writer;
  writer.add_string("trainer/kind", "trainer-checkpoint");
  writer.add_u64("trainer/iteration", state.iteration);
  writer.add_u64("trainer/config", config_hash(cfg));
  writer.add_string("trainer/rng", state.rng.serialize());
  writer.add_u64("trainer/has_bank", bank.label_count() ? 1 : 0);
  state.scenes.save(writer, "scenes");
  state.photos.save(writer, "photos");
  save_translator(state.translator, writer);
  if (bank.label_count()) save_bank(bank, writer);
  state.opt_translator.save(writer, "opt_translator");
  state.opt_disc.save(writer, "opt_disc");
  state.opt_texture.save(writer, "opt_texture");
  writer.write(path);
}

template <typename T>
CheckpointT<T> load_checkpoint(const std::string& path, const TrainConfig& cfg) {
  validate_train_config(cfg);
  BlobReader reader(path);
  if (!reader.has("trainer/kind") ||
      reader.get_string("trainer/kind") != "trainer-checkpoint")
    throw TrainError(path + ": not a trainer checkpoint");
  if (reader.get_u64("trainer/config") != config_hash(cfg))
    throw TrainError(path + ": checkpoint belongs to a different configuration");
  CheckpointT<T> out;
  out.state.translator = load_translator<T>(reader);
  // Metric settings are not serialized; take them from the run config.
  out.state.translator.config.image_metric = cfg.translator.image_metric;
  out.state.translator.config.latent_metric = cfg.translator.latent_metric;
  if (reader.get_u64("trainer/has_bank")) out.bank = load_bank<T>(reader);
  out.state.opt_translator =
      AdamT<T>(out.state.translator.generator_parameters(), cfg.lr_translator);
  out.state.opt_disc = AdamT<T>(out.state.translator.discriminator_parameters(),
                                cfg.lr_translator);
  out.state.opt_texture = AdamT<T>(out.bank.parameters(), cfg.lr_texture);
  out.state.opt_translator.load(reader, "opt_translator");
  out.state.opt_disc.load(reader, "opt_disc");
  out.state.opt_texture.load(reader, "opt_texture");
  out.state.scenes = EpochSampler::load(reader, "scenes");
  out.state.photos = EpochSampler::load(reader, "photos");
  out.state.rng = Rng::deserialize(reader.get_string("trainer/rng"));
  out.state.iteration = reader.get_u64("trainer/iteration");
  return out;
}

namespace {

void write_csv_row(std::ostream& os, std::size_t iteration,
                   const LossReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                iteration, r.cyc, r.rec, r.con, r.adv_gen, r.adv_disc,
                r.uc.value_or(0.0), r.tr.value_or(0.0), r.lr_translator,
                r.lr_texture);
  os << buf;
}

template <typename T>
void write_previews(const std::string& out_dir, const TrainerStateT<T>& state,
                    const TextureBankT<T>& bank, const TrainConfig& cfg,
                    const Image& scene, std::size_t label_count) {
  char tag[32];
  std::snprintf(tag, sizeof tag, "%06zu", state.iteration);
  TensorT<T> s = nchw_row(to_tensor_hwc<T>(scene));
  TensorT<T> a = s;
  if (uses_textures(cfg.variant)) {
    TensorT<T> pi = project(bank, scene);
    save_png8(out_dir + "/preview_proj_" + tag + ".png",
              hwc_to_image(pi.detach()));
    a = concat<T>({nchw_row(pi), s}, 1);
  }
  TensorT<T> fake = translate_a_to_b(state.translator, a, false, nullptr).detach();
  TensorT<T> fake_hwc = sample_hwc(fake, 0);
  save_png8(out_dir + "/preview_fake_" + tag + ".png", hwc_to_image(fake_hwc));
  if (uses_textures(cfg.variant)) {
    std::vector<UnprojectionT<T>> one{
        unproject(scene, fake_hwc, label_count, cfg.unproject_resolution)};
    RecoveredTextureT<T> rec = recovered_texture(one);
    for (std::size_t label = 1; label <= label_count; ++label)
      save_png8(out_dir + "/preview_tex" + std::to_string(label) + "_" + tag +
                    ".png",
                texture_image(rec, label));
  }
}

}  // namespace

template <typename T>
LossReport train(const std::string& dataset_dir, const TrainConfig& cfg,
                 const std::string& out_dir, const std::string& resume_from) {
  validate_train_config(cfg);
  DatasetInfo info = load_dataset(dataset_dir);
  if (cfg.train_count > info.n_scenes)
    throw TrainError("train_count " + std::to_string(cfg.train_count) +
                     " exceeds the dataset's " + std::to_string(info.n_scenes) +
                     " scenes");
  std::size_t count = cfg.train_count ? cfg.train_count : info.n_scenes;
  if (count == 0) throw TrainError("dataset has no scenes");
  std::vector<Image> scenes(count), photos(count);
  for (std::size_t i = 0; i < count; ++i) {
    scenes[i] = load_uvl(info.scene_paths[i]);
    photos[i] = load_photo(info.photo_paths[i]);
  }

  TextureBankT<T> bank;
  TrainerStateT<T> state;
  if (!resume_from.empty()) {
    CheckpointT<T> loaded = load_checkpoint<T>(resume_from, cfg);
    state = std::move(loaded.state);
    bank = std::move(loaded.bank);
    if (state.scenes.size() != count || state.photos.size() != count)
      throw TrainError("checkpoint samples " +
                       std::to_string(state.scenes.size()) +
                       " pairs but the dataset provides " +
                       std::to_string(count));
  } else {
    bank = make_train_bank<T>(cfg, info.label_count);
    state = make_trainer<T>(cfg, bank, count, count);
  }
  if (uses_textures(cfg.variant) && bank.label_count() != info.label_count)
    throw TrainError("bank serves " + std::to_string(bank.label_count()) +
                     " labels but the dataset has " +
                     std::to_string(info.label_count));

  std::filesystem::create_directories(out_dir);
  std::string csv_path = out_dir + "/log.csv";
  bool append = !resume_from.empty() && std::filesystem::exists(csv_path);
  std::ofstream csv(csv_path, append ? std::ios::app : std::ios::trunc);
  if (!csv) throw TrainError("cannot write " + csv_path);
  if (!append)
    csv << "iter,l_cyc,l_rec,l_con,l_adv_g,l_adv_d,l_uc,l_tr,lr_t,lr_tex\n";

  std::size_t stage_h = 0, stage_w = 0;
  std::vector<Image> scenes_scaled, photos_scaled;
  LossReport last;
  while (state.iteration < cfg.iterations) {
    std::size_t it = state.iteration;
    std::size_t h = schedule_resolution(it, cfg);
    std::size_t w = scheduled_width(h, info.width, info.height);
    if (h != stage_h || w != stage_w) {
      stage_h = h;
      stage_w = w;
      scenes_scaled.clear();
      photos_scaled.clear();
      for (std::size_t i = 0; i < count; ++i) {
        scenes_scaled.push_back(resize_nearest(scenes[i], h, w));
        photos_scaled.push_back(resize_bilinear(photos[i], h, w));
      }
    }
    std::size_t effective = std::min({cfg.crop, stage_h, stage_w});

    std::vector<std::size_t> scene_idx(cfg.batch_size), photo_idx(cfg.batch_size);
    for (std::size_t j = 0; j < cfg.batch_size; ++j)
      scene_idx[j] = state.scenes.next();
    for (std::size_t j = 0; j < cfg.batch_size; ++j)
      photo_idx[j] = state.photos.next();
    std::vector<Image> batch_scenes, batch_photos;
    for (std::size_t j = 0; j < cfg.batch_size; ++j) {
      CroppedPair pair = crop_pair(scenes_scaled[scene_idx[j]],
                                   &photos_scaled[photo_idx[j]], effective,
                                   state.rng);
      batch_scenes.push_back(std::move(pair.scene));
      batch_photos.push_back(std::move(pair.photo));
    }

    last = train_step(state, bank, batch_scenes, batch_photos, cfg);
    write_csv_row(csv, it, last);

    bool final_step = state.iteration == cfg.iterations;
    if (cfg.checkpoint_period && state.iteration % cfg.checkpoint_period == 0 &&
        !final_step) {
      char name[64];
      std::snprintf(name, sizeof name, "/checkpoint_%06zu.ckpt",
                    state.iteration);
      save_checkpoint(out_dir + name, state, bank, cfg);
      csv.flush();
    }
    if (cfg.preview_period &&
        (state.iteration % cfg.preview_period == 0 || final_step))
      write_previews(out_dir, state, bank, cfg, scenes_scaled[0],
                     info.label_count);
  }

  save_checkpoint(out_dir + "/checkpoint_final.ckpt", state, bank, cfg);
  save_translator(state.translator, out_dir + "/translator.ckpt");
  if (bank.label_count()) save_bank(bank, out_dir + "/bank.ckpt");
  return last;
}

#define RETEX_TRAINER_INSTANTIATE(T)                                           \
  template class AdamT<T>;                                                     \
  template struct TrainerStateT<T>;                                            \
  template struct CheckpointT<T>;                                              \
  template TextureBankT<T> make_train_bank<T>(const TrainConfig&,              \
                                              std::size_t);                    \
  template TrainerStateT<T> make_trainer<T>(const TrainConfig&,                \
                                            const TextureBankT<T>&,           \
                                            std::size_t, std::size_t);         \
  template LossReport train_step<T>(TrainerStateT<T>&, TextureBankT<T>&,       \
                                    const std::vector<Image>&,                 \
                                    const std::vector<Image>&,                 \
                                    const TrainConfig&);                       \
  template void save_checkpoint<T>(const std::string&,                         \
                                   const TrainerStateT<T>&,                    \
                                   const TextureBankT<T>&,                     \
                                   const TrainConfig&);                        \
  template CheckpointT<T> load_checkpoint<T>(const std::string&,               \
                                             const TrainConfig&);              \
  template LossReport train<T>(const std::string&, const TrainConfig&,         \
                               const std::string&, const std::string&);

RETEX_TRAINER_INSTANTIATE(float)
RETEX_TRAINER_INSTANTIATE(double)

}  // namespace retex

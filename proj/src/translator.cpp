#include "retex/translator.hpp"

#include <cmath>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "retex/blob_io.hpp"

namespace retex {

namespace {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i)
    out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

template <typename T>
ConvT<T> new_conv(std::size_t in, std::size_t out, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(in * 9));
  std::vector<T> w(out * in * 9);
  for (T& x : w) x = static_cast<T>(rng.uniform(-bound, bound));
  return {TensorT<T>::param({out, in, 3, 3}, std::move(w)),
          TensorT<T>::param({out}, std::vector<T>(out, T(0)))};
}

template <typename T>
InstanceNormT<T> new_norm(std::size_t channels) {
  return {TensorT<T>::param({channels}, std::vector<T>(channels, T(1))),
          TensorT<T>::param({channels}, std::vector<T>(channels, T(0)))};
}

template <typename T>
ResBlockT<T> new_res(std::size_t channels, Rng& rng) {
  return {new_conv<T>(channels, channels, rng), new_conv<T>(channels, channels, rng),
          new_norm<T>(channels), new_norm<T>(channels)};
}

template <typename T>
EncoderT<T> new_encoder(std::size_t in, const TranslatorConfig& cfg, Rng& rng) {
  EncoderT<T> e;
  e.down1 = new_conv<T>(in, cfg.width1, rng);
  e.norm1 = new_norm<T>(cfg.width1);
  e.down2 = new_conv<T>(cfg.width1, cfg.width2, rng);
  e.norm2 = new_norm<T>(cfg.width2);
  e.down3 = new_conv<T>(cfg.width2, cfg.latent, rng);
  e.norm3 = new_norm<T>(cfg.latent);
  e.res1 = new_res<T>(cfg.latent, rng);
  e.res2 = new_res<T>(cfg.latent, rng);
  return e;
}

template <typename T>
DecoderT<T> new_decoder(std::size_t out, const TranslatorConfig& cfg, Rng& rng) {
  DecoderT<T> d;
  d.style = TensorT<T>::param({cfg.latent}, std::vector<T>(cfg.latent, T(0)));
  d.res1 = new_res<T>(cfg.latent, rng);
  d.res2 = new_res<T>(cfg.latent, rng);
  d.up1 = new_conv<T>(cfg.latent, cfg.width2, rng);
  d.norm1 = new_norm<T>(cfg.width2);
  d.up2 = new_conv<T>(cfg.width2, cfg.width1, rng);
  d.norm2 = new_norm<T>(cfg.width1);
  d.up3 = new_conv<T>(cfg.width1, cfg.head_width, rng);
  d.norm3 = new_norm<T>(cfg.head_width);
  d.out = new_conv<T>(cfg.head_width, out, rng);
  return d;
}

template <typename T>
DiscriminatorT<T> new_disc(std::size_t in, const TranslatorConfig& cfg, Rng& rng) {
  std::size_t w1 = cfg.disc_width, w2 = 2 * w1, w3 = 4 * w1, w4 = 4 * w1;
  DiscriminatorT<T> d;
  d.down1 = new_conv<T>(in, w1, rng);
  d.down2 = new_conv<T>(w1, w2, rng);
  d.norm2 = new_norm<T>(w2);
  d.down3 = new_conv<T>(w2, w3, rng);
  d.norm3 = new_norm<T>(w3);
  d.down4 = new_conv<T>(w3, w4, rng);
  d.norm4 = new_norm<T>(w4);
  d.head = new_conv<T>(w4, 1, rng);
  return d;
}

// Per-sample, per-channel normalization over the spatial axes,
// variance-stabilized so a constant channel stays differentiable.
template <typename T>
TensorT<T> norm_fwd(const InstanceNormT<T>& n, const TensorT<T>& x, double eps) {
  Shape stat{x.dim(0), x.dim(1), 1, 1};
  TensorT<T> m = reshape(reduce_mean(x, {2, 3}), stat);
  TensorT<T> d = sub(x, m);
  TensorT<T> var = reshape(reduce_mean(square(d), {2, 3}), stat);
  TensorT<T> unit = div(d, sqrt(affine(var, T(1), static_cast<T>(eps))));
  Shape per_channel{x.dim(1), 1, 1};
  return add(mul(unit, reshape(n.gamma, per_channel)),
             reshape(n.beta, per_channel));
}

template <typename T>
TensorT<T> res_fwd(const ResBlockT<T>& r, const TensorT<T>& x, double eps) {
  TensorT<T> y = relu(norm_fwd(r.norm1, conv2d(x, r.conv1.w, r.conv1.b, 1, 1), eps));
  return add(x, norm_fwd(r.norm2, conv2d(y, r.conv2.w, r.conv2.b, 1, 1), eps));
}

template <typename T>
TensorT<T> encoder_fwd(const EncoderT<T>& e, const TensorT<T>& x, double eps) {
  TensorT<T> h = relu(norm_fwd(e.norm1, conv2d(x, e.down1.w, e.down1.b, 2, 1), eps));
  h = relu(norm_fwd(e.norm2, conv2d(h, e.down2.w, e.down2.b, 2, 1), eps));
  h = relu(norm_fwd(e.norm3, conv2d(h, e.down3.w, e.down3.b, 2, 1), eps));
  return res_fwd(e.res2, res_fwd(e.res1, h, eps), eps);
}

template <typename T>
TensorT<T> decoder_fwd(const DecoderT<T>& d, const TensorT<T>& code, double eps) {
  TensorT<T> h = add(code, reshape(d.style, {code.dim(1), 1, 1}));
  h = res_fwd(d.res2, res_fwd(d.res1, h, eps), eps);
  h = relu(norm_fwd(d.norm1,
                    conv2d(upsample_nearest2(h, 2), d.up1.w, d.up1.b, 1, 1), eps));
  h = relu(norm_fwd(d.norm2,
                    conv2d(upsample_nearest2(h, 2), d.up2.w, d.up2.b, 1, 1), eps));
  h = relu(norm_fwd(d.norm3,
                    conv2d(upsample_nearest2(h, 2), d.up3.w, d.up3.b, 1, 1), eps));
  return sigmoid(conv2d(h, d.out.w, d.out.b, 1, 1));
}

template <typename T>
TensorT<T> disc_fwd(const DiscriminatorT<T>& d, const TensorT<T>& x, double eps) {
  T slope = T(0.2);
  TensorT<T> h = leaky_relu(conv2d(x, d.down1.w, d.down1.b, 2, 1), slope);
  h = leaky_relu(norm_fwd(d.norm2, conv2d(h, d.down2.w, d.down2.b, 2, 1), eps), slope);
  h = leaky_relu(norm_fwd(d.norm3, conv2d(h, d.down3.w, d.down3.b, 2, 1), eps), slope);
  h = leaky_relu(norm_fwd(d.norm4, conv2d(h, d.down4.w, d.down4.b, 2, 1), eps), slope);
  return conv2d(h, d.head.w, d.head.b, 1, 1);
}

template <typename T>
void check_image(const char* fn, const TensorT<T>& x, std::size_t channels) {
  if (!x.defined() || x.shape().size() != 4)
    throw TensorError(std::string(fn) + ": input must be [N,C,H,W]" +
                      (x.defined() ? ", have " + shape_str(x.shape()) : ""));
  if (x.dim(0) == 0)
    throw TensorError(std::string(fn) + ": empty batch");
  if (x.dim(1) != channels)
    throw TensorError(std::string(fn) + ": expected " +
                      std::to_string(channels) + " channels, have " +
                      shape_str(x.shape()));
  if (x.dim(2) % 8 != 0 || x.dim(3) % 8 != 0)
    throw TensorError(std::string(fn) + ": spatial dims " +
                      std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                      " must be divisible by 8");
}

// Additive content noise; a null rng (inference) passes the code through.
template <typename T>
TensorT<T> with_noise(const TensorT<T>& code, double std_dev, Rng* rng) {
  if (rng == nullptr || std_dev == 0.0) return code;
  std::vector<T> n(code.numel());
  for (T& x : n) x = static_cast<T>(std_dev * rng->normal());
  return add(code, TensorT<T>::from_data(code.shape(), std::move(n)));
}

Rng* training_rng(const char* fn, bool training, Rng* rng) {
  if (!training) return nullptr;
  if (rng == nullptr)
    throw TensorError(std::string(fn) + ": training mode needs an rng");
  return rng;
}

template <typename T>
void collect(std::vector<TensorT<T>>& out, const ConvT<T>& c) {
  out.push_back(c.w);
  out.push_back(c.b);
}

template <typename T>
void collect(std::vector<TensorT<T>>& out, const InstanceNormT<T>& n) {
  out.push_back(n.gamma);
  out.push_back(n.beta);
}

template <typename T>
void collect(std::vector<TensorT<T>>& out, const ResBlockT<T>& r) {
  collect(out, r.conv1);
  collect(out, r.norm1);
  collect(out, r.conv2);
  collect(out, r.norm2);
}

template <typename T>
void collect(std::vector<TensorT<T>>& out, const EncoderT<T>& e) {
  collect(out, e.down1);
  collect(out, e.norm1);
  collect(out, e.down2);
  collect(out, e.norm2);
  collect(out, e.down3);
  collect(out, e.norm3);
  collect(out, e.res1);
  collect(out, e.res2);
}

template <typename T>
void collect(std::vector<TensorT<T>>& out, const DecoderT<T>& d) {
  out.push_back(d.style);
  collect(out, d.res1);
  collect(out, d.res2);
  collect(out, d.up1);
  collect(out, d.norm1);
  collect(out, d.up2);
  collect(out, d.norm2);
  collect(out, d.up3);
  collect(out, d.norm3);
  collect(out, d.out);
}

template <typename T>
void collect(std::vector<TensorT<T>>& out, const DiscriminatorT<T>& d) {
  collect(out, d.down1);
  collect(out, d.down2);
  collect(out, d.norm2);
  collect(out, d.down3);
  collect(out, d.norm3);
  collect(out, d.down4);
  collect(out, d.norm4);
  collect(out, d.head);
}

template <typename T>
DiscriminatorT<T> frozen(const DiscriminatorT<T>& d) {
  auto freeze = [](const ConvT<T>& c) {
    return ConvT<T>{c.w.detach(), c.b.detach()};
  };
  auto freeze_norm = [](const InstanceNormT<T>& n) {
    return InstanceNormT<T>{n.gamma.detach(), n.beta.detach()};
  };
  DiscriminatorT<T> f;
  f.down1 = freeze(d.down1);
  f.down2 = freeze(d.down2);
  f.norm2 = freeze_norm(d.norm2);
  f.down3 = freeze(d.down3);
  f.norm3 = freeze_norm(d.norm3);
  f.down4 = freeze(d.down4);
  f.norm4 = freeze_norm(d.norm4);
  f.head = freeze(d.head);
  return f;
}

// Mean squared distance of the patch logits from a constant target.
template <typename T>
TensorT<T> toward(const TensorT<T>& logits, double target) {
  return reduce_mean(square(affine(logits, T(1), static_cast<T>(-target))));
}

}  // namespace

template <typename T>
std::vector<TensorT<T>> TranslatorT<T>::generator_parameters() const {
  std::vector<TensorT<T>> out;
  collect(out, encoder_a);
  collect(out, encoder_b);
  collect(out, decoder_a);
  collect(out, decoder_b);
  return out;
}

template <typename T>
std::vector<TensorT<T>> TranslatorT<T>::discriminator_parameters() const {
  std::vector<TensorT<T>> out;
  collect(out, disc_a);
  collect(out, disc_b);
  return out;
}

template <typename T>
TranslatorT<T> make_translator(const TranslatorConfig& config,
                               std::uint64_t seed) {
  if (config.a_channels == 0)
    throw TensorError("make_translator: a_channels must be positive");
  Rng rng(seed);
  TranslatorT<T> tr;
  tr.config = config;
  tr.encoder_a = new_encoder<T>(config.a_channels, config, rng);
  tr.encoder_b = new_encoder<T>(3, config, rng);
  tr.decoder_a = new_decoder<T>(config.a_channels, config, rng);
  tr.decoder_b = new_decoder<T>(3, config, rng);
  tr.disc_a = new_disc<T>(config.a_channels, config, rng);
  tr.disc_b = new_disc<T>(3, config, rng);
  return tr;
}

template <typename T>
TensorT<T> encode_a(const TranslatorT<T>& tr, const TensorT<T>& a) {
  check_image("encode_a", a, tr.config.a_channels);
  return encoder_fwd(tr.encoder_a, a, tr.config.norm_eps);
}

template <typename T>
TensorT<T> encode_b(const TranslatorT<T>& tr, const TensorT<T>& p) {
  check_image("encode_b", p, 3);
  return encoder_fwd(tr.encoder_b, p, tr.config.norm_eps);
}

template <typename T>
TensorT<T> decode_a(const TranslatorT<T>& tr, const TensorT<T>& content) {
  if (!content.defined() || content.shape().size() != 4 ||
      content.dim(1) != tr.config.latent)
    throw TensorError("decode_a: content code must be [N," +
                      std::to_string(tr.config.latent) + ",h,w]");
  return decoder_fwd(tr.decoder_a, content, tr.config.norm_eps);
}

template <typename T>
TensorT<T> decode_b(const TranslatorT<T>& tr, const TensorT<T>& content) {
  if (!content.defined() || content.shape().size() != 4 ||
      content.dim(1) != tr.config.latent)
    throw TensorError("decode_b: content code must be [N," +
                      std::to_string(tr.config.latent) + ",h,w]");
  return decoder_fwd(tr.decoder_b, content, tr.config.norm_eps);
}

template <typename T>
TensorT<T> translate_a_to_b(const TranslatorT<T>& tr, const TensorT<T>& a,
                            bool training, Rng* rng) {
  Rng* r = training_rng("translate_a_to_b", training, rng);
  return decode_b(tr, with_noise(encode_a(tr, a), tr.config.noise_std, r));
}

template <typename T>
FakeSceneT<T> translate_b_to_a(const TranslatorT<T>& tr, const TensorT<T>& p,
                               bool training, Rng* rng) {
  Rng* r = training_rng("translate_b_to_a", training, rng);
  FakeSceneT<T> fake;
  fake.a = decode_a(tr, with_noise(encode_b(tr, p), tr.config.noise_std, r));
  if (tr.config.a_channels == 6) {
    fake.projection = slice(fake.a, 1, 0, 3);
    fake.uvl = slice(fake.a, 1, 3, 3);
  } else {
    fake.uvl = fake.a;
  }
  return fake;
}

template <typename T>
TranslationLossesT<T> translation_losses(const TranslatorT<T>& tr,
                                         const TensorT<T>& a,
                                         const TensorT<T>& p, bool training,
                                         Rng* rng) {
  check_image("translation_losses", a, tr.config.a_channels);
  check_image("translation_losses", p, 3);
  Rng* r = training_rng("translation_losses", training, rng);
  double sd = tr.config.noise_std;
  double eps = tr.config.norm_eps;
  const MsssimConfig& img = tr.config.image_metric;
  const MsssimConfig& lat = tr.config.latent_metric;

  TranslationLossesT<T> out;
  TensorT<T> code_a = encode_a(tr, a);
  TensorT<T> code_b = encode_b(tr, p);
  out.fake_photo = decode_b(tr, with_noise(code_a, sd, r));
  out.fake_scene.a = decode_a(tr, with_noise(code_b, sd, r));
  if (tr.config.a_channels == 6) {
    out.fake_scene.projection = slice(out.fake_scene.a, 1, 0, 3);
    out.fake_scene.uvl = slice(out.fake_scene.a, 1, 3, 3);
  } else {
    out.fake_scene.uvl = out.fake_scene.a;
  }

  // Round trips re-encode the fakes; the clean codes of the fakes also
  // serve the content loss.
  TensorT<T> code_fake_photo = encode_b(tr, out.fake_photo);
  TensorT<T> code_fake_scene = encode_a(tr, out.fake_scene.a);
  TensorT<T> cycled_a = decode_a(tr, with_noise(code_fake_photo, sd, r));
  TensorT<T> cycled_p = decode_b(tr, with_noise(code_fake_scene, sd, r));
  out.cyc = add(omega(a, cycled_a, img), omega(p, cycled_p, img));

  out.rec = add(omega(a, decode_a(tr, with_noise(code_a, sd, r)), img),
                omega(p, decode_b(tr, with_noise(code_b, sd, r)), img));

  out.con = add(omega(code_a, code_fake_photo, lat),
                omega(code_b, code_fake_scene, lat));

  DiscriminatorT<T> still_a = frozen(tr.disc_a);
  DiscriminatorT<T> still_b = frozen(tr.disc_b);
  out.adv_gen =
      affine(add(toward(disc_fwd(still_a, out.fake_scene.a, eps), 1.0),
                 toward(disc_fwd(still_b, out.fake_photo, eps), 1.0)),
             T(0.5), T(0));

  TensorT<T> real_a = disc_fwd(tr.disc_a, a.detach(), eps);
  TensorT<T> real_b = disc_fwd(tr.disc_b, p.detach(), eps);
  TensorT<T> fake_a = disc_fwd(tr.disc_a, out.fake_scene.a.detach(), eps);
  TensorT<T> fake_b = disc_fwd(tr.disc_b, out.fake_photo.detach(), eps);
  TensorT<T> da = affine(add(toward(real_a, 1.0), toward(fake_a, 0.0)), T(0.5), T(0));
  TensorT<T> db = affine(add(toward(real_b, 1.0), toward(fake_b, 0.0)), T(0.5), T(0));
  out.adv_disc = affine(add(da, db), T(0.5), T(0));
  return out;
}

template <typename T>
void save_translator(const TranslatorT<T>& tr, const std::string& path) {
  BlobWriter w;
  save_translator(tr, w);
  w.write(path);
}

template <typename T>
void save_translator(const TranslatorT<T>& tr, BlobWriter& w) {
  w.add_string("translator/kind", "translator");
  w.add_u64("translator/scalar_bytes", sizeof(T));
  w.add_u64("translator/a_channels", tr.config.a_channels);
  w.add_u64("translator/width1", tr.config.width1);
  w.add_u64("translator/width2", tr.config.width2);
  w.add_u64("translator/latent", tr.config.latent);
  w.add_u64("translator/head_width", tr.config.head_width);
  w.add_u64("translator/disc_width", tr.config.disc_width);
  double scalars[2] = {tr.config.noise_std, tr.config.norm_eps};
  w.add_bytes("translator/scalars", scalars, sizeof(scalars));
  std::vector<TensorT<T>> params = tr.generator_parameters();
  for (const TensorT<T>& t : tr.discriminator_parameters()) params.push_back(t);
  w.add_u64("translator/param_count", params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    w.add_array<T>("param/" + std::to_string(i), params[i].data());
}

template <typename T>
TranslatorT<T> load_translator(const std::string& path) {
  BlobReader r(path);
  return load_translator<T>(r);
}

template <typename T>
TranslatorT<T> load_translator(const BlobReader& r) {
  const std::string& path = r.path();
  if (r.get_string("translator/kind") != "translator")
    throw BlobError(path + ": not a translator checkpoint");
  if (r.get_u64("translator/scalar_bytes") != sizeof(T))
    throw BlobError(path + ": checkpoint scalar width " +
                    std::to_string(r.get_u64("translator/scalar_bytes")) +
                    " does not match, expected " + std::to_string(sizeof(T)));
  TranslatorConfig cfg;
  cfg.a_channels = r.get_u64("translator/a_channels");
  cfg.width1 = r.get_u64("translator/width1");
  cfg.width2 = r.get_u64("translator/width2");
  cfg.latent = r.get_u64("translator/latent");
  cfg.head_width = r.get_u64("translator/head_width");
  cfg.disc_width = r.get_u64("translator/disc_width");
  auto bytes = r.get_bytes("translator/scalars");
  if (bytes.size() != 2 * sizeof(double))
    throw BlobError(path + ": malformed scalar section");
  double scalars[2];
  std::memcpy(scalars, bytes.data(), sizeof(scalars));
  cfg.noise_std = scalars[0];
  cfg.norm_eps = scalars[1];

  TranslatorT<T> tr = make_translator<T>(cfg, 0);
  std::vector<TensorT<T>> params = tr.generator_parameters();
  for (const TensorT<T>& t : tr.discriminator_parameters()) params.push_back(t);
  if (r.get_u64("translator/param_count") != params.size())
    throw BlobError(path + ": checkpoint holds " +
                    std::to_string(r.get_u64("translator/param_count")) +
                    " parameter tensors, expected " +
                    std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::vector<T> v = r.get_array<T>("param/" + std::to_string(i));
    if (v.size() != params[i].numel())
      throw BlobError(path + ": parameter " + std::to_string(i) + " holds " +
                      std::to_string(v.size()) + " values, expected " +
                      std::to_string(params[i].numel()));
    params[i].raw() = std::move(v);
  }
  return tr;
}

#define RETEX_TRANSLATOR_INSTANTIATE(T)                                        \
  template struct TranslatorT<T>;                                              \
  template TranslatorT<T> make_translator<T>(const TranslatorConfig&,          \
                                             std::uint64_t);                   \
  template TensorT<T> encode_a<T>(const TranslatorT<T>&, const TensorT<T>&);   \
  template TensorT<T> encode_b<T>(const TranslatorT<T>&, const TensorT<T>&);   \
  template TensorT<T> decode_a<T>(const TranslatorT<T>&, const TensorT<T>&);   \
  template TensorT<T> decode_b<T>(const TranslatorT<T>&, const TensorT<T>&);   \
  template TensorT<T> translate_a_to_b<T>(const TranslatorT<T>&,               \
                                          const TensorT<T>&, bool, Rng*);      \
  template FakeSceneT<T> translate_b_to_a<T>(const TranslatorT<T>&,            \
                                             const TensorT<T>&, bool, Rng*);   \
  template TranslationLossesT<T> translation_losses<T>(                        \
      const TranslatorT<T>&, const TensorT<T>&, const TensorT<T>&, bool,       \
      Rng*);                                                                   \
  template void save_translator<T>(const TranslatorT<T>&,                      \
                                   const std::string&);                        \
  template TranslatorT<T> load_translator<T>(const std::string&);              \
  template void save_translator<T>(const TranslatorT<T>&, BlobWriter&);        \
  template TranslatorT<T> load_translator<T>(const BlobReader&);

RETEX_TRANSLATOR_INSTANTIATE(float)
RETEX_TRANSLATOR_INSTANTIATE(double)

}  // namespace retex

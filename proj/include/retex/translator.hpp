#pragma once

// Bidirectional image translation between rendered scenes (domain A) and
// photos (domain B): strided conv encoders to a shared content space,
// decoders that fold in a learned constant style vector, patch
// discriminators, and the cycle / reconstruction / content / adversarial
// losses tying the two directions together.
//
// Domain-A images carry a_channels channels (projection and UVL stacked in
// the standard setup, UVL alone in the texture-free variant); domain-B
// images are 3-channel photos.  All image tensors are [N,C,H,W] with values
// in (0,1).  Inference is deterministic; during training unit-Gaussian
// noise scaled by noise_std is added to every content code that feeds a
// decoder.  Generator-side losses see frozen discriminator weights and the
// discriminator loss sees detached fakes, so the two parameter groups never
// receive gradients from each other's objectives.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "retex/blob_io.hpp"
#include "retex/metrics.hpp"
#include "retex/rng.hpp"
#include "retex/tensor.hpp"

namespace retex {

struct TranslatorConfig {
  std::size_t a_channels = 6;  // domain-A channels (3 in the no-texture run)
  // Encoder channel widths after each stride-2 stage; the last is the
  // content-code width.  Spatial dims shrink by 8, so inputs must be
  // divisible by 8.
  std::size_t width1 = 32, width2 = 48, latent = 64;
  std::size_t head_width = 16;  // channels before the decoder's output conv
  std::size_t disc_width = 32;  // first discriminator stage, doubling twice
  double noise_std = 1.0;
  double norm_eps = 1e-5;
  MsssimConfig image_metric{};
  // Content codes are small (H/8) and need a narrower window.
  MsssimConfig latent_metric{.window = 5, .sigma = 1.0};
};

template <typename T>
struct ConvT {
  TensorT<T> w;  // [OC,C,3,3]
  TensorT<T> b;  // [OC]
};

template <typename T>
struct InstanceNormT {
  TensorT<T> gamma, beta;  // [C]
};

template <typename T>
struct ResBlockT {
  ConvT<T> conv1, conv2;
  InstanceNormT<T> norm1, norm2;
};

template <typename T>
struct EncoderT {
  ConvT<T> down1, down2, down3;  // stride 2 each
  InstanceNormT<T> norm1, norm2, norm3;
  ResBlockT<T> res1, res2;
};

template <typename T>
struct DecoderT {
  TensorT<T> style;  // [latent], constant over space, added to the code
  ResBlockT<T> res1, res2;
  ConvT<T> up1, up2, up3;  // each after a nearest 2x upsample
  InstanceNormT<T> norm1, norm2, norm3;
  ConvT<T> out;  // to a_channels or 3, sigmoid
};

template <typename T>
struct DiscriminatorT {
  ConvT<T> down1, down2, down3, down4;  // stride 2, leaky relu
  InstanceNormT<T> norm2, norm3, norm4;  // first and head stay unnormalized
  ConvT<T> head;  // 1-channel patch logits
};

template <typename T>
struct TranslatorT {
  TranslatorConfig config;
  EncoderT<T> encoder_a, encoder_b;
  DecoderT<T> decoder_a, decoder_b;
  DiscriminatorT<T> disc_a, disc_b;

  // Trainable tensors in a fixed order (encoders, decoders | both
  // discriminators); checkpoints and optimizers rely on the order.
  std::vector<TensorT<T>> generator_parameters() const;
  std::vector<TensorT<T>> discriminator_parameters() const;
};

using Translator = TranslatorT<double>;

// Conv weights uniform in +-1/sqrt(fan_in), biases zero, norm scales one,
// style vectors zero; every draw is fixed by the seed.
template <typename T>
TranslatorT<T> make_translator(const TranslatorConfig& config,
                               std::uint64_t seed);

// Content code [N, latent, H/8, W/8].  Rejects inputs whose spatial dims
// are not divisible by 8 or whose channel count does not match the domain.
template <typename T>
TensorT<T> encode_a(const TranslatorT<T>& tr, const TensorT<T>& a);
template <typename T>
TensorT<T> encode_b(const TranslatorT<T>& tr, const TensorT<T>& p);

// Decode a content code back into an image in (0,1).
template <typename T>
TensorT<T> decode_a(const TranslatorT<T>& tr, const TensorT<T>& content);
template <typename T>
TensorT<T> decode_b(const TranslatorT<T>& tr, const TensorT<T>& content);

// Fake photo G_B(E_A(a)), [N,3,H,W].  With training set, rng must be given
// and supplies the content noise; without it the path is deterministic.
template <typename T>
TensorT<T> translate_a_to_b(const TranslatorT<T>& tr, const TensorT<T>& a,
                            bool training = false, Rng* rng = nullptr);

// Fake scene rendering G_A(E_B(p)) split into its parts.  projection holds
// the first three channels and uvl the last three; with 3-channel domain A
// there is no projection half and projection stays undefined.
template <typename T>
struct FakeSceneT {
  TensorT<T> a;           // full [N,a_channels,H,W] output
  TensorT<T> projection;  // [N,3,H,W] or undefined
  TensorT<T> uvl;         // [N,3,H,W]
};

template <typename T>
FakeSceneT<T> translate_b_to_a(const TranslatorT<T>& tr, const TensorT<T>& p,
                               bool training = false, Rng* rng = nullptr);

// All translation losses over an unpaired batch pair, sharing one forward
// graph.  cyc/rec compare images through omega, con compares content codes
// through omega with the latent metric, and the adversarial pair is
// least-squares with real target 1 and fake target 0, averaged over the two
// domains.  adv_gen is built on frozen discriminator copies and adv_disc on
// detached fakes.  The fake images are returned for reuse by downstream
// losses.
template <typename T>
struct TranslationLossesT {
  TensorT<T> cyc, rec, con, adv_gen, adv_disc;  // scalars
  TensorT<T> fake_photo;                        // T_{A->B}(a)
  FakeSceneT<T> fake_scene;                     // T_{B->A}(p)
};

template <typename T>
TranslationLossesT<T> translation_losses(const TranslatorT<T>& tr,
                                         const TensorT<T>& a,
                                         const TensorT<T>& p,
                                         bool training = false,
                                         Rng* rng = nullptr);

template <typename T>
void save_translator(const TranslatorT<T>& tr, const std::string& path);
template <typename T>
TranslatorT<T> load_translator(const std::string& path);

// Blob-embedded forms, for containers that hold a translator next to other
// state.  Section names carry their own "translator/" and "param/" prefixes,
// so one blob can hold at most one translator.
template <typename T>
void save_translator(const TranslatorT<T>& tr, BlobWriter& writer);
template <typename T>
TranslatorT<T> load_translator(const BlobReader& reader);

}  // namespace retex

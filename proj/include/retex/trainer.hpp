#pragma once

// Training loop for the texture bank and the translator.
//
// One step draws an unpaired batch (scenes and photos sampled separately),
// projects the current textures into each scene, runs the translation
// losses, adds the unprojection-consistency loss l_uc (per-texel std of the
// fake photos' unprojections across the batch) and the texture-realism loss
// l_tr (omega between the projection and its translation), and applies three
// Adam updates: encoders+decoders, discriminators, and textures each have
// their own optimizer.  Ablation variants drop parts of the pipeline:
// no-consistency keeps the textures but removes l_uc and l_tr, no-texture
// feeds raw UVL scenes (3-channel domain A, no bank at all), and raster
// swaps the neural textures for trainable texel grids.
//
// Training is resolution-staged: frames are rescaled to a scheduled height
// (scenes by nearest pixel so UVL triplets stay valid samples, photos
// bilinearly) and randomly cropped.  Crops never rescale UVL values; they
// are surface coordinates, not screen coordinates.
//
// Everything is deterministic per seed: sampling, crops, and decoder noise
// come from seeded streams that checkpoints capture in full, so a resumed
// run continues bit for bit where the saved one stopped.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "retex/blob_io.hpp"
#include "retex/config.hpp"
#include "retex/image.hpp"
#include "retex/neural_texture.hpp"
#include "retex/rng.hpp"
#include "retex/tensor.hpp"
#include "retex/translator.hpp"

namespace retex {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Variant { full, no_consistency, no_texture, raster };

std::string variant_name(Variant variant);
Variant variant_from_name(const std::string& name);  // throws TrainError

// Resolution stage: frames are scaled to `height` (width follows the source
// aspect ratio, rounded to a multiple of 8) from iteration `start` on.
struct ScheduleStage {
  std::size_t start = 0;
  std::size_t height = 0;
};

struct TrainConfig {
  std::size_t iterations = 5000;
  std::size_t batch_size = 4;
  std::size_t crop = 64;  // clamped per stage to the scaled frame size
  std::vector<ScheduleStage> schedule{{0, 48}, {1250, 56}, {2500, 64}};
  double lr_translator = 1e-4;  // encoders+decoders and discriminators
  double lr_texture = 1e-3;
  std::size_t halving_period = 2500;  // all rates halve this often; 0 = never
  // Component weights in the generator objective (w_adv also scales the
  // discriminator side).  uc = unprojection consistency, tr = texture
  // realism.
  double w_cyc = 1, w_rec = 1, w_con = 1, w_adv = 1, w_uc = 1, w_tr = 1;
  Variant variant = Variant::full;
  std::uint64_t seed = 0;
  std::size_t train_count = 0;  // use only the first n pairs; 0 = all
  TranslatorConfig translator{};
  std::size_t texture_k = 256;
  double texture_freq_sigma = 10.0;
  std::size_t texture_hidden = 128;
  bool share_frequencies = false;
  std::size_t raster_resolution = 128;    // raster variant's grid size
  std::size_t unproject_resolution = 128;
  bool strict_consistency = false;  // count texels missing from a sample as 0
  bool detach_realism_target = false;  // l_tr pulls only the projection
  std::size_t checkpoint_period = 1000;  // 0 = only the final checkpoint
  std::size_t preview_period = 0;        // preview PNGs; 0 = none
};

// Throws TrainError on an unusable configuration.  Beyond simple range
// checks, every stage's effective crop must be a multiple of 8 at least
// 8 * latent window tall (the content-code omega needs that many code rows)
// and at least one image-metric window wide, and variants that compute l_uc
// need batch_size >= 2 (a per-texel std across one sample is vacuous).
void validate_train_config(const TrainConfig& cfg);

// The translator the variant actually trains (no-texture drops the
// projection half of domain A).
TranslatorConfig effective_translator_config(const TrainConfig& cfg);

// Hash over every field that changes what a run computes (weights, variant,
// architecture, seed, ...), excluding run-length and output cadence
// (iterations, checkpoint/preview periods), so a checkpoint can be resumed
// with more iterations but not under a different experiment.
std::uint64_t config_hash(const TrainConfig& cfg);

TrainConfig train_config_from_config(const Config& config);

// Adam with the adversarial-training betas (0.5, 0.999).  Registered
// tensors are updated in place; a tensor with no gradient buffer counts as
// zero gradient, so an update whose gradients are all zero is exactly a
// no-op on the values.
template <typename T>
class AdamT {
 public:
  AdamT() = default;
  AdamT(std::vector<TensorT<T>> params, double lr, double beta1 = 0.5,
        double beta2 = 0.999, double eps = 1e-8);

  void zero_grad();
  void step();

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  std::uint64_t steps() const { return t_; }
  const std::vector<TensorT<T>>& params() const { return params_; }

  void save(BlobWriter& writer, const std::string& prefix) const;
  // Loads moments saved under `prefix` into this optimizer; the registered
  // parameter list must match the saved shapes.
  void load(const BlobReader& reader, const std::string& prefix);

 private:
  std::vector<TensorT<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  double lr_ = 0, beta1_ = 0.5, beta2_ = 0.999, eps_ = 1e-8;
  std::uint64_t t_ = 0;
};

// Uniform passes over 0..n-1 without replacement, reshuffling from its own
// stream each time a pass is exhausted.
class EpochSampler {
 public:
  EpochSampler() = default;
  EpochSampler(std::size_t n, std::uint64_t seed);

  std::size_t next();
  std::size_t size() const { return order_.size(); }

  void save(BlobWriter& writer, const std::string& prefix) const;
  static EpochSampler load(const BlobReader& reader, const std::string& prefix);

 private:
  std::vector<std::uint64_t> order_;
  std::size_t cursor_ = 0;
  Rng rng_{0};
};

template <typename T>
struct TrainerStateT {
  TranslatorT<T> translator;
  AdamT<T> opt_translator, opt_disc, opt_texture;
  EpochSampler scenes, photos;
  Rng rng{0};  // crop offsets and decoder noise, in draw order
  std::size_t iteration = 0;
};

using Adam = AdamT<double>;
using TrainerState = TrainerStateT<double>;

// The bank the variant trains: neural textures, raster grids, or an empty
// bank for no-texture.
template <typename T>
TextureBankT<T> make_train_bank(const TrainConfig& cfg,
                                std::size_t label_count);

// Fresh state: translator, optimizers over {encoders+decoders},
// {discriminators}, {bank parameters}, and the three seeded streams.
template <typename T>
TrainerStateT<T> make_trainer(const TrainConfig& cfg,
                              const TextureBankT<T>& bank,
                              std::size_t scene_count,
                              std::size_t photo_count);

// One component value per CSV column; uc and tr are absent for variants
// that do not compute them.
struct LossReport {
  double cyc = 0, rec = 0, con = 0, adv_gen = 0, adv_disc = 0;
  std::optional<double> uc, tr;
  double lr_translator = 0, lr_texture = 0;
};

// One optimization step over prepared batches (already scaled and cropped).
// Forward builds every loss on one graph; the generator objective updates
// encoders+decoders and textures, the discriminator objective (fakes and
// reals detached) updates the discriminators.  Any non-finite component
// aborts with TrainError naming the component.  Advances state.iteration
// and the noise stream; learning rates follow the halving schedule.
template <typename T>
LossReport train_step(TrainerStateT<T>& state, TextureBankT<T>& bank,
                      const std::vector<Image>& batch_scenes,
                      const std::vector<Image>& batch_photos,
                      const TrainConfig& cfg);

// Independent uniform crops of a scene and optionally a photo (the images
// are unpaired, so their offsets are drawn separately: scene y, scene x,
// photo y, photo x).  Pixel values are copied verbatim.  A crop larger than
// either image is an error.
struct CroppedPair {
  Image scene, photo;
};
CroppedPair crop_pair(const Image& scene, const Image* photo,
                      std::size_t crop, Rng& rng);

// Piecewise-constant staged height for this iteration.
std::size_t schedule_resolution(std::size_t iteration, const TrainConfig& cfg);

// Matching width for a staged height: source aspect ratio, rounded to the
// nearest multiple of 8 (minimum 8).
std::size_t scheduled_width(std::size_t height, std::size_t source_width,
                            std::size_t source_height);

// Everything a resumed run needs, in one blob: translator, bank, the three
// optimizers' moments, both samplers, the noise stream, and the iteration
// counter, tagged with config_hash.
template <typename T>
void save_checkpoint(const std::string& path, const TrainerStateT<T>& state,
                     const TextureBankT<T>& bank, const TrainConfig& cfg);

template <typename T>
struct CheckpointT {
  TrainerStateT<T> state;
  TextureBankT<T> bank;
};

using Checkpoint = CheckpointT<double>;

// Rejects checkpoints whose config_hash does not match cfg.
template <typename T>
CheckpointT<T> load_checkpoint(const std::string& path,
                               const TrainConfig& cfg);

// Full run: loads the dataset (first train_count pairs), trains for
// cfg.iterations steps, and writes into out_dir a per-iteration loss CSV
// (header iter,l_cyc,l_rec,l_con,l_adv_g,l_adv_d,l_uc,l_tr,lr_t,lr_tex;
// disabled components log as 0), periodic and final checkpoints, final
// translator.ckpt and bank.ckpt, and optional preview PNGs.  resume_from
// continues a saved checkpoint, appending to an existing log.  Returns the
// last step's report.
template <typename T>
LossReport train(const std::string& dataset_dir, const TrainConfig& cfg,
                 const std::string& out_dir,
                 const std::string& resume_from = "");

}  // namespace retex

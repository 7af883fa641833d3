#pragma once

// Scene/photo dataset synthesis and file I/O.
//
// A dataset is a directory of paired renders with known ground truth:
//
//   scenes/000000.png    16-bit (u, v, label) images
//   photos/000000.png    8-bit RGB, the scene with its textures applied
//   textures/label_001.png  ground-truth texture per label, 8-bit
//   shading/000000.png   grayscale shade map, only when shading is on
//   manifest.json        label table, sizes, seed, scene/photo pairing
//
// The pairing is recorded for evaluation only; training treats the two image
// sets as unpaired.  Generation is a pure function of (template, seed):
// rerunning it reproduces every file byte for byte.

#include <cstdint>
#include <string>
#include <vector>

#include "retex/config.hpp"
#include "retex/image.hpp"
#include "retex/rasterizer.hpp"
#include "retex/rng.hpp"
#include "retex/scene.hpp"

namespace retex {

// UVL images hold (u, v, label) and are stored at 16 bits so the uv channels
// keep texture-space precision.  Photos are ordinary 8-bit RGB.  The load
// functions reject images that are not 3-channel and report the path.
void save_uvl(const std::string& path, const Image& uvl);
Image load_uvl(const std::string& path);
void save_photo(const std::string& path, const Image& photo);
Image load_photo(const std::string& path);

// Procedural ground-truth textures.  Kinds: "solid" (one random color),
// "checker" (two colors, random cell count), "stripes" (three colors, random
// orientation and count), "noise" (independent random color per texel).
// Values are quantized to 8 bits so the texture survives the photo PNG round
// trip exactly.  Unknown kinds are rejected.
Image make_pattern_texture(const std::string& kind, std::size_t resolution,
                           Rng& rng);
// One [0,1]^2 atlas for a cube: the pattern is drawn separately into each of
// the six face cells, so every face is distinct.
Image make_cube_atlas_texture(const std::string& kind, std::size_t resolution,
                              Rng& rng);

// Nearest-texel lookup: column texel_index(u, W), row counted down from the
// top as H - 1 - texel_index(v, H).  Projection of raster textures follows
// the same convention, which is what makes synthesized photos exactly
// reproducible from the stored scene.
void nearest_texel(const Image& texture, double u, double v, std::size_t* row,
                   std::size_t* col);

// Ranges are sampled uniformly; min == max pins the value.
struct Range {
  double min = 0, max = 0;
};

struct ObjectTemplate {
  std::string mesh = "cube";     // quad | cube | flag
  std::string texture = "checker";
  // quad
  double size_x = 1, size_y = 1;
  std::size_t grid = 8;
  // cube
  double size = 0.5;
  // flag
  double width = 0.6, height = 0.5, amplitude = 0.05, waves = 1.5;
  bool random_phase = true;
  Range center_x, center_y, center_z;
  Range yaw;
};

struct CameraTemplate {
  Range azimuth_deg{0, 360};
  Range elevation_deg{25, 55};
  Range distance{2.2, 3.2};
  double fov_y_deg = 42;
  double target_jitter = 0.15;  // uniform cube around the origin
};

struct SceneTemplate {
  std::size_t width = 64, height = 64;
  std::size_t texture_resolution = 128;
  bool shading = false;
  std::string backdrop_texture = "checker";
  CameraTemplate camera;
  std::vector<ObjectTemplate> objects;  // labels 2, 3, ... in order

  std::size_t label_count() const { return objects.size() + 1; }
};

// Table quad, resting cube, and a flag; four labels with the backdrop.
SceneTemplate default_scene_template();

// Flat `key = value` form: top-level keys (width, height, shading, ...),
// `camera.*`, and `object1.*`, `object2.*`, ... numbered from 1.  Every key
// has a default, so an empty config is the default template minus objects.
SceneTemplate scene_template_from_config(const Config& config);

struct SampledScene {
  Camera camera;
  std::vector<SceneObject> objects;
};

// Draws camera pose then object poses in template order; equal Rng state
// gives an identical scene.
SampledScene sample_scene(const SceneTemplate& tpl, Rng& rng);

// Applies per-label textures to a uvl image by nearest-texel lookup;
// textures[i] belongs to label i+1.  An optional HxWx1 shade map multiplies
// the color.  Pixels whose label channel does not decode are an error
// naming the pixel.
Image synthesize_photo(const Image& uvl, const std::vector<Image>& textures,
                       std::size_t label_count, const Image* shade);

// Writes the full directory layout described above.  Textures are drawn
// once from the seed, scene i from mix_seed(seed, 1 + i).
void generate_dataset(const SceneTemplate& tpl, std::size_t n_scenes,
                      std::uint64_t seed, const std::string& out_dir);

struct DatasetInfo {
  std::size_t label_count = 0, width = 0, height = 0, texture_resolution = 0;
  std::size_t n_scenes = 0;
  std::uint64_t seed = 0;
  bool shading = false;
  std::vector<std::string> scene_paths;    // absolute-ish: out_dir joined
  std::vector<std::string> photo_paths;
  std::vector<std::string> shading_paths;  // empty when shading is off
  std::vector<std::string> texture_paths;  // index i -> label i+1
};

DatasetInfo load_dataset(const std::string& dir);

}  // namespace retex

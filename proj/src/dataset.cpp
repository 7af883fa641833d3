#include "retex/dataset.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace retex {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Image load_rgb(const std::string& path, const char* what) {
  Image image = load_png(path);
  if (image.channels != 3)
    throw std::runtime_error(std::string(what) + " " + path + ": expected a 3-channel image, got " +
                             std::to_string(image.channels) + " channel(s)");
  return image;
}

void require_rgb(const Image& image, const std::string& path, const char* what) {
  if (image.channels != 3)
    throw std::runtime_error(std::string(what) + " " + path + ": expected a 3-channel image, got " +
                             std::to_string(image.channels) + " channel(s)");
}

}  // namespace

void save_uvl(const std::string& path, const Image& uvl) {
  require_rgb(uvl, path, "save_uvl");
  save_png16(path, uvl);
}

Image load_uvl(const std::string& path) { return load_rgb(path, "load_uvl"); }

void save_photo(const std::string& path, const Image& photo) {
  require_rgb(photo, path, "save_photo");
  save_png8(path, photo);
}

Image load_photo(const std::string& path) { return load_rgb(path, "load_photo"); }

namespace {

struct Color {
  double r, g, b;
};

Color random_color(Rng& rng) { return {rng.uniform(), rng.uniform(), rng.uniform()}; }

// Draws one pattern into the pixel rectangle [x0,x1) x [y0,y1).  Pattern
// coordinates are relative to the rectangle so a cube face cell looks the
// same as a standalone texture.
void draw_pattern(Image& image, const std::string& kind, std::size_t x0,
                  std::size_t y0, std::size_t x1, std::size_t y1, Rng& rng) {
  std::size_t w = x1 - x0, h = y1 - y0;
  auto put = [&](std::size_t y, std::size_t x, Color c) {
    image.at(y0 + y, x0 + x, 0) = c.r;
    image.at(y0 + y, x0 + x, 1) = c.g;
    image.at(y0 + y, x0 + x, 2) = c.b;
  };
  if (kind == "solid") {
    Color c = random_color(rng);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) put(y, x, c);
  } else if (kind == "checker") {
    Color a = random_color(rng), b = random_color(rng);
    std::size_t cells = 4 + 2 * rng.index(3);  // 4, 6 or 8 per side
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        std::size_t cx = x * cells / w, cy = y * cells / h;
        put(y, x, (cx + cy) % 2 ? a : b);
      }
  } else if (kind == "stripes") {
    Color c[3] = {random_color(rng), random_color(rng), random_color(rng)};
    std::size_t count = 4 + rng.index(5);  // 4..8 stripes
    std::size_t orient = rng.index(3);     // 0 horizontal, 1 vertical, 2 diagonal
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        std::size_t t = orient == 0 ? y * count / h
                        : orient == 1 ? x * count / w
                                      : (x + y) * count / (w + h);
        put(y, x, c[t % 3]);
      }
  } else if (kind == "noise") {
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) put(y, x, random_color(rng));
  } else {
    throw std::invalid_argument("unknown texture pattern kind: " + kind);
  }
}

}  // namespace

Image make_pattern_texture(const std::string& kind, std::size_t resolution,
                           Rng& rng) {
  Image image = make_image(resolution, resolution, 3);
  draw_pattern(image, kind, 0, 0, resolution, resolution, rng);
  quantize_image(image, 256);
  return image;
}

Image make_cube_atlas_texture(const std::string& kind, std::size_t resolution,
                              Rng& rng) {
  Image image = make_image(resolution, resolution, 3);
  for (std::size_t face = 0; face < 6; ++face) {
    std::size_t fx = face % 3, fy = face / 3;
    std::size_t x0 = fx * resolution / 3, x1 = (fx + 1) * resolution / 3;
    // v = 1 is the top pixel row, so the fy = 1 cells sit in the upper half.
    std::size_t y0 = (1 - fy) * resolution / 2, y1 = (2 - fy) * resolution / 2;
    draw_pattern(image, kind, x0, y0, x1, y1, rng);
  }
  quantize_image(image, 256);
  return image;
}

void nearest_texel(const Image& texture, double u, double v, std::size_t* row,
                   std::size_t* col) {
  *col = texel_index(u, texture.width);
  *row = texture.height - 1 - texel_index(v, texture.height);
}

SceneTemplate default_scene_template() {
  SceneTemplate tpl;
  ObjectTemplate table;
  table.mesh = "quad";
  table.texture = "checker";
  table.size_x = 2.4;
  table.size_y = 1.8;
  tpl.objects.push_back(table);

  ObjectTemplate cube;
  cube.mesh = "cube";
  cube.texture = "stripes";
  cube.size = 0.5;
  cube.center_x = {-0.5, 0.5};
  cube.center_y = {-0.35, 0.35};
  cube.center_z = {0.25, 0.25};  // resting on the table
  cube.yaw = {0, 6.283185307179586};
  tpl.objects.push_back(cube);

  ObjectTemplate flag;
  flag.mesh = "flag";
  flag.texture = "checker";
  flag.center_x = {-0.7, 0.7};
  flag.center_y = {0.1, 0.55};
  flag.yaw = {-0.6, 0.6};
  tpl.objects.push_back(flag);
  return tpl;
}

namespace {

Range range_from(const Config& c, const std::string& key, Range fallback) {
  return {c.get_double_or(key + "_min", fallback.min),
          c.get_double_or(key + "_max", fallback.max)};
}

ObjectTemplate object_from(const Config& c, const std::string& p) {
  ObjectTemplate o;
  o.mesh = c.get_string_or(p + "mesh", o.mesh);
  if (o.mesh != "quad" && o.mesh != "cube" && o.mesh != "flag")
    throw ConfigError(p + "mesh: unknown mesh kind '" + o.mesh + "'");
  o.texture = c.get_string_or(p + "texture", o.texture);
  o.size_x = c.get_double_or(p + "size_x", o.size_x);
  o.size_y = c.get_double_or(p + "size_y", o.size_y);
  o.grid = static_cast<std::size_t>(c.get_int_or(p + "grid", static_cast<std::int64_t>(o.grid)));
  o.size = c.get_double_or(p + "size", o.size);
  o.width = c.get_double_or(p + "width", o.width);
  o.height = c.get_double_or(p + "height", o.height);
  o.amplitude = c.get_double_or(p + "amplitude", o.amplitude);
  o.waves = c.get_double_or(p + "waves", o.waves);
  o.random_phase = c.get_bool_or(p + "random_phase", o.random_phase);
  o.center_x = range_from(c, p + "center_x", o.center_x);
  o.center_y = range_from(c, p + "center_y", o.center_y);
  o.center_z = range_from(c, p + "center_z", o.center_z);
  o.yaw = range_from(c, p + "yaw", o.yaw);
  return o;
}

}  // namespace

SceneTemplate scene_template_from_config(const Config& config) {
  SceneTemplate tpl;
  tpl.objects.clear();
  tpl.width = static_cast<std::size_t>(config.get_int_or("width", 64));
  tpl.height = static_cast<std::size_t>(config.get_int_or("height", 64));
  tpl.texture_resolution =
      static_cast<std::size_t>(config.get_int_or("texture_resolution", 128));
  tpl.shading = config.get_bool_or("shading", false);
  tpl.backdrop_texture = config.get_string_or("backdrop.texture", "checker");
  tpl.camera.azimuth_deg = range_from(config, "camera.azimuth", tpl.camera.azimuth_deg);
  tpl.camera.elevation_deg =
      range_from(config, "camera.elevation", tpl.camera.elevation_deg);
  tpl.camera.distance = range_from(config, "camera.distance", tpl.camera.distance);
  tpl.camera.fov_y_deg = config.get_double_or("camera.fov_y", tpl.camera.fov_y_deg);
  tpl.camera.target_jitter =
      config.get_double_or("camera.target_jitter", tpl.camera.target_jitter);
  for (std::size_t i = 1;; ++i) {
    std::string prefix = "object" + std::to_string(i) + ".";
    if (config.keys_with_prefix(prefix).empty()) break;
    tpl.objects.push_back(object_from(config, prefix));
  }
  return tpl;
}

SampledScene sample_scene(const SceneTemplate& tpl, Rng& rng) {
  SampledScene scene;
  const CameraTemplate& ct = tpl.camera;
  double az = rng.uniform(ct.azimuth_deg.min, ct.azimuth_deg.max) * M_PI / 180;
  double el = rng.uniform(ct.elevation_deg.min, ct.elevation_deg.max) * M_PI / 180;
  double dist = rng.uniform(ct.distance.min, ct.distance.max);
  Vec3 target{rng.uniform(-ct.target_jitter, ct.target_jitter),
              rng.uniform(-ct.target_jitter, ct.target_jitter),
              rng.uniform(-ct.target_jitter, ct.target_jitter)};
  scene.camera.position = {target.x + dist * std::cos(el) * std::cos(az),
                           target.y + dist * std::cos(el) * std::sin(az),
                           target.z + dist * std::sin(el)};
  scene.camera.target = target;
  scene.camera.up = {0, 0, 1};
  scene.camera.fov_y_deg = ct.fov_y_deg;

  std::size_t label = 2;
  for (const ObjectTemplate& ot : tpl.objects) {
    Placement place;
    place.translate = {rng.uniform(ot.center_x.min, ot.center_x.max),
                       rng.uniform(ot.center_y.min, ot.center_y.max),
                       rng.uniform(ot.center_z.min, ot.center_z.max)};
    place.yaw = rng.uniform(ot.yaw.min, ot.yaw.max);
    Mesh mesh;
    if (ot.mesh == "quad") {
      mesh = make_quad_mesh(ot.size_x, ot.size_y, ot.grid);
    } else if (ot.mesh == "cube") {
      mesh = make_cube_mesh(ot.size);
    } else if (ot.mesh == "flag") {
      double phase = ot.random_phase ? rng.uniform(0, 6.283185307179586) : 0.0;
      mesh = make_flag_mesh(ot.grid, ot.width, ot.height, ot.amplitude,
                            ot.waves, phase);
    } else {
      throw std::invalid_argument("unknown mesh kind: " + ot.mesh);
    }
    scene.objects.push_back({label++, std::move(mesh), place});
  }
  return scene;
}

Image synthesize_photo(const Image& uvl, const std::vector<Image>& textures,
                       std::size_t label_count, const Image* shade) {
  if (textures.size() != label_count)
    throw std::invalid_argument("synthesize_photo: " + std::to_string(textures.size()) +
                                " textures for " + std::to_string(label_count) + " labels");
  Image photo = make_image(uvl.width, uvl.height, 3);
  for (std::size_t y = 0; y < uvl.height; ++y)
    for (std::size_t x = 0; x < uvl.width; ++x) {
      auto label = decode_label_checked(uvl.at(y, x, 2), label_count);
      if (!label)
        throw std::runtime_error("synthesize_photo: pixel (" + std::to_string(x) + ", " +
                                 std::to_string(y) + ") has label value " +
                                 std::to_string(uvl.at(y, x, 2)) + " which decodes to no surface");
      const Image& tex = textures[*label - 1];
      std::size_t row, col;
      nearest_texel(tex, uvl.at(y, x, 0), uvl.at(y, x, 1), &row, &col);
      double s = shade ? shade->at(y, x, 0) : 1.0;
      for (std::size_t c = 0; c < 3; ++c)
        photo.at(y, x, c) = tex.at(row, col, c) * s;
    }
  return photo;
}

namespace {

std::string scene_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.png", i);
  return buf;
}

std::string texture_name(std::size_t label) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "label_%03zu.png", label);
  return buf;
}

}  // namespace

void generate_dataset(const SceneTemplate& tpl, std::size_t n_scenes,
                      std::uint64_t seed, const std::string& out_dir) {
  if (n_scenes < 1)
    throw std::invalid_argument("generate_dataset: n_scenes must be at least 1");
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "scenes", ec);
  fs::create_directories(fs::path(out_dir) / "photos", ec);
  fs::create_directories(fs::path(out_dir) / "textures", ec);
  if (tpl.shading) fs::create_directories(fs::path(out_dir) / "shading", ec);
  if (!fs::is_directory(fs::path(out_dir) / "scenes"))
    throw std::runtime_error("generate_dataset: cannot create output directory " + out_dir);

  std::size_t L = tpl.label_count();
  Rng texture_rng(mix_seed(seed, 0));
  std::vector<Image> textures;
  json labels = json::array();
  {
    textures.push_back(make_pattern_texture(tpl.backdrop_texture,
                                            tpl.texture_resolution, texture_rng));
    labels.push_back({{"label", 1},
                      {"role", "backdrop"},
                      {"texture_kind", tpl.backdrop_texture},
                      {"texture", "textures/" + texture_name(1)}});
  }
  for (std::size_t i = 0; i < tpl.objects.size(); ++i) {
    const ObjectTemplate& ot = tpl.objects[i];
    Image tex = ot.mesh == "cube"
                    ? make_cube_atlas_texture(ot.texture, tpl.texture_resolution,
                                              texture_rng)
                    : make_pattern_texture(ot.texture, tpl.texture_resolution,
                                           texture_rng);
    textures.push_back(std::move(tex));
    labels.push_back({{"label", i + 2},
                      {"role", "object"},
                      {"mesh", ot.mesh},
                      {"texture_kind", ot.texture},
                      {"texture", "textures/" + texture_name(i + 2)}});
  }
  for (std::size_t i = 0; i < textures.size(); ++i)
    save_photo((fs::path(out_dir) / "textures" / texture_name(i + 1)).string(),
               textures[i]);

  ShadingParams shading_params;
  shading_params.light_dir = normalize(Vec3{0.3, -0.25, 1.0});
  json pairs = json::array();
  for (std::size_t i = 0; i < n_scenes; ++i) {
    Rng rng(mix_seed(seed, 1 + i));
    SampledScene scene = sample_scene(tpl, rng);
    RenderResult render =
        render_scene(scene.camera, scene.objects, L, tpl.width, tpl.height,
                     tpl.shading ? &shading_params : nullptr);
    // Quantize before synthesizing so the photo is computed from exactly the
    // uv values the scene file will hold after its PNG round trip.
    quantize_image(render.uvl, 65536);
    const Image* shade = nullptr;
    if (tpl.shading) {
      quantize_image(render.shading, 256);
      shade = &render.shading;
    }
    Image photo = synthesize_photo(render.uvl, textures, L, shade);
    quantize_image(photo, 256);
    save_uvl((fs::path(out_dir) / "scenes" / scene_name(i)).string(), render.uvl);
    save_photo((fs::path(out_dir) / "photos" / scene_name(i)).string(), photo);
    if (tpl.shading)
      save_png8((fs::path(out_dir) / "shading" / scene_name(i)).string(),
                render.shading);
    pairs.push_back({{"scene", "scenes/" + scene_name(i)},
                     {"photo", "photos/" + scene_name(i)}});
  }

  json manifest;
  manifest["label_count"] = L;
  manifest["width"] = tpl.width;
  manifest["height"] = tpl.height;
  manifest["texture_resolution"] = tpl.texture_resolution;
  manifest["n_scenes"] = n_scenes;
  manifest["seed"] = seed;
  manifest["shading"] = tpl.shading;
  manifest["labels"] = labels;
  manifest["pairs"] = pairs;
  std::ofstream out(fs::path(out_dir) / "manifest.json", std::ios::binary);
  out << manifest.dump(2) << "\n";
  if (!out)
    throw std::runtime_error("generate_dataset: cannot write manifest in " + out_dir);
}

DatasetInfo load_dataset(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!in)
    throw std::runtime_error("load_dataset: cannot open " +
                             (fs::path(dir) / "manifest.json").string());
  json manifest = json::parse(in, nullptr, true);
  DatasetInfo info;
  info.label_count = manifest.at("label_count").get<std::size_t>();
  info.width = manifest.at("width").get<std::size_t>();
  info.height = manifest.at("height").get<std::size_t>();
  info.texture_resolution = manifest.at("texture_resolution").get<std::size_t>();
  info.n_scenes = manifest.at("n_scenes").get<std::size_t>();
  info.seed = manifest.at("seed").get<std::uint64_t>();
  info.shading = manifest.at("shading").get<bool>();
  for (const json& pair : manifest.at("pairs")) {
    info.scene_paths.push_back((fs::path(dir) / pair.at("scene").get<std::string>()).string());
    info.photo_paths.push_back((fs::path(dir) / pair.at("photo").get<std::string>()).string());
    if (info.shading) {
      std::string name = fs::path(pair.at("scene").get<std::string>()).filename().string();
      info.shading_paths.push_back((fs::path(dir) / "shading" / name).string());
    }
  }
  for (const json& label : manifest.at("labels"))
    info.texture_paths.push_back(
        (fs::path(dir) / label.at("texture").get<std::string>()).string());
  return info;
}

}  // namespace retex

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "retex/dataset.hpp"
#include "retex/rasterizer.hpp"

using retex::Image;
using retex::Rng;
using retex::SceneTemplate;

namespace {

std::string temp_dir(const std::string& name) {
  auto path = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(path);
  std::filesystem::create_directories(path);
  return path.string();
}

std::vector<char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Small template that renders fast: backdrop, table and a cube (L = 3).
SceneTemplate tiny_template() {
  SceneTemplate tpl;
  tpl.width = 40;
  tpl.height = 40;
  tpl.texture_resolution = 24;
  retex::ObjectTemplate table;
  table.mesh = "quad";
  table.texture = "checker";
  table.size_x = 2.4;
  table.size_y = 1.8;
  tpl.objects.push_back(table);
  retex::ObjectTemplate cube;
  cube.mesh = "cube";
  cube.texture = "stripes";
  cube.center_x = {-0.4, 0.4};
  cube.center_y = {-0.3, 0.3};
  cube.center_z = {0.25, 0.25};
  cube.yaw = {0, 6.28};
  tpl.objects.push_back(cube);
  return tpl;
}

}  // namespace

TEST_CASE("dataset: uvl files round-trip at 16-bit precision") {
  Image uvl = retex::make_image(9, 7, 3);
  Rng rng(5);
  for (double& v : uvl.pixels) v = rng.uniform();
  auto path = temp_dir("retex_ds_io") + "/scene.png";
  retex::save_uvl(path, uvl);
  Image back = retex::load_uvl(path);
  REQUIRE(back.width == 9);
  REQUIRE(back.channels == 3);
  for (std::size_t i = 0; i < uvl.pixels.size(); ++i)
    CHECK(std::abs(back.pixels[i] - uvl.pixels[i]) <= 0.5 / 65535.0 + 1e-12);
}

TEST_CASE("dataset: photo files round-trip at 8-bit precision") {
  Image photo = retex::make_image(6, 5, 3);
  Rng rng(9);
  for (double& v : photo.pixels) v = rng.uniform();
  auto path = temp_dir("retex_ds_io8") + "/photo.png";
  retex::save_photo(path, photo);
  Image back = retex::load_photo(path);
  for (std::size_t i = 0; i < photo.pixels.size(); ++i)
    CHECK(std::abs(back.pixels[i] - photo.pixels[i]) <= 0.5 / 255.0 + 1e-12);
  // A quantized image survives exactly.
  retex::quantize_image(photo, 256);
  retex::save_photo(path, photo);
  back = retex::load_photo(path);
  CHECK(back.pixels == photo.pixels);
}

TEST_CASE("dataset: grayscale and single-channel images are rejected") {
  auto dir = temp_dir("retex_ds_gray");
  Image gray = retex::make_image(4, 4, 1, 0.5);
  retex::save_png8(dir + "/gray.png", gray);
  CHECK_THROWS_WITH_AS(retex::load_uvl(dir + "/gray.png"),
                       doctest::Contains("gray.png"), std::runtime_error);
  CHECK_THROWS_AS(retex::load_photo(dir + "/gray.png"), std::runtime_error);
  CHECK_THROWS_AS(retex::save_uvl(dir + "/bad.png", gray), std::runtime_error);
  CHECK_THROWS_AS(retex::save_photo(dir + "/bad.png", gray), std::runtime_error);
  CHECK_THROWS_WITH_AS(retex::load_uvl(dir + "/missing.png"),
                       doctest::Contains("missing.png"), std::runtime_error);
}

TEST_CASE("dataset: labels survive an 8-bit uvl file") {
  // UVL is normally stored at 16 bits; this pins the stronger property that
  // even an 8-bit container keeps labels decodable.
  const std::size_t L = 4;
  Image uvl = retex::make_image(L, 1, 3);
  for (std::size_t x = 0; x < L; ++x)
    uvl.at(0, x, 2) = retex::encode_label(x + 1, L);
  auto path = temp_dir("retex_ds_8bit") + "/uvl8.png";
  retex::save_png8(path, uvl);
  Image back = retex::load_png(path);
  for (std::size_t x = 0; x < L; ++x)
    CHECK(retex::decode_label(back.at(0, x, 2), L) == x + 1);
}

TEST_CASE("dataset: pattern textures are 8-bit clean and deterministic") {
  for (const char* kind : {"solid", "checker", "stripes", "noise"}) {
    Rng rng(11);
    Image tex = retex::make_pattern_texture(kind, 32, rng);
    REQUIRE(tex.width == 32);
    REQUIRE(tex.channels == 3);
    std::set<int> distinct;
    for (double v : tex.pixels) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      double code = v * 255.0;
      CHECK(std::abs(code - std::round(code)) < 1e-9);
      distinct.insert(static_cast<int>(std::round(code)));
    }
    if (std::string(kind) == "noise") CHECK(distinct.size() > 50);
    Rng rng2(11);
    Image again = retex::make_pattern_texture(kind, 32, rng2);
    CHECK(again.pixels == tex.pixels);
  }
  Rng rng(1);
  CHECK_THROWS_AS(retex::make_pattern_texture("plaid", 16, rng),
                  std::invalid_argument);
}

TEST_CASE("dataset: checker texture has exactly two colors") {
  Rng rng(3);
  Image tex = retex::make_pattern_texture("checker", 48, rng);
  std::set<std::array<int, 3>> colors;
  for (std::size_t y = 0; y < tex.height; ++y)
    for (std::size_t x = 0; x < tex.width; ++x)
      colors.insert({static_cast<int>(std::round(tex.at(y, x, 0) * 255)),
                     static_cast<int>(std::round(tex.at(y, x, 1) * 255)),
                     static_cast<int>(std::round(tex.at(y, x, 2) * 255))});
  CHECK(colors.size() == 2);
}

TEST_CASE("dataset: cube atlas draws an independent pattern per face cell") {
  Rng rng(7);
  Image atlas = retex::make_cube_atlas_texture("solid", 30, rng);
  // Solid per face: sampling the center of each face cell gives six colors,
  // almost surely distinct for an 8-bit random draw.
  std::set<std::array<int, 3>> colors;
  for (std::size_t face = 0; face < 6; ++face) {
    auto r = retex::cube_face_rect(face);
    std::size_t row, col;
    retex::nearest_texel(atlas, (r.u0 + r.u1) / 2, (r.v0 + r.v1) / 2, &row, &col);
    colors.insert({static_cast<int>(std::round(atlas.at(row, col, 0) * 255)),
                   static_cast<int>(std::round(atlas.at(row, col, 1) * 255)),
                   static_cast<int>(std::round(atlas.at(row, col, 2) * 255))});
  }
  CHECK(colors.size() == 6);
}

TEST_CASE("dataset: nearest texel clamps to edges and splits at texel bounds") {
  Image tex = retex::make_image(4, 4, 3);
  std::size_t row, col;
  retex::nearest_texel(tex, 0.0, 1.0, &row, &col);
  CHECK(row == 0);
  CHECK(col == 0);
  retex::nearest_texel(tex, 1.0, 0.0, &row, &col);  // u = 1 clamps to last column
  CHECK(row == 3);
  CHECK(col == 3);
  retex::nearest_texel(tex, 0.26, 0.74, &row, &col);
  CHECK(col == 1);
  CHECK(row == 1);
  retex::nearest_texel(tex, -0.5, 1.5, &row, &col);  // out of range clamps
  CHECK(col == 0);
  CHECK(row == 0);
}

TEST_CASE("dataset: sampled poses are uniform over the configured bounds") {
  SceneTemplate tpl = tiny_template();
  Rng rng(21);
  const int n = 4000, buckets = 8;
  std::array<int, buckets> bx{}, by{}, byaw{};
  for (int i = 0; i < n; ++i) {
    auto scene = retex::sample_scene(tpl, rng);
    REQUIRE(scene.objects.size() == 2);
    const auto& cube = scene.objects[1];
    double fx = (cube.placement.translate.x + 0.4) / 0.8;
    double fy = (cube.placement.translate.y + 0.3) / 0.6;
    double fyaw = cube.placement.yaw / 6.28;
    REQUIRE(fx >= 0.0);
    REQUIRE(fx < 1.0);
    REQUIRE(fy >= 0.0);
    REQUIRE(fy < 1.0);
    bx[static_cast<int>(fx * buckets)] += 1;
    by[static_cast<int>(fy * buckets)] += 1;
    byaw[static_cast<int>(fyaw * buckets)] += 1;
    CHECK(cube.placement.translate.z == 0.25);
    double d = length(scene.camera.position - scene.camera.target);
    CHECK(d >= 2.2 - 1e-9);
    CHECK(d <= 3.2 + 1e-9);
  }
  // Chi-square against uniform, 7 degrees of freedom; 24.32 is the 99.9th
  // percentile, so a sound sampler fails this about once in a thousand seeds.
  auto chi2 = [&](const std::array<int, buckets>& counts) {
    double expected = static_cast<double>(n) / buckets, stat = 0;
    for (int c : counts) stat += (c - expected) * (c - expected) / expected;
    return stat;
  };
  CHECK(chi2(bx) < 24.32);
  CHECK(chi2(by) < 24.32);
  CHECK(chi2(byaw) < 24.32);
}

TEST_CASE("dataset: template parses from config and falls back to defaults") {
  auto config = retex::Config::parse(
      "width = 56\n"
      "shading = true\n"
      "camera.fov_y = 50\n"
      "object1.mesh = flag\n"
      "object1.amplitude = 0.1\n"
      "object1.center_x_min = -1\n"
      "object1.center_x_max = 1\n"
      "object2.mesh = cube\n"
      "object2.texture = noise\n");
  SceneTemplate tpl = retex::scene_template_from_config(config);
  CHECK(tpl.width == 56);
  CHECK(tpl.height == 64);
  CHECK(tpl.shading);
  CHECK(tpl.camera.fov_y_deg == 50);
  REQUIRE(tpl.objects.size() == 2);
  CHECK(tpl.objects[0].mesh == "flag");
  CHECK(tpl.objects[0].amplitude == 0.1);
  CHECK(tpl.objects[0].center_x.min == -1);
  CHECK(tpl.objects[1].texture == "noise");
  CHECK(tpl.label_count() == 3);

  auto bad = retex::Config::parse("object1.mesh = sphere\n");
  CHECK_THROWS_AS(retex::scene_template_from_config(bad), retex::ConfigError);
}

TEST_CASE("dataset: photo synthesis of a constant-red quad is all red") {
  retex::Camera cam;
  cam.position = {0, 0, 2};
  cam.target = {0, 0, 0};
  cam.up = {0, 1, 0};
  cam.fov_y_deg = 2 * std::atan(0.5) * 180 / M_PI;
  retex::SceneObject quad{2, retex::make_quad_mesh(2, 2), {}};
  auto render = retex::render_scene(cam, {quad}, 2, 24, 24, nullptr);
  Image red = retex::make_image(16, 16, 3);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) red.at(y, x, 0) = 1.0;
  std::vector<Image> textures{retex::make_image(16, 16, 3, 0.5), red};
  Image photo = retex::synthesize_photo(render.uvl, textures, 2, nullptr);
  for (std::size_t y = 0; y < 24; ++y)
    for (std::size_t x = 0; x < 24; ++x) {
      CHECK(photo.at(y, x, 0) == 1.0);
      CHECK(photo.at(y, x, 1) == 0.0);
      CHECK(photo.at(y, x, 2) == 0.0);
    }
}

TEST_CASE("dataset: photo synthesis validates labels and texture count") {
  Image uvl = retex::make_image(2, 2, 3);  // label channel 0 decodes to nothing
  std::vector<Image> textures{retex::make_image(4, 4, 3)};
  CHECK_THROWS_WITH_AS(retex::synthesize_photo(uvl, textures, 1, nullptr),
                       doctest::Contains("pixel (0, 0)"), std::runtime_error);
  CHECK_THROWS_AS(retex::synthesize_photo(uvl, textures, 2, nullptr),
                  std::invalid_argument);
}

TEST_CASE("dataset: generation is byte-identical across runs") {
  SceneTemplate tpl = tiny_template();
  auto dir_a = temp_dir("retex_ds_det_a");
  auto dir_b = temp_dir("retex_ds_det_b");
  retex::generate_dataset(tpl, 3, 77, dir_a);
  retex::generate_dataset(tpl, 3, 77, dir_b);
  std::size_t files = 0;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir_a)) {
    if (!entry.is_regular_file()) continue;
    ++files;
    auto rel = std::filesystem::relative(entry.path(), dir_a);
    CHECK(read_bytes(entry.path().string()) ==
          read_bytes((std::filesystem::path(dir_b) / rel).string()));
  }
  CHECK(files == 3 + 3 + 3 + 1);  // scenes, photos, textures, manifest

  // A different seed must actually change the data.
  auto dir_c = temp_dir("retex_ds_det_c");
  retex::generate_dataset(tpl, 3, 78, dir_c);
  CHECK(read_bytes(dir_a + "/scenes/000000.png") !=
        read_bytes(dir_c + "/scenes/000000.png"));
}

TEST_CASE("dataset: manifest records the label table and pairing") {
  SceneTemplate tpl = tiny_template();  // two objects
  auto dir = temp_dir("retex_ds_manifest");
  retex::generate_dataset(tpl, 4, 5, dir);
  auto info = retex::load_dataset(dir);
  CHECK(info.label_count == 3);
  CHECK(info.width == 40);
  CHECK(info.height == 40);
  CHECK(info.n_scenes == 4);
  CHECK(info.seed == 5);
  CHECK(!info.shading);
  REQUIRE(info.scene_paths.size() == 4);
  REQUIRE(info.photo_paths.size() == 4);
  REQUIRE(info.texture_paths.size() == 3);
  CHECK(info.shading_paths.empty());
  for (const auto& p : info.scene_paths) CHECK(std::filesystem::exists(p));
  for (const auto& p : info.photo_paths) CHECK(std::filesystem::exists(p));
  for (const auto& p : info.texture_paths) CHECK(std::filesystem::exists(p));
  CHECK_THROWS_WITH_AS(retex::load_dataset(dir + "/nope"),
                       doctest::Contains("manifest.json"), std::runtime_error);
  CHECK_THROWS_AS(retex::generate_dataset(tpl, 0, 5, dir), std::invalid_argument);
}

TEST_CASE("dataset: stored photos equal nearest-texel lookup of stored scenes") {
  // The consistency that texture recovery relies on: photo pixels must be
  // reproducible from the scene file and the texture files alone.  The
  // lookup here is an independent per-pixel loop over the loaded images.
  SceneTemplate tpl = tiny_template();
  auto dir = temp_dir("retex_ds_consist");
  retex::generate_dataset(tpl, 2, 123, dir);
  auto info = retex::load_dataset(dir);
  std::vector<Image> textures;
  for (const auto& path : info.texture_paths)
    textures.push_back(retex::load_photo(path));
  for (std::size_t s = 0; s < info.n_scenes; ++s) {
    Image uvl = retex::load_uvl(info.scene_paths[s]);
    Image photo = retex::load_photo(info.photo_paths[s]);
    for (std::size_t y = 0; y < uvl.height; ++y)
      for (std::size_t x = 0; x < uvl.width; ++x) {
        std::size_t label = retex::decode_label(uvl.at(y, x, 2), info.label_count);
        const Image& tex = textures[label - 1];
        double u = uvl.at(y, x, 0), v = uvl.at(y, x, 1);
        std::size_t col = std::min(tex.width - 1,
                                   static_cast<std::size_t>(std::max(
                                       0.0, std::floor(u * tex.width))));
        std::size_t row = tex.height - 1 -
                          std::min(tex.height - 1,
                                   static_cast<std::size_t>(std::max(
                                       0.0, std::floor(v * tex.height))));
        for (std::size_t c = 0; c < 3; ++c)
          CHECK(photo.at(y, x, c) == tex.at(row, col, c));
      }
  }
}

TEST_CASE("dataset: shaded photos carry the stored shade map exactly") {
  SceneTemplate tpl = tiny_template();
  tpl.shading = true;
  auto dir = temp_dir("retex_ds_shaded");
  retex::generate_dataset(tpl, 1, 9, dir);
  auto info = retex::load_dataset(dir);
  REQUIRE(info.shading);
  REQUIRE(info.shading_paths.size() == 1);
  Image uvl = retex::load_uvl(info.scene_paths[0]);
  Image photo = retex::load_photo(info.photo_paths[0]);
  Image shade = retex::load_png(info.shading_paths[0]);
  REQUIRE(shade.channels == 1);
  std::vector<Image> textures;
  for (const auto& path : info.texture_paths)
    textures.push_back(retex::load_photo(path));
  bool saw_shadowed = false;
  for (std::size_t y = 0; y < uvl.height; ++y)
    for (std::size_t x = 0; x < uvl.width; ++x) {
      std::size_t label = retex::decode_label(uvl.at(y, x, 2), info.label_count);
      const Image& tex = textures[label - 1];
      std::size_t row, col;
      retex::nearest_texel(tex, uvl.at(y, x, 0), uvl.at(y, x, 1), &row, &col);
      if (shade.at(y, x, 0) < 0.99) saw_shadowed = true;
      for (std::size_t c = 0; c < 3; ++c) {
        // The stored photo is the 8-bit rounding of texture * shade.
        double expected = tex.at(row, col, c) * shade.at(y, x, 0);
        CHECK(std::abs(photo.at(y, x, c) - expected) <= 0.5 / 255.0 + 1e-12);
      }
    }
  CHECK(saw_shadowed);
}

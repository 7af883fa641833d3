#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "retex/blob_io.hpp"
#include "retex/config.hpp"

using retex::BlobError;
using retex::BlobReader;
using retex::BlobWriter;
using retex::Config;
using retex::ConfigError;

TEST_CASE("config: parses keys, comments and blank lines") {
  Config cfg = Config::parse(
      "# header comment\n"
      "width = 64\n"
      "  lr =1e-4  # inline comment\n"
      "\n"
      "name = flag scene\n"
      "shading = off\n"
      "weights = 1, 0.5,0.25\n");
  CHECK(cfg.get_int("width") == 64);
  CHECK(cfg.get_double("lr") == doctest::Approx(1e-4));
  CHECK(cfg.get_string("name") == "flag scene");
  CHECK(cfg.get_bool("shading") == false);
  auto w = cfg.get_doubles("weights");
  REQUIRE(w.size() == 3);
  CHECK(w[1] == 0.5);
  CHECK(cfg.get_int_or("missing", 7) == 7);
  CHECK(cfg.keys().size() == 5);
}

TEST_CASE("config: errors name the offending key or line") {
  CHECK_THROWS_AS(Config::parse("novalue\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("a = 1\na = 2\n"), ConfigError);
  Config cfg = Config::parse("x = hello\n");
  try {
    cfg.get_double("x");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("\"x\"") != std::string::npos);
  }
  CHECK_THROWS_AS(cfg.get_string("absent"), ConfigError);
  CHECK_THROWS_AS(cfg.get_bool("x"), ConfigError);
}

TEST_CASE("config: prefix listing and serialize round-trip") {
  Config cfg = Config::parse(
      "object1.mesh = cube\n"
      "object1.size = 0.4\n"
      "object2.mesh = quad\n"
      "camera.fov = 40\n");
  auto keys = cfg.keys_with_prefix("object1.");
  REQUIRE(keys.size() == 2);
  CHECK(keys[0] == "object1.mesh");

  Config again = Config::parse(cfg.serialize());
  CHECK(again.get_string("object2.mesh") == "quad");
  CHECK(again.keys().size() == 4);
}

TEST_CASE("blob: sections round-trip with types") {
  std::string path =
      (std::filesystem::temp_directory_path() / "retex_blob_test.bin").string();
  {
    BlobWriter w;
    w.add_string("meta/kind", "checkpoint");
    w.add_u64("meta/iteration", 12345);
    std::vector<double> d = {1.5, -2.25, 3.125};
    std::vector<float> f = {0.5f, 0.25f};
    w.add_array<double>("arr/d", d);
    w.add_array<float>("arr/f", f);
    w.add_string("arr/odd", "12345");
    w.write(path);
  }
  BlobReader r(path);
  CHECK(r.has("meta/kind"));
  CHECK(!r.has("meta/unknown"));
  CHECK(r.get_string("meta/kind") == "checkpoint");
  CHECK(r.get_u64("meta/iteration") == 12345);
  auto d = r.get_array<double>("arr/d");
  REQUIRE(d.size() == 3);
  CHECK(d[1] == -2.25);
  auto f = r.get_array<float>("arr/f");
  REQUIRE(f.size() == 2);
  CHECK(f[0] == 0.5f);
  CHECK_THROWS_AS(r.get_bytes("nope"), BlobError);
  CHECK_THROWS_AS(r.get_array<double>("arr/odd"), BlobError);
  std::remove(path.c_str());
}

TEST_CASE("blob: rejects corrupt and wrong-version files") {
  std::string path =
      (std::filesystem::temp_directory_path() / "retex_blob_bad.bin").string();
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("JUNKJUNKJUNK", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(BlobReader{path}, BlobError);
  {
    // Valid magic, unsupported version.
    std::FILE* f = std::fopen(path.c_str(), "wb");
    const char magic[4] = {'R', 'T', 'X', 'B'};
    std::uint32_t version = 999;
    std::fwrite(magic, 1, 4, f);
    std::fwrite(&version, 4, 1, f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(BlobReader{path}, BlobError);
  {
    // Truncated section header.
    BlobWriter w;
    w.add_u64("x", 1);
    w.write(path);
    std::filesystem::resize_file(path, 14);
  }
  CHECK_THROWS_AS(BlobReader{path}, BlobError);
  std::remove(path.c_str());

  BlobWriter w;
  w.add_u64("x", 1);
  CHECK_THROWS_AS(w.add_u64("x", 2), BlobError);
}

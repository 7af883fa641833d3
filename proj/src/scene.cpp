#include "retex/scene.hpp"

#include <stdexcept>
#include <string>

namespace retex {

double encode_label(std::size_t index, std::size_t label_count) {
  if (index < 1 || index > label_count)
    throw std::out_of_range("encode_label: index " + std::to_string(index) +
                            " outside 1.." + std::to_string(label_count));
  return static_cast<double>(index) / static_cast<double>(label_count);
}

std::size_t decode_label(double value, std::size_t label_count) {
  double scaled = value * static_cast<double>(label_count);
  long i = std::lround(scaled);
  if (i < 1) return 1;
  if (i > static_cast<long>(label_count)) return label_count;
  return static_cast<std::size_t>(i);
}

std::optional<std::size_t> decode_label_checked(double value,
                                                std::size_t label_count) {
  long i = std::lround(value * static_cast<double>(label_count));
  if (i < 1 || i > static_cast<long>(label_count)) return std::nullopt;
  return static_cast<std::size_t>(i);
}

AtlasRect cube_face_rect(std::size_t face) {
  if (face >= 6) throw std::out_of_range("cube_face_rect: face must be 0..5");
  double fx = static_cast<double>(face % 3);
  double fy = static_cast<double>(face / 3);
  const double margin = 0.01;
  return {fx / 3 + margin, fy / 2 + margin, (fx + 1) / 3 - margin,
          (fy + 1) / 2 - margin};
}

namespace {

void push_rect(Mesh& mesh, const Vertex& a, const Vertex& b, const Vertex& c,
               const Vertex& d) {
  // Two triangles, consistent winding a-b-c, a-c-d.
  mesh.triangles.push_back({a, b, c});
  mesh.triangles.push_back({a, c, d});
}

}  // namespace

Mesh make_quad_mesh(double size_x, double size_y, std::size_t grid) {
  if (grid < 1) throw std::invalid_argument("make_quad_mesh: grid must be >= 1");
  Mesh mesh;
  auto vertex = [&](std::size_t i, std::size_t j) {
    double u = static_cast<double>(i) / static_cast<double>(grid);
    double v = static_cast<double>(j) / static_cast<double>(grid);
    return Vertex{{(u - 0.5) * size_x, (v - 0.5) * size_y, 0}, u, v};
  };
  for (std::size_t j = 0; j < grid; ++j)
    for (std::size_t i = 0; i < grid; ++i)
      push_rect(mesh, vertex(i, j), vertex(i + 1, j), vertex(i + 1, j + 1),
                vertex(i, j + 1));
  return mesh;
}

Mesh make_cube_mesh(double size) {
  Mesh mesh;
  mesh.closed = true;
  double h = size / 2;
  // Corner selectors per face, ordered counter-clockwise seen from outside.
  struct Face {
    Vec3 corners[4];
  };
  const Face faces[6] = {
      // +x
      {{{h, -h, -h}, {h, h, -h}, {h, h, h}, {h, -h, h}}},
      // -x
      {{{-h, h, -h}, {-h, -h, -h}, {-h, -h, h}, {-h, h, h}}},
      // +y
      {{{h, h, -h}, {-h, h, -h}, {-h, h, h}, {h, h, h}}},
      // -y
      {{{-h, -h, -h}, {h, -h, -h}, {h, -h, h}, {-h, -h, h}}},
      // +z (top)
      {{{-h, -h, h}, {h, -h, h}, {h, h, h}, {-h, h, h}}},
      // -z (bottom)
      {{{-h, h, -h}, {h, h, -h}, {h, -h, -h}, {-h, -h, -h}}},
  };
  for (std::size_t f = 0; f < 6; ++f) {
    AtlasRect r = cube_face_rect(f);
    Vertex a{faces[f].corners[0], r.u0, r.v0};
    Vertex b{faces[f].corners[1], r.u1, r.v0};
    Vertex c{faces[f].corners[2], r.u1, r.v1};
    Vertex d{faces[f].corners[3], r.u0, r.v1};
    push_rect(mesh, a, b, c, d);
  }
  return mesh;
}

Mesh make_flag_mesh(std::size_t grid, double width, double height,
                    double amplitude, double waves, double phase) {
  if (grid < 1) throw std::invalid_argument("make_flag_mesh: grid must be >= 1");
  Mesh mesh;
  auto vertex = [&](std::size_t i, std::size_t j) {
    double u = static_cast<double>(i) / static_cast<double>(grid);
    double v = static_cast<double>(j) / static_cast<double>(grid);
    double x = (u - 0.5) * width;
    double z = v * height;
    double y = amplitude * std::sin(6.283185307179586 * waves * u + phase);
    return Vertex{{x, y, z}, u, v};
  };
  for (std::size_t j = 0; j < grid; ++j)
    for (std::size_t i = 0; i < grid; ++i)
      push_rect(mesh, vertex(i, j), vertex(i + 1, j), vertex(i + 1, j + 1),
                vertex(i, j + 1));
  return mesh;
}

Vec3 apply_placement(const Placement& p, Vec3 v) {
  double c = std::cos(p.yaw), s = std::sin(p.yaw);
  Vec3 r{c * v.x - s * v.y, s * v.x + c * v.y, v.z};
  return r + p.translate;
}

}  // namespace retex

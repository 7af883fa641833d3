#pragma once

// Scene geometry and the label channel codec.
//
// A rendered scene is an HxWx3 image holding (u, v, l) per pixel: texture
// coordinates of the visible surface plus a label channel identifying it.
// Surface i of L encodes as l = i/L; the screen-filling backdrop is always
// surface 1, objects use 2..L.

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

namespace retex {

// l = i/L for i in 1..L; throws std::out_of_range otherwise.
double encode_label(std::size_t index, std::size_t label_count);
// Nearest index, clamped into 1..L (never fails).
std::size_t decode_label(double value, std::size_t label_count);
// Like decode_label but refuses values whose nearest integer i = round(l*L)
// falls outside 1..L (e.g. an all-black pixel that encodes no surface).
std::optional<std::size_t> decode_label_checked(double value, std::size_t label_count);

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double length(Vec3 a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalize(Vec3 a) {
  double l = length(a);
  return {a.x / l, a.y / l, a.z / l};
}

struct Vertex {
  Vec3 position;
  double u = 0, v = 0;
};

struct Triangle {
  Vertex a, b, c;
};

struct Mesh {
  std::vector<Triangle> triangles;
  bool closed = false;  // closed surfaces get backface culling
};

// Rectangle in the [0,1]^2 atlas assigned to one cube face (3 columns x 2
// rows, face order +x -x +y -y +z -z).  Face interiors are inset by a small
// margin so texels never straddle two faces.
struct AtlasRect {
  double u0, v0, u1, v1;
};
AtlasRect cube_face_rect(std::size_t face);

// Axis-aligned rectangle in the XY plane, z = 0, UV identity (u along +x,
// v along +y), double sided.  The sheet is tessellated into grid x grid
// cells: the painter sort orders whole triangles by centroid depth, so large
// surfaces must be subdivided for locally correct occlusion.
Mesh make_quad_mesh(double size_x, double size_y, std::size_t grid = 8);

// Cube spanning [-s/2, s/2]^3 with each face textured from its atlas
// rectangle; closed, so back faces are culled.
Mesh make_cube_mesh(double size);

// Vertical flag in the XZ plane: x in [-w/2, w/2], z in [0, h], displaced
// along y by amplitude * sin(2*pi*waves*u + phase).  UV identity over the
// sheet, double sided.
Mesh make_flag_mesh(std::size_t grid, double width, double height,
                    double amplitude, double waves, double phase);

// Yaw (about +z) then translation.
struct Placement {
  Vec3 translate;
  double yaw = 0;
};

Vec3 apply_placement(const Placement& p, Vec3 v);

struct Camera {
  Vec3 position;
  Vec3 target;
  Vec3 up = {0, 0, 1};
  double fov_y_deg = 45;
};

struct SceneObject {
  std::size_t label = 0;  // 2..L; the backdrop owns label 1
  Mesh mesh;
  Placement placement;
};

}  // namespace retex

#include "retex/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace retex {

namespace {

constexpr double kNearPlane = 0.05;

struct CameraBasis {
  Vec3 position, right, up, forward;
  double focal, cx, cy;
};

CameraBasis camera_basis(const Camera& camera, std::size_t width,
                         std::size_t height) {
  CameraBasis b;
  b.position = camera.position;
  b.forward = normalize(camera.target - camera.position);
  Vec3 right = cross(b.forward, camera.up);
  if (length(right) < 1e-9)
    throw std::invalid_argument("camera: view direction is parallel to up");
  b.right = normalize(right);
  b.up = cross(b.right, b.forward);
  b.focal = (static_cast<double>(height) / 2) /
            std::tan(camera.fov_y_deg * 3.14159265358979323846 / 360.0);
  b.cx = static_cast<double>(width) / 2;
  b.cy = static_cast<double>(height) / 2;
  return b;
}

struct ScreenVertex {
  double sx, sy;       // pixel coordinates
  double inv_z;        // 1 / view depth
  double u_z, v_z;     // u / z, v / z for perspective-correct interpolation
};

struct PreparedTriangle {
  ScreenVertex v[3];
  double label_value;
  double shade;
  double depth;  // view-space centroid depth, for the painter sort
};

double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

}  // namespace

RenderResult render_scene(const Camera& camera,
                          const std::vector<SceneObject>& objects,
                          std::size_t label_count, std::size_t width,
                          std::size_t height, const ShadingParams* shading) {
  if (width == 0 || height == 0)
    throw std::invalid_argument("render_scene: empty viewport");
  CameraBasis basis = camera_basis(camera, width, height);
  Vec3 light = shading ? normalize(shading->light_dir) : Vec3{0, 0, 1};
  double ambient = shading ? shading->ambient : 1.0;

  RenderResult result;
  result.uvl = make_image(width, height, 3);
  if (shading) result.shading = make_image(width, height, 1, 1.0);

  // Backdrop: surface 1, screen-space UV.
  double backdrop_label = encode_label(1, label_count);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      result.uvl.at(y, x, 0) = (x + 0.5) / static_cast<double>(width);
      result.uvl.at(y, x, 1) = (y + 0.5) / static_cast<double>(height);
      result.uvl.at(y, x, 2) = backdrop_label;
    }

  std::vector<PreparedTriangle> prepared;
  for (const SceneObject& object : objects) {
    if (object.label < 2 || object.label > label_count)
      throw std::invalid_argument("render_scene: object label " +
                                  std::to_string(object.label) +
                                  " outside 2.." + std::to_string(label_count));
    double label_value = encode_label(object.label, label_count);
    for (const Triangle& tri : object.mesh.triangles) {
      Vec3 world[3] = {apply_placement(object.placement, tri.a.position),
                       apply_placement(object.placement, tri.b.position),
                       apply_placement(object.placement, tri.c.position)};
      const Vertex* verts[3] = {&tri.a, &tri.b, &tri.c};

      PreparedTriangle pt;
      pt.label_value = label_value;
      bool in_front = true;
      double depth_sum = 0;
      for (int i = 0; i < 3; ++i) {
        Vec3 rel = world[i] - basis.position;
        double vz = dot(rel, basis.forward);
        if (vz < kNearPlane) {
          in_front = false;
          break;
        }
        double vx = dot(rel, basis.right);
        double vy = dot(rel, basis.up);
        pt.v[i].sx = basis.cx + basis.focal * vx / vz;
        pt.v[i].sy = basis.cy - basis.focal * vy / vz;
        pt.v[i].inv_z = 1.0 / vz;
        pt.v[i].u_z = verts[i]->u / vz;
        pt.v[i].v_z = verts[i]->v / vz;
        depth_sum += vz;
      }
      if (!in_front) continue;
      pt.depth = depth_sum / 3;

      double area2 = edge(pt.v[0].sx, pt.v[0].sy, pt.v[1].sx, pt.v[1].sy,
                          pt.v[2].sx, pt.v[2].sy);
      if (area2 == 0) continue;
      // Outward-wound faces project clockwise (negative area) on the y-down
      // screen; for closed meshes everything else is a back face.
      if (object.mesh.closed && area2 >= 0) continue;

      if (shading) {
        Vec3 normal = normalize(cross(world[1] - world[0], world[2] - world[0]));
        Vec3 centroid = (world[0] + world[1] + world[2]) * (1.0 / 3.0);
        if (!object.mesh.closed &&
            dot(normal, basis.position - centroid) < 0)
          normal = normal * -1.0;  // double-sided surfaces face the camera
        double lambert = std::max(0.0, dot(normal, light));
        pt.shade = ambient + (1 - ambient) * lambert;
      } else {
        pt.shade = 1.0;
      }
      prepared.push_back(pt);
    }
  }

  // Painter's algorithm: far triangles first, stable for deterministic ties.
  std::stable_sort(prepared.begin(), prepared.end(),
                   [](const PreparedTriangle& a, const PreparedTriangle& b) {
                     return a.depth > b.depth;
                   });

  for (const PreparedTriangle& pt : prepared) {
    double area2 = edge(pt.v[0].sx, pt.v[0].sy, pt.v[1].sx, pt.v[1].sy,
                        pt.v[2].sx, pt.v[2].sy);
    double min_x = std::min({pt.v[0].sx, pt.v[1].sx, pt.v[2].sx});
    double max_x = std::max({pt.v[0].sx, pt.v[1].sx, pt.v[2].sx});
    double min_y = std::min({pt.v[0].sy, pt.v[1].sy, pt.v[2].sy});
    double max_y = std::max({pt.v[0].sy, pt.v[1].sy, pt.v[2].sy});
    std::size_t x0 = static_cast<std::size_t>(
        std::clamp(std::floor(min_x - 0.5), 0.0, static_cast<double>(width - 1)));
    std::size_t x1 = static_cast<std::size_t>(
        std::clamp(std::ceil(max_x + 0.5), 0.0, static_cast<double>(width - 1)));
    std::size_t y0 = static_cast<std::size_t>(
        std::clamp(std::floor(min_y - 0.5), 0.0, static_cast<double>(height - 1)));
    std::size_t y1 = static_cast<std::size_t>(
        std::clamp(std::ceil(max_y + 0.5), 0.0, static_cast<double>(height - 1)));

    double sign = area2 > 0 ? 1.0 : -1.0;
    for (std::size_t py = y0; py <= y1; ++py) {
      double cy = py + 0.5;
      for (std::size_t px = x0; px <= x1; ++px) {
        double cx = px + 0.5;
        double e0 = edge(pt.v[1].sx, pt.v[1].sy, pt.v[2].sx, pt.v[2].sy, cx, cy);
        double e1 = edge(pt.v[2].sx, pt.v[2].sy, pt.v[0].sx, pt.v[0].sy, cx, cy);
        double e2 = edge(pt.v[0].sx, pt.v[0].sy, pt.v[1].sx, pt.v[1].sy, cx, cy);
        if (e0 * sign < 0 || e1 * sign < 0 || e2 * sign < 0) continue;
        double w0 = e0 / area2, w1 = e1 / area2, w2 = e2 / area2;
        double inv_z = w0 * pt.v[0].inv_z + w1 * pt.v[1].inv_z + w2 * pt.v[2].inv_z;
        double u = (w0 * pt.v[0].u_z + w1 * pt.v[1].u_z + w2 * pt.v[2].u_z) / inv_z;
        double v = (w0 * pt.v[0].v_z + w1 * pt.v[1].v_z + w2 * pt.v[2].v_z) / inv_z;
        result.uvl.at(py, px, 0) = u;
        result.uvl.at(py, px, 1) = v;
        result.uvl.at(py, px, 2) = pt.label_value;
        if (shading) result.shading.at(py, px, 0) = pt.shade;
      }
    }
  }
  return result;
}

}  // namespace retex

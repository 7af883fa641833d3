#pragma once

// Software renderer producing (u, v, label) scene images.
//
// Perspective pinhole camera, edge-function triangle rasterization sampled at
// pixel centers, perspective-correct UV interpolation, painter's algorithm
// (triangles sorted back to front by view-space centroid depth).  Closed
// meshes are backface culled; open meshes are drawn double sided.  Triangles
// with any vertex closer than the near plane are skipped, so scenes must
// keep geometry in front of the camera.
//
// Centroid ordering resolves every pair of non-touching surfaces; where two
// surfaces meet (an object resting on the table) the ordering is ambiguous
// within roughly a triangle's footprint, so large sheets are tessellated
// (make_quad_mesh) to keep that band at pixel scale.  Scene and photo are
// produced from the same pass either way, so the pair stays consistent.

#include <vector>

#include "retex/image.hpp"
#include "retex/scene.hpp"

namespace retex {

struct ShadingParams {
  Vec3 light_dir = {0, 0, 1};  // direction toward the light
  double ambient = 0.35;
};

struct RenderResult {
  Image uvl;      // HxWx3, channels (u, v, label value)
  Image shading;  // HxWx1 flat Lambert term, empty when disabled
};

// The backdrop fills every pixel as surface 1 with u = (x+0.5)/W and
// v = (y+0.5)/H before any object is drawn.  Objects carry labels 2..L.
RenderResult render_scene(const Camera& camera,
                          const std::vector<SceneObject>& objects,
                          std::size_t label_count, std::size_t width,
                          std::size_t height, const ShadingParams* shading);

}  // namespace retex

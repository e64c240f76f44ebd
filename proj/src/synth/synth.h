#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "geometry/geometry.h"
#include "image/image.h"
#include "scene/scene_io.h"

namespace nvs {

struct Material {
  Vec3 albedo{0.8, 0.8, 0.8};
  double spec_strength = 0;  // Blinn-Phong highlight; 0 keeps shading Lambertian
  double spec_exponent = 32;
};

struct SpherePrim {
  Vec3 center;
  double radius = 1;
  Material mat;
};

struct BoxPrim {
  Vec3 lo, hi;  // axis-aligned corners, lo < hi componentwise
  Material mat;
};

enum class RigMode { kHemisphere, kForwardArc };

struct RigSpec {
  RigMode mode = RigMode::kHemisphere;
  int count = 32;
  double radius_min = 3, radius_max = 4;  // must exceed the object radius
  Vec3 target{0, 0, 0};
};

struct SceneSpec {
  std::string name = "scene";
  uint64_t seed = 0;
  std::vector<SpherePrim> spheres;
  std::vector<BoxPrim> boxes;
  // Ground is a finite horizontal disk so camera-to-geometry distances stay
  // bounded and near/far in the manifest can be tight.
  bool ground = false;
  double ground_y = 0;
  double ground_radius = 0;
  Material ground_mat;
  Vec3 light_dir{0.3, 1.0, 0.2};  // toward the light
  double ambient = 0.2, diffuse = 0.8;
  Vec3 background{0.05, 0.05, 0.08};
  RigSpec rig;
  int width = 64, height = 64;
  double fov_deg = 50;
  int supersample = 1;  // samples per pixel axis (1 or 2)
};

struct TraceHit {
  bool ok = false;
  double t = 0;
  Vec3 point, normal;
  Material mat;
};

// Nearest-hit intersection against every primitive. Exposed for tests.
TraceHit intersect_nearest(const Ray& ray, const SceneSpec& spec);

// Shaded color for one ray, clamped to [0,1]; background on miss.
Vec3 trace_reference(const Ray& ray, const SceneSpec& spec);

// Bounding radius of spheres and boxes around the rig target (ground
// excluded; it is a backdrop, not something cameras must stay outside of).
double object_radius(const SceneSpec& spec);

// Min and max Euclidean distance from a point to any primitive surface.
struct DistanceBounds {
  double lo = 0, hi = 0;
};
DistanceBounds distance_bounds(const SceneSpec& spec, const Vec3& p);

// Camera poses for the rig, keyed off spec.seed; entry i is independent of
// the total count.
std::vector<Camera> rig_cameras(const SceneSpec& spec);

Image render_reference_view(const SceneSpec& spec, const Camera& cam);

// Renders every rig view, fills near/far from distance bounds with a 10%
// margin, writes scene.json plus PNGs under out_dir, and returns the scene.
Scene generate_scene(const SceneSpec& spec, const std::string& out_dir);

// Procedural desk-scale scene: a few spheres and boxes on a ground disk.
// `specular` adds a strong highlight on the central sphere.
SceneSpec random_scene_spec(const std::string& name, uint64_t seed, RigMode mode,
                            bool specular, int n_views, int image_size);

}  // namespace nvs

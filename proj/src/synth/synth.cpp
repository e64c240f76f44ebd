#include "synth/synth.h"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "core/error.h"
#include "core/parallel.h"
#include "core/rng.h"

namespace nvs {

namespace {

constexpr double kHitEps = 1e-9;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

bool hit_sphere(const Ray& ray, const SpherePrim& s, TraceHit* out) {
  const Vec3 oc = ray.origin - s.center;
  const double b = dot(oc, ray.dir);
  const double c = dot(oc, oc) - s.radius * s.radius;
  const double disc = b * b - c;
  if (disc < 0) return false;
  const double sq = std::sqrt(disc);
  double t = -b - sq;
  if (t <= kHitEps) t = -b + sq;
  if (t <= kHitEps) return false;
  out->ok = true;
  out->t = t;
  out->point = point_at(ray, t);
  out->normal = (out->point - s.center) * (1.0 / s.radius);
  out->mat = s.mat;
  return true;
}

bool hit_box(const Ray& ray, const BoxPrim& box, TraceHit* out) {
  double t_near = -1e300, t_far = 1e300;
  int near_axis = 0;
  double near_sign = 1;
  const double o[3] = {ray.origin.x, ray.origin.y, ray.origin.z};
  const double d[3] = {ray.dir.x, ray.dir.y, ray.dir.z};
  const double lo[3] = {box.lo.x, box.lo.y, box.lo.z};
  const double hi[3] = {box.hi.x, box.hi.y, box.hi.z};
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < lo[a] || o[a] > hi[a]) return false;
      continue;
    }
    const double inv = 1.0 / d[a];
    double t0 = (lo[a] - o[a]) * inv;
    double t1 = (hi[a] - o[a]) * inv;
    double sign = -1;  // entering through the lo face
    if (t0 > t1) {
      std::swap(t0, t1);
      sign = 1;
    }
    if (t0 > t_near) {
      t_near = t0;
      near_axis = a;
      near_sign = sign;
    }
    t_far = std::min(t_far, t1);
  }
  if (t_near > t_far || t_far <= kHitEps) return false;
  const bool inside = t_near <= kHitEps;
  const double t = inside ? t_far : t_near;
  out->ok = true;
  out->t = t;
  out->point = point_at(ray, t);
  Vec3 n{0, 0, 0};
  if (inside) {
    // Exit face; normal opposes the ray so shading still sees the surface.
    const Vec3 c = (box.lo + box.hi) * 0.5;
    const Vec3 rel = out->point - c;
    const Vec3 ext = (box.hi - box.lo) * 0.5;
    const double rx = std::abs(rel.x) / ext.x, ry = std::abs(rel.y) / ext.y,
                 rz = std::abs(rel.z) / ext.z;
    if (rx >= ry && rx >= rz)
      n = {rel.x > 0 ? -1.0 : 1.0, 0, 0};
    else if (ry >= rz)
      n = {0, rel.y > 0 ? -1.0 : 1.0, 0};
    else
      n = {0, 0, rel.z > 0 ? -1.0 : 1.0};
  } else {
    // near_sign is -1 entering through the lo face, +1 through the hi face,
    // which is exactly the outward normal component.
    if (near_axis == 0)
      n = {near_sign, 0, 0};
    else if (near_axis == 1)
      n = {0, near_sign, 0};
    else
      n = {0, 0, near_sign};
  }
  out->normal = n;
  out->mat = box.mat;
  return true;
}

bool hit_ground(const Ray& ray, const SceneSpec& spec, TraceHit* out) {
  if (!spec.ground || std::abs(ray.dir.y) < 1e-15) return false;
  const double t = (spec.ground_y - ray.origin.y) / ray.dir.y;
  if (t <= kHitEps) return false;
  const Vec3 p = point_at(ray, t);
  const double dx = p.x - spec.rig.target.x;
  const double dz = p.z - spec.rig.target.z;
  if (dx * dx + dz * dz > spec.ground_radius * spec.ground_radius) return false;
  out->ok = true;
  out->t = t;
  out->point = p;
  out->normal = {0, ray.origin.y >= spec.ground_y ? 1.0 : -1.0, 0};
  out->mat = spec.ground_mat;
  return true;
}

}  // namespace

TraceHit intersect_nearest(const Ray& ray, const SceneSpec& spec) {
  TraceHit best;
  best.t = 1e300;
  TraceHit h;
  for (const SpherePrim& s : spec.spheres)
    if (hit_sphere(ray, s, &h) && h.t < best.t) best = h;
  for (const BoxPrim& b : spec.boxes)
    if (hit_box(ray, b, &h) && h.t < best.t) best = h;
  if (hit_ground(ray, spec, &h) && h.t < best.t) best = h;
  return best;
}

Vec3 trace_reference(const Ray& ray, const SceneSpec& spec) {
  const TraceHit hit = intersect_nearest(ray, spec);
  if (!hit.ok)
    return {clamp01(spec.background.x), clamp01(spec.background.y),
            clamp01(spec.background.z)};
  const Vec3 l = normalized(spec.light_dir);
  const double lambert = std::max(0.0, dot(hit.normal, l));
  const double shade = spec.ambient + spec.diffuse * lambert;
  Vec3 color = hit.mat.albedo * shade;
  if (hit.mat.spec_strength > 0) {
    const Vec3 v = -ray.dir;
    const Vec3 h = norm(l + v) > 1e-12 ? normalized(l + v) : Vec3{0, 0, 0};
    const double glint =
        hit.mat.spec_strength * std::pow(std::max(0.0, dot(hit.normal, h)),
                                         hit.mat.spec_exponent);
    color = color + Vec3{glint, glint, glint};
  }
  return {clamp01(color.x), clamp01(color.y), clamp01(color.z)};
}

double object_radius(const SceneSpec& spec) {
  double r = 0;
  const Vec3 c = spec.rig.target;
  for (const SpherePrim& s : spec.spheres)
    r = std::max(r, norm(s.center - c) + s.radius);
  for (const BoxPrim& b : spec.boxes)
    for (int k = 0; k < 8; ++k) {
      const Vec3 corner{k & 1 ? b.hi.x : b.lo.x, k & 2 ? b.hi.y : b.lo.y,
                        k & 4 ? b.hi.z : b.lo.z};
      r = std::max(r, norm(corner - c));
    }
  return r;
}

DistanceBounds distance_bounds(const SceneSpec& spec, const Vec3& p) {
  DistanceBounds out{1e300, 0};
  for (const SpherePrim& s : spec.spheres) {
    const double d = norm(p - s.center);
    out.lo = std::min(out.lo, std::max(0.0, d - s.radius));
    out.hi = std::max(out.hi, d + s.radius);
  }
  for (const BoxPrim& b : spec.boxes) {
    const Vec3 q{std::clamp(p.x, b.lo.x, b.hi.x), std::clamp(p.y, b.lo.y, b.hi.y),
                 std::clamp(p.z, b.lo.z, b.hi.z)};
    out.lo = std::min(out.lo, norm(p - q));
    for (int k = 0; k < 8; ++k) {
      const Vec3 corner{k & 1 ? b.hi.x : b.lo.x, k & 2 ? b.hi.y : b.lo.y,
                        k & 4 ? b.hi.z : b.lo.z};
      out.hi = std::max(out.hi, norm(corner - p));
    }
  }
  if (spec.ground) {
    const double dy = p.y - spec.ground_y;
    const double dx = p.x - spec.rig.target.x;
    const double dz = p.z - spec.rig.target.z;
    const double rho = std::sqrt(dx * dx + dz * dz);
    const double out_of_disk = std::max(0.0, rho - spec.ground_radius);
    out.lo = std::min(out.lo, std::sqrt(out_of_disk * out_of_disk + dy * dy));
    const double reach = rho + spec.ground_radius;
    out.hi = std::max(out.hi, std::sqrt(reach * reach + dy * dy));
  }
  return out;
}

std::vector<Camera> rig_cameras(const SceneSpec& spec) {
  std::vector<Camera> cams;
  cams.reserve(spec.rig.count);
  const double fov = spec.fov_deg * M_PI / 180.0;
  const double focal = 0.5 * std::min(spec.width, spec.height) / std::tan(0.5 * fov);
  for (int i = 0; i < spec.rig.count; ++i) {
    Rng rng = keyed_rng(spec.seed, 0x726967ULL, static_cast<uint64_t>(i));
    const double r = rng.uniform(spec.rig.radius_min, spec.rig.radius_max);
    double azim, elev;
    if (spec.rig.mode == RigMode::kHemisphere) {
      azim = rng.uniform(0, 2 * M_PI);
      elev = rng.uniform(0.15, 1.25);
    } else {
      azim = rng.uniform(-0.7, 0.7);
      elev = rng.uniform(0.25, 0.55);
    }
    const Vec3 dir{std::cos(elev) * std::sin(azim), std::sin(elev),
                   std::cos(elev) * std::cos(azim)};
    const Vec3 eye = spec.rig.target + dir * r;
    Camera cam;
    cam.width = spec.width;
    cam.height = spec.height;
    cam.K = {focal, focal, 0.5 * spec.width, 0.5 * spec.height};
    cam.R = look_at_rotation(eye, spec.rig.target, {0, 1, 0});
    cam.t = apply(cam.R, -eye);
    cams.push_back(cam);
  }
  return cams;
}

Image render_reference_view(const SceneSpec& spec, const Camera& cam) {
  Image img = Image::filled(cam.width, cam.height, 0, 0, 0);
  const int ss = spec.supersample > 1 ? spec.supersample : 1;
  const double inv_ss = 1.0 / (ss * ss);
  par::parallel_chunks(cam.height, 8, [&](int64_t y0, int64_t y1) {
    for (int64_t y = y0; y < y1; ++y)
      for (int x = 0; x < cam.width; ++x) {
        Vec3 acc{0, 0, 0};
        for (int sy = 0; sy < ss; ++sy)
          for (int sx = 0; sx < ss; ++sx) {
            const double u = x + (sx + 0.5) / ss;
            const double v = y + (sy + 0.5) / ss;
            acc = acc + trace_reference(ray_for_pixel(cam, u, v), spec);
          }
        float* px = img.pixel(x, static_cast<int>(y));
        px[0] = static_cast<float>(acc.x * inv_ss);
        px[1] = static_cast<float>(acc.y * inv_ss);
        px[2] = static_cast<float>(acc.z * inv_ss);
      }
  });
  return img;
}

namespace {

void validate_spec(const SceneSpec& spec) {
  const size_t prims =
      spec.spheres.size() + spec.boxes.size() + (spec.ground ? 1 : 0);
  if (prims == 0) throw ContractError("scene spec: needs at least one primitive");
  if (spec.rig.count < 2)
    throw ContractError("scene spec: camera count must be >= 2, got " +
                        std::to_string(spec.rig.count));
  if (spec.width < 16 || spec.height < 16)
    throw ContractError("scene spec: image size must be >= 16, got " +
                        std::to_string(spec.width) + "x" + std::to_string(spec.height));
  if (!(spec.rig.radius_min > 0) || spec.rig.radius_max < spec.rig.radius_min)
    throw ContractError("scene spec: bad rig radius range");
  const double obj_r = object_radius(spec);
  if (spec.rig.radius_min <= obj_r)
    throw ContractError("scene spec: rig radius " + std::to_string(spec.rig.radius_min) +
                        " must exceed object radius " + std::to_string(obj_r));
  if (spec.ground && !(spec.ground_radius > 0))
    throw ContractError("scene spec: ground enabled but ground_radius is not positive");
}

}  // namespace

Scene generate_scene(const SceneSpec& spec, const std::string& out_dir) {
  validate_spec(spec);
  Scene scene;
  scene.name = spec.name;
  std::vector<Camera> cams = rig_cameras(spec);

  double lo = 1e300, hi = 0;
  for (const Camera& cam : cams) {
    const DistanceBounds b = distance_bounds(spec, camera_center(cam));
    lo = std::min(lo, b.lo);
    hi = std::max(hi, b.hi);
  }
  scene.near = 0.9 * lo;
  scene.far = 1.1 * hi;
  if (!(scene.near > 0))
    throw ContractError("scene spec: a camera touches the geometry, near bound is 0");

  scene.views.reserve(cams.size());
  for (size_t i = 0; i < cams.size(); ++i) {
    View view;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "view_%03zu.png", i);
    view.image_name = buf;
    view.camera = cams[i];
    view.camera.near = scene.near;
    view.camera.far = scene.far;
    view.image = render_reference_view(spec, view.camera);
    scene.views.push_back(std::move(view));
  }
  save_scene(out_dir, scene);
  return scene;
}

SceneSpec random_scene_spec(const std::string& name, uint64_t seed, RigMode mode,
                            bool specular, int n_views, int image_size) {
  SceneSpec spec;
  spec.name = name;
  spec.seed = seed;
  spec.width = spec.height = image_size;
  spec.rig.mode = mode;
  spec.rig.count = n_views;

  Rng rng = keyed_rng(seed, 0x7363656eULL, 1);
  const int n_spheres = 2 + static_cast<int>(rng.uniform_int(3));
  for (int i = 0; i < n_spheres; ++i) {
    SpherePrim s;
    const double ang = rng.uniform(0, 2 * M_PI);
    const double rad = rng.uniform(0.0, 0.55);
    s.radius = rng.uniform(0.18, 0.42);
    s.center = {rad * std::cos(ang), s.radius + rng.uniform(0.0, 0.5),
                rad * std::sin(ang)};
    s.mat.albedo = {rng.uniform(0.2, 0.95), rng.uniform(0.2, 0.95),
                    rng.uniform(0.2, 0.95)};
    spec.spheres.push_back(s);
  }
  const int n_boxes = 1 + static_cast<int>(rng.uniform_int(2));
  for (int i = 0; i < n_boxes; ++i) {
    BoxPrim b;
    const Vec3 c{rng.uniform(-0.55, 0.55), 0, rng.uniform(-0.55, 0.55)};
    const Vec3 ext{rng.uniform(0.1, 0.3), rng.uniform(0.1, 0.35),
                   rng.uniform(0.1, 0.3)};
    b.lo = {c.x - ext.x, 0.0, c.z - ext.z};
    b.hi = {c.x + ext.x, 2 * ext.y, c.z + ext.z};
    b.mat.albedo = {rng.uniform(0.2, 0.95), rng.uniform(0.2, 0.95),
                    rng.uniform(0.2, 0.95)};
    spec.boxes.push_back(b);
  }
  if (specular && !spec.spheres.empty()) {
    spec.spheres[0].center = {0, 0.45, 0};
    spec.spheres[0].radius = 0.45;
    spec.spheres[0].mat.spec_strength = 0.9;
    spec.spheres[0].mat.spec_exponent = 24;
  }
  spec.ground = true;
  spec.ground_y = 0;
  spec.ground_mat.albedo = {0.45, 0.45, 0.4};
  spec.light_dir = {rng.uniform(-0.5, 0.5), 1.0, rng.uniform(-0.5, 0.5)};

  spec.rig.target = {0, 0.3, 0};
  const double obj_r = object_radius(spec);
  spec.ground_radius = 1.6 * obj_r;
  spec.rig.radius_min = std::max(2.2 * obj_r, obj_r + 1.0);
  spec.rig.radius_max = spec.rig.radius_min * 1.3;
  return spec;
}

}  // namespace nvs

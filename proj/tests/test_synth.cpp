#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "core/error.h"
#include "core/parallel.h"
#include "scene/scene_io.h"
#include "synth/synth.h"

using namespace nvs;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("nvs_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

struct WorkerGuard {
  int saved;
  explicit WorkerGuard(int n) : saved(par::max_workers()) { par::set_max_workers(n); }
  ~WorkerGuard() { par::set_max_workers(saved); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(static_cast<bool>(in));
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

SceneSpec one_sphere_spec() {
  SceneSpec spec;
  spec.spheres.push_back({{0, 0, 0}, 1.0, {{1, 0, 0}, 0, 32}});
  spec.light_dir = {0, 0, 1};
  spec.ambient = 0.2;
  spec.diffuse = 0.8;
  spec.background = {0.1, 0.2, 0.3};
  return spec;
}

bool close3(const Vec3& a, const Vec3& b, double tol) {
  return std::abs(a.x - b.x) <= tol && std::abs(a.y - b.y) <= tol &&
         std::abs(a.z - b.z) <= tol;
}

}  // namespace

TEST_CASE("ray missing everything returns the background") {
  SceneSpec spec = one_sphere_spec();
  const Vec3 c = trace_reference({{0, 5, 0}, {0, 1, 0}}, spec);
  CHECK(close3(c, spec.background, 0.0));
}

TEST_CASE("head-on sphere hit matches the shading formula by hand") {
  SceneSpec spec = one_sphere_spec();
  const Ray ray{{0, 0, 3}, {0, 0, -1}};
  // n = l = (0,0,1): albedo * (0.2 + 0.8) = full albedo.
  CHECK(close3(trace_reference(ray, spec), {1, 0, 0}, 0.0));

  spec.spheres[0].mat.albedo = {0.5, 0.25, 1.0};
  spec.diffuse = 0.5;
  CHECK(close3(trace_reference(ray, spec), {0.35, 0.175, 0.7}, 1e-15));

  spec.ambient = 0.5;
  spec.diffuse = 0.8;  // 1.3, clamps
  spec.spheres[0].mat.albedo = {1, 1, 1};
  CHECK(close3(trace_reference(ray, spec), {1, 1, 1}, 0.0));
}

TEST_CASE("grazing shading clamps the lambert term at zero") {
  SceneSpec spec = one_sphere_spec();
  spec.light_dir = {0, 0, -1};  // light behind the visible hemisphere
  const Vec3 c = trace_reference({{0, 0, 3}, {0, 0, -1}}, spec);
  CHECK(close3(c, {0.2, 0, 0}, 1e-15));  // ambient only
}

TEST_CASE("nearest of two occluding spheres wins") {
  SceneSpec spec = one_sphere_spec();
  spec.spheres[0].mat.albedo = {0, 1, 0};                     // front, at origin
  spec.spheres.push_back({{0, 0, -4}, 1.0, {{1, 0, 0}, 0, 32}});  // behind
  const Vec3 c = trace_reference({{0, 0, 3}, {0, 0, -1}}, spec);
  CHECK(c.y > 0.5);
  CHECK(c.x == 0.0);
}

TEST_CASE("box face hit has the right normal and shade") {
  SceneSpec spec;
  spec.boxes.push_back({{-1, -1, -1}, {1, 1, 1}, {{0.5, 0.5, 0.5}, 0, 32}});
  spec.light_dir = {1, 0, 0};
  const Ray ray{{5, 0.2, 0.3}, {-1, 0, 0}};
  const TraceHit hit = intersect_nearest(ray, spec);
  REQUIRE(hit.ok);
  CHECK(hit.t == doctest::Approx(4.0));
  CHECK(close3(hit.normal, {1, 0, 0}, 0.0));
  CHECK(close3(trace_reference(ray, spec), {0.5, 0.5, 0.5}, 1e-15));

  // Same box lit from +y: the +x face gets ambient only.
  spec.light_dir = {0, 1, 0};
  CHECK(close3(trace_reference(ray, spec), {0.1, 0.1, 0.1}, 1e-15));
}

TEST_CASE("ground disk is hit from above and misses beyond its radius") {
  SceneSpec spec;
  spec.ground = true;
  spec.ground_y = 0;
  spec.ground_radius = 2;
  spec.ground_mat.albedo = {0.4, 0.5, 0.6};
  spec.light_dir = {0, 1, 0};
  spec.background = {0, 0, 0};
  const Vec3 on = trace_reference({{0.5, 3, 0.5}, {0, -1, 0}}, spec);
  CHECK(close3(on, {0.4, 0.5, 0.6}, 1e-15));  // n == l, full shade
  const Vec3 off = trace_reference({{5, 3, 5}, {0, -1, 0}}, spec);
  CHECK(close3(off, spec.background, 0.0));
}

TEST_CASE("blinn-phong highlight adds to all channels") {
  SceneSpec spec = one_sphere_spec();
  spec.spheres[0].mat.albedo = {0.2, 0.2, 0.2};
  spec.spheres[0].mat.spec_strength = 0.3;
  spec.spheres[0].mat.spec_exponent = 16;
  // n = l = v = h = (0,0,1): glint is exactly the strength.
  const Vec3 c = trace_reference({{0, 0, 3}, {0, 0, -1}}, spec);
  CHECK(close3(c, {0.5, 0.5, 0.5}, 1e-15));
}

TEST_CASE("distance bounds match hand values") {
  SceneSpec spec;
  spec.spheres.push_back({{0, 0, 0}, 1.0, {}});
  DistanceBounds b = distance_bounds(spec, {3, 0, 0});
  CHECK(b.lo == doctest::Approx(2.0));
  CHECK(b.hi == doctest::Approx(4.0));

  SceneSpec box_spec;
  box_spec.boxes.push_back({{-1, -1, -1}, {1, 1, 1}, {}});
  b = distance_bounds(box_spec, {3, 0, 0});
  CHECK(b.lo == doctest::Approx(2.0));
  CHECK(b.hi == doctest::Approx(std::sqrt(18.0)));

  SceneSpec g;
  g.ground = true;
  g.ground_y = 0;
  g.ground_radius = 2;
  b = distance_bounds(g, {0, 3, 0});
  CHECK(b.lo == doctest::Approx(3.0));
  CHECK(b.hi == doctest::Approx(std::sqrt(13.0)));

  CHECK(object_radius(spec) == doctest::Approx(1.0));
  CHECK(object_radius(box_spec) == doctest::Approx(std::sqrt(3.0)));
}

TEST_CASE("lambertian point shades identically from two viewpoints") {
  SceneSpec spec = one_sphere_spec();
  spec.spheres[0].mat.albedo = {0.3, 0.7, 0.5};
  spec.light_dir = {0.4, 1.0, -0.2};
  spec.width = spec.height = 64;

  auto camera_at = [&](double azim) {
    const double elev = 0.9, r = 3.0;
    const Vec3 eye{r * std::cos(elev) * std::sin(azim), r * std::sin(elev),
                   r * std::cos(elev) * std::cos(azim)};
    Camera cam;
    cam.width = cam.height = 64;
    cam.K = {60, 60, 32, 32};
    cam.R = look_at_rotation(eye, {0, 0, 0}, {0, 1, 0});
    cam.t = apply(cam.R, -eye);
    return cam;
  };
  const Camera cam_a = camera_at(-0.5);
  const Camera cam_b = camera_at(0.5);

  int tested = 0;
  for (int k = 0; k < 40; ++k) {
    // Points on the upper sphere facing both cameras.
    const double az = -1.2 + 2.4 * k / 39.0;
    const Vec3 n{std::cos(1.0) * std::sin(az), std::sin(1.0),
                 std::cos(1.0) * std::cos(az)};
    const Vec3 p = normalized(n);
    if (dot(p, camera_center(cam_a) - p) <= 0.1) continue;
    if (dot(p, camera_center(cam_b) - p) <= 0.1) continue;
    const Projection pa = project(cam_a, p);
    const Projection pb = project(cam_b, p);
    REQUIRE(pa.in_front);
    REQUIRE(pb.in_front);
    const Vec3 ca = trace_reference(ray_for_pixel(cam_a, pa.u, pa.v), spec);
    const Vec3 cb = trace_reference(ray_for_pixel(cam_b, pb.u, pb.v), spec);
    CHECK(close3(ca, cb, 1e-9));
    ++tested;
  }
  CHECK(tested >= 20);
}

TEST_CASE("rig cameras aim at the target and ignore the total count") {
  SceneSpec spec = one_sphere_spec();
  spec.seed = 42;
  spec.rig.count = 4;
  spec.rig.radius_min = 2.5;
  spec.rig.radius_max = 3.0;
  std::vector<Camera> four = rig_cameras(spec);
  spec.rig.count = 8;
  std::vector<Camera> eight = rig_cameras(spec);
  for (int i = 0; i < 4; ++i) {
    CHECK(std::memcmp(four[i].R.m, eight[i].R.m, sizeof(four[i].R.m)) == 0);
    CHECK(four[i].t.x == eight[i].t.x);
  }
  for (const Camera& cam : eight) {
    const Projection c = project(cam, spec.rig.target);
    REQUIRE(c.in_front);
    CHECK(c.u == doctest::Approx(cam.K.cx).epsilon(1e-9));
    CHECK(c.v == doctest::Approx(cam.K.cy).epsilon(1e-9));
    const double r = norm(camera_center(cam) - spec.rig.target);
    CHECK(r >= 2.5);
    CHECK(r <= 3.0);
  }
}

TEST_CASE("generated pixels equal direct traces of their rays") {
  TempDir dir("synth_selfcheck");
  SceneSpec spec = one_sphere_spec();
  spec.name = "selfcheck";
  spec.seed = 3;
  spec.width = spec.height = 32;
  spec.rig.mode = RigMode::kForwardArc;
  spec.rig.count = 2;
  spec.rig.radius_min = 2.2;
  spec.rig.radius_max = 2.8;
  Scene scene = generate_scene(spec, dir.str());

  const Camera& cam = scene.views[0].camera;
  for (int y : {0, 9, 16, 31})
    for (int x : {0, 7, 16, 31}) {
      const Vec3 c = trace_reference(ray_for_pixel(cam, x + 0.5, y + 0.5), spec);
      const float* px = scene.views[0].image.pixel(x, y);
      CHECK(px[0] == static_cast<float>(c.x));
      CHECK(px[1] == static_cast<float>(c.y));
      CHECK(px[2] == static_cast<float>(c.z));
    }

  // Center pixel of a camera aimed at the sphere center sees the sphere.
  const float* center = scene.views[0].image.pixel(16, 16);
  CHECK(center[0] > 0.15f);  // red sphere, not background

  Scene loaded = load_scene(dir.str());
  for (size_t i = 0; i < scene.views.size(); ++i)
    for (size_t k = 0; k < scene.views[i].image.data.size(); ++k) {
      const float want = quantize_channel(scene.views[i].image.data[k]) / 255.0f;
      REQUIRE(loaded.views[i].image.data[k] == want);
    }
}

TEST_CASE("same spec and seed produce byte-identical directories") {
  TempDir da("synth_det_a");
  TempDir db("synth_det_b");
  SceneSpec spec = random_scene_spec("det", 11, RigMode::kHemisphere, false, 4, 32);
  generate_scene(spec, da.str());
  {
    WorkerGuard guard(4);  // worker count must not leak into the output
    generate_scene(spec, db.str());
  }
  int compared = 0;
  for (const auto& entry : fs::directory_iterator(da.path)) {
    const fs::path other = db.path / entry.path().filename();
    REQUIRE(fs::exists(other));
    CHECK(slurp(entry.path()) == slurp(other));
    ++compared;
  }
  CHECK(compared == 5);  // manifest + 4 views

  TempDir dc("synth_det_c");
  SceneSpec other = random_scene_spec("det", 12, RigMode::kHemisphere, false, 4, 32);
  generate_scene(other, dc.str());
  CHECK(slurp(da.path / "scene.json") != slurp(dc.path / "scene.json"));
}

TEST_CASE("manifest bounds bracket every camera-to-geometry distance") {
  TempDir dir("synth_bounds");
  SceneSpec spec = random_scene_spec("bounds", 5, RigMode::kHemisphere, true, 6, 32);
  Scene scene = generate_scene(spec, dir.str());
  double lo = 1e300, hi = 0;
  for (const View& v : scene.views) {
    const DistanceBounds b = distance_bounds(spec, camera_center(v.camera));
    lo = std::min(lo, b.lo);
    hi = std::max(hi, b.hi);
  }
  CHECK(scene.near == doctest::Approx(0.9 * lo).epsilon(1e-12));
  CHECK(scene.far == doctest::Approx(1.1 * hi).epsilon(1e-12));
  CHECK(scene.near > 0);
  CHECK(scene.near < scene.far);
}

TEST_CASE("invalid specs are rejected") {
  TempDir dir("synth_invalid");
  SceneSpec empty;
  empty.rig.count = 4;
  CHECK_THROWS_WITH_AS(generate_scene(empty, dir.str()),
                       doctest::Contains("primitive"), ContractError);

  SceneSpec one_cam = one_sphere_spec();
  one_cam.rig.count = 1;
  one_cam.rig.radius_min = 3;
  CHECK_THROWS_WITH_AS(generate_scene(one_cam, dir.str()),
                       doctest::Contains("camera count"), ContractError);

  SceneSpec inside = one_sphere_spec();
  inside.rig.count = 4;
  inside.rig.radius_min = 0.5;  // inside the unit sphere
  inside.rig.radius_max = 0.8;
  CHECK_THROWS_WITH_AS(generate_scene(inside, dir.str()),
                       doctest::Contains("object radius"), ContractError);

  SceneSpec tiny = one_sphere_spec();
  tiny.width = 8;
  tiny.rig.radius_min = 3;
  tiny.rig.radius_max = 4;
  CHECK_THROWS_AS(generate_scene(tiny, dir.str()), ContractError);
}

TEST_CASE("supersampling stays deterministic and changes edge pixels") {
  SceneSpec spec = one_sphere_spec();
  spec.width = spec.height = 32;
  std::vector<Camera> cams;
  {
    SceneSpec rigged = spec;
    rigged.seed = 9;
    rigged.rig.count = 2;
    rigged.rig.radius_min = 2.5;
    rigged.rig.radius_max = 3.0;
    cams = rig_cameras(rigged);
  }
  const Image base = render_reference_view(spec, cams[0]);
  spec.supersample = 2;
  const Image ss_a = render_reference_view(spec, cams[0]);
  const Image ss_b = render_reference_view(spec, cams[0]);
  CHECK(ss_a.data == ss_b.data);
  CHECK(base.data != ss_a.data);
}

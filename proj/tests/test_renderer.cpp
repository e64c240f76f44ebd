#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <vector>

#include "core/error.h"
#include "core/parallel.h"
#include "core/rng.h"
#include "render/renderer.h"

using namespace nvs;

namespace {

struct WorkerGuard {
  int saved;
  explicit WorkerGuard(int n) : saved(par::max_workers()) { par::set_max_workers(n); }
  ~WorkerGuard() { par::set_max_workers(saved); }
};

Camera make_camera(const Vec3& eye, int w, int h, double focal) {
  Camera cam;
  cam.width = w;
  cam.height = h;
  cam.K = {focal, focal, w / 2.0, h / 2.0};
  cam.R = look_at_rotation(eye, {0, 0, 0}, {0, 1, 0});
  cam.t = apply(cam.R, {-eye.x, -eye.y, -eye.z});
  cam.near = 1.5;
  cam.far = 4.5;
  return cam;
}

Image textured_image(int w, int h, uint64_t key) {
  Image img = Image::filled(w, h, 0, 0, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float* p = img.pixel(x, y);
      p[0] = 0.5f + 0.5f * std::sin(0.7f * x + 0.3f * y);
      p[1] = static_cast<float>(y) / h;
      p[2] = static_cast<float>(keyed_rng(key, x, y, 0).uniform());
    }
  return img;
}

// Six 24x24 views on a hemisphere around the origin.
Scene make_render_scene() {
  Scene scene;
  scene.name = "render_unit";
  scene.near = 1.5;
  scene.far = 4.5;
  for (int i = 0; i < 6; ++i) {
    const double az = 1.04 * i, el = 0.5 + 0.12 * i;
    const Vec3 eye{3 * std::cos(el) * std::cos(az), 3 * std::sin(el),
                   3 * std::cos(el) * std::sin(az)};
    View v;
    v.image_name = "v" + std::to_string(i) + ".png";
    v.image = textured_image(24, 24, 900 + i);
    v.camera = make_camera(eye, 24, 24, 20.0);
    scene.views.push_back(std::move(v));
  }
  return scene;
}

RadianceConfig tiny_config() {
  RadianceConfig cfg;
  cfg.d = 8;
  cfg.d_sigma = 8;
  cfg.num_heads = 2;
  cfg.agg_hidden = 16;
  cfg.fsigma_hidden = 16;
  cfg.color_hidden = 8;
  cfg.head_hidden = 8;
  return cfg;
}

RenderConfig tiny_render_config() {
  RenderConfig cfg;
  cfg.n_source_views = 4;
  cfg.m_coarse = 6;
  cfg.m_fine = 6;
  cfg.chunk_size = 16;
  cfg.deterministic = true;
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_CASE("select: a source view sharing the target pose ranks first") {
  Scene scene = make_render_scene();
  Camera target = scene.views[3].camera;
  std::vector<int> sel = select_view_indices(target, scene, 4);
  CHECK(sel.size() == 4);
  CHECK(sel[0] == 3);
}

TEST_CASE("select: n equal to the view count returns every view deterministically") {
  Scene scene = make_render_scene();
  Camera target = make_camera({0.3, 2.2, 2.0}, 24, 24, 20.0);
  std::vector<int> a = select_view_indices(target, scene, 6);
  std::vector<int> b = select_view_indices(target, scene, 6);
  CHECK(a == b);
  CHECK(std::set<int>(a.begin(), a.end()).size() == 6);
}

TEST_CASE("select: chosen views beat every spurned candidate on direction dot") {
  // 16 views at varying radii; oracle re-derives the candidate pool and
  // compares dot products exhaustively.
  Scene scene;
  scene.near = 1.5;
  scene.far = 4.5;
  for (int i = 0; i < 16; ++i) {
    Rng rng = keyed_rng(5150, i);
    const double az = rng.uniform(0, 6.28), el = rng.uniform(0.2, 1.2);
    const double rad = rng.uniform(2.5, 3.8);
    const Vec3 eye{rad * std::cos(el) * std::cos(az), rad * std::sin(el),
                   rad * std::cos(el) * std::sin(az)};
    View v;
    v.image = textured_image(16, 16, 40 + i);
    v.camera = make_camera(eye, 16, 16, 14.0);
    scene.views.push_back(std::move(v));
  }
  Camera target = make_camera({1.8, 1.7, 1.4}, 16, 16, 14.0);
  const int n = 5;
  std::vector<int> sel = select_view_indices(target, scene, n);
  REQUIRE(sel.size() == 5);

  const Vec3 tc = camera_center(target);
  auto fwd = [](const Camera& c) { return Vec3{-c.R.m[6], -c.R.m[7], -c.R.m[8]}; };
  const Vec3 tf = fwd(target);
  std::vector<int> all(16);
  for (int i = 0; i < 16; ++i) all[i] = i;
  std::sort(all.begin(), all.end(), [&](int a, int b) {
    const double da = norm(camera_center(scene.views[a].camera) - tc);
    const double db = norm(camera_center(scene.views[b].camera) - tc);
    return da != db ? da < db : a < b;
  });
  std::set<int> pool(all.begin(), all.begin() + 2 * n);
  std::set<int> chosen(sel.begin(), sel.end());
  double worst_chosen = 2, best_spurned = -2;
  for (int i : pool) {
    const double d = dot(tf, fwd(scene.views[i].camera));
    if (chosen.count(i))
      worst_chosen = std::min(worst_chosen, d);
    else
      best_spurned = std::max(best_spurned, d);
  }
  for (int i : sel) CHECK(pool.count(i) == 1);
  CHECK(worst_chosen >= best_spurned);
}

TEST_CASE("select: exclusion shrinks the pool and overdraw throws") {
  Scene scene = make_render_scene();
  Camera target = scene.views[0].camera;
  std::vector<int> sel = select_view_indices(target, scene, 5, 0);
  for (int i : sel) CHECK(i != 0);
  CHECK_THROWS_WITH_AS(select_view_indices(target, scene, 6, 0),
                       doctest::Contains("available"), ContractError);
  CHECK_THROWS_AS(select_view_indices(target, scene, 0), ContractError);
}

TEST_CASE("working set construction rejects duplicate and out-of-range indices") {
  Scene scene = make_render_scene();
  FeatureNet net(8, 1);
  CHECK_THROWS_WITH_AS(build_working_set(scene, {1, 1}, net),
                       doctest::Contains("distinct"), ContractError);
  CHECK_THROWS_WITH_AS(build_working_set(scene, {99}, net),
                       doctest::Contains("range"), ContractError);
}

TEST_CASE("composite: zero density gives zero color, weights and alpha") {
  const int m = 7;
  CompositeOut out = composite(Tensor::zeros({m}), Tensor::zeros({m, 3}),
                               Tensor::full({m}, 0.25f));
  for (int i = 0; i < 3; ++i) CHECK(out.color.data()[i] == 0.0f);
  for (int k = 0; k < m; ++k) CHECK(out.weights.data()[k] == 0.0f);
  CHECK(out.alpha.data()[0] == 0.0f);
}

TEST_CASE("composite: an opaque first sample hides everything behind it") {
  Tensor sigma = Tensor::from_data({3}, {1e6f, 4.0f, 9.0f});
  Tensor color = Tensor::from_data(
      {3, 3}, {0.3f, 0.6f, 0.9f, 1.0f, 1.0f, 1.0f, 0.2f, 0.2f, 0.2f});
  CompositeOut out = composite(sigma, color, Tensor::full({3}, 0.5f));
  CHECK(out.color.data()[0] == doctest::Approx(0.3).epsilon(1e-6));
  CHECK(out.color.data()[1] == doctest::Approx(0.6).epsilon(1e-6));
  CHECK(out.color.data()[2] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(out.alpha.data()[0] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("composite: homogeneous medium matches 1 - exp(-sigma L) and refines monotonically") {
  const double near = 1.0, far = 2.0, sig = 2.0;
  const double expect = 1.0 - std::exp(-sig * (far - near));
  auto run = [&](int m) {
    std::vector<double> depths = sample_coarse(near, far, m, nullptr);
    std::vector<double> deltas = delta_intervals(depths, (far - near) / m);
    std::vector<float> df(deltas.begin(), deltas.end());
    std::vector<float> col(static_cast<size_t>(m) * 3, 0.5f);
    CompositeOut out = composite(Tensor::full({m}, static_cast<float>(sig)),
                                 Tensor::from_data({m, 3}, std::move(col)),
                                 Tensor::from_data({m}, std::move(df)));
    return std::abs(out.color.data()[0] / 0.5 - expect);
  };
  CHECK(run(256) < 0.01 * expect);
  const double e8 = run(8), e32 = run(32), e128 = run(128), e512 = run(512);
  MESSAGE("homogeneous medium errors: ", e8, " ", e32, " ", e128, " ", e512);
  CHECK(e8 > e32);
  CHECK(e32 > e128);
  CHECK(e128 > e512);
}

TEST_CASE("composite: transmittance starts at 1, never grows, and weights stay a partition") {
  Rng rng = keyed_rng(77, 0);
  const int m = 24;
  std::vector<float> sig(m), del(m), col(m * 3);
  for (int k = 0; k < m; ++k) {
    sig[k] = static_cast<float>(rng.uniform(0.1, 5.0));
    del[k] = static_cast<float>(rng.uniform(0.01, 0.3));
  }
  for (auto& c : col) c = static_cast<float>(rng.uniform());
  CompositeOut out = composite(Tensor::from_data({m}, sig),
                               Tensor::from_data({m, 3}, col),
                               Tensor::from_data({m}, del));
  double acc = 0, prev_t = 2;
  for (int k = 0; k < m; ++k) {
    const double a = out.weights.data()[k];
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
    const double local = 1.0 - std::exp(-double(sig[k]) * del[k]);
    const double t = a / local;
    if (k == 0) CHECK(t == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(t <= prev_t + 1e-9);
    prev_t = t;
    acc += a;
  }
  CHECK(acc <= 1.0 + 1e-5);
  CHECK(out.alpha.data()[0] == doctest::Approx(acc).epsilon(1e-5));

  // Trailing empty samples change nothing.
  std::vector<float> sig2 = sig, del2 = del, col2 = col;
  sig2.insert(sig2.end(), {0.0f, 0.0f});
  del2.insert(del2.end(), {0.2f, 0.2f});
  col2.insert(col2.end(), {0.9f, 0.9f, 0.9f, 0.1f, 0.1f, 0.1f});
  CompositeOut ext = composite(Tensor::from_data({m + 2}, sig2),
                               Tensor::from_data({m + 2, 3}, col2),
                               Tensor::from_data({m + 2}, del2));
  for (int i = 0; i < 3; ++i) CHECK(ext.color.data()[i] == out.color.data()[i]);
  CHECK(ext.weights.data()[m] == 0.0f);
  CHECK(ext.weights.data()[m + 1] == 0.0f);
}

TEST_CASE("composite: gradients match the closed form for one sample") {
  const float s0 = 0.8f, d0 = 0.6f;
  Tensor sigma = Tensor::from_data({1}, {s0}, true);
  Tensor color = Tensor::from_data({1, 3}, {0.2f, 0.5f, 0.7f}, true);
  CompositeOut out = composite(sigma, color, Tensor::from_data({1}, {d0}));
  backward(sum_all(out.color));
  const double a0 = 1.0 - std::exp(-double(s0) * d0);
  const double dsig = d0 * std::exp(-double(s0) * d0) * (0.2 + 0.5 + 0.7);
  CHECK(sigma.grad()[0] == doctest::Approx(dsig).epsilon(1e-4));
  for (int i = 0; i < 3; ++i)
    CHECK(color.grad()[i] == doctest::Approx(a0).epsilon(1e-5));
}

TEST_CASE("composite: contract violations throw") {
  CHECK_THROWS_WITH_AS(composite(Tensor::from_data({2}, {-0.1f, 1.0f}),
                                 Tensor::zeros({2, 3}), Tensor::full({2}, 0.1f)),
                       doctest::Contains("negative density"), ContractError);
  CHECK_THROWS_WITH_AS(composite(Tensor::full({2}, 1.0f), Tensor::zeros({2, 3}),
                                 Tensor::from_data({2}, {0.1f, 0.0f})),
                       doctest::Contains("positive"), ContractError);
  CHECK_THROWS_AS(composite(Tensor::full({2}, 1.0f), Tensor::zeros({3, 3}),
                            Tensor::full({2}, 0.1f)),
                  ShapeError);
}

TEST_CASE("sample_fine: a dominant interval captures every draw") {
  std::vector<double> depths(10), weights(10, 0.0);
  for (int k = 0; k < 10; ++k) depths[k] = 1.0 + 0.1 * k;
  weights[3] = 5.0;
  Rng rng = keyed_rng(31, 0);
  std::vector<double> out = sample_fine(depths, weights, 64, rng);
  REQUIRE(out.size() == 64);
  for (double t : out) {
    CHECK(t >= depths[3]);
    CHECK(t <= depths[4]);
  }
}

TEST_CASE("sample_fine: uniform weights pass a KS test against the uniform law") {
  const int m = 11, draws = 10000;
  std::vector<double> depths(m), weights(m, 1.0);
  for (int k = 0; k < m; ++k) depths[k] = 1.0 + 0.1 * k;
  Rng rng = keyed_rng(32, 0);
  std::vector<double> out = sample_fine(depths, weights, draws, rng);
  // sorted output doubles as the order statistics
  double ks = 0;
  for (int j = 0; j < draws; ++j) {
    const double f = (out[j] - depths.front()) / (depths.back() - depths.front());
    ks = std::max(ks, std::abs(f - (j + 1.0) / draws));
    ks = std::max(ks, std::abs(f - static_cast<double>(j) / draws));
  }
  MESSAGE("KS statistic: ", ks);
  CHECK(ks < 1.628 / std::sqrt(static_cast<double>(draws)));
}

TEST_CASE("sample_fine: zero weights reproduce stratified coarse sampling exactly") {
  std::vector<double> depths = {1.0, 1.4, 1.7, 2.0};
  Rng a = keyed_rng(33, 0), b = keyed_rng(33, 0);
  std::vector<double> got = sample_fine(depths, {0, 0, 0, 0}, 16, a);
  std::vector<double> want = sample_coarse(1.0, 2.0, 16, &b);
  CHECK(got == want);
}

TEST_CASE("sample_fine: outputs sorted and bracketed; contract violations throw") {
  std::vector<double> depths = {1.0, 1.3, 1.9, 2.4, 3.0};
  std::vector<double> weights = {0.3, 0.01, 1.2, 0.7, 0.0};
  Rng rng = keyed_rng(34, 0);
  std::vector<double> out = sample_fine(depths, weights, 40, rng);
  CHECK(std::is_sorted(out.begin(), out.end()));
  for (double t : out) {
    CHECK(t >= 1.0);
    CHECK(t <= 3.0);
  }
  CHECK_THROWS_WITH_AS(sample_fine({1.0}, {1.0}, 4, rng),
                       doctest::Contains("two"), ContractError);
  CHECK_THROWS_WITH_AS(sample_fine(depths, {1, 1, -1, 1, 1}, 4, rng),
                       doctest::Contains("negative"), ContractError);
}

TEST_CASE("render_ray: rays outside every source frustum come back black") {
  Scene scene = make_render_scene();
  ModelSet models(tiny_config(), 3);
  RenderConfig cfg = tiny_render_config();
  NoGradGuard ng;
  WorkingSet ws = select_working_set({}, scene, models.feature, 4, -1);
  // Points far above the rig are behind or outside every camera.
  Ray ray{{0, 30, 0}, {0, 1, 0}};
  RayRender rr = render_ray(ray, 5, ws, models.coarse, models.fine, 1.5, 4.5, cfg);
  for (int i = 0; i < 3; ++i) {
    CHECK(rr.coarse_color.data()[i] == 0.0f);
    CHECK(rr.fine_color.data()[i] == 0.0f);
  }
  CHECK(rr.depth == 0.0);
}

TEST_CASE("render_ray: repeat renders are bitwise identical and ignore salt when deterministic") {
  Scene scene = make_render_scene();
  ModelSet models(tiny_config(), 3);
  RenderConfig cfg = tiny_render_config();
  NoGradGuard ng;
  WorkingSet ws = select_working_set(scene.views[1].camera, scene, models.feature,
                                     cfg.n_source_views, -1);
  Ray ray = ray_for_pixel(scene.views[1].camera, 12.5, 11.5);
  RayRender a = render_ray(ray, 42, ws, models.coarse, models.fine, 1.5, 4.5, cfg, 0);
  RayRender b = render_ray(ray, 42, ws, models.coarse, models.fine, 1.5, 4.5, cfg, 9);
  CHECK(std::memcmp(a.fine_color.data(), b.fine_color.data(), 3 * sizeof(float)) == 0);
  CHECK(std::memcmp(a.coarse_color.data(), b.coarse_color.data(), 3 * sizeof(float)) == 0);
  CHECK(a.depth == b.depth);

  cfg.deterministic = false;
  RayRender c = render_ray(ray, 42, ws, models.coarse, models.fine, 1.5, 4.5, cfg, 7);
  RayRender d = render_ray(ray, 42, ws, models.coarse, models.fine, 1.5, 4.5, cfg, 7);
  CHECK(std::memcmp(c.fine_color.data(), d.fine_color.data(), 3 * sizeof(float)) == 0);
}

TEST_CASE("render_rays: coarse diagnostics cover every ray with a valid partition") {
  Scene scene = make_render_scene();
  ModelSet models(tiny_config(), 3);
  RenderConfig cfg = tiny_render_config();
  NoGradGuard ng;
  WorkingSet ws = select_working_set(scene.views[1].camera, scene, models.feature,
                                     cfg.n_source_views, -1);
  std::vector<Ray> rays;
  std::vector<uint64_t> ids;
  for (int p = 0; p < 5; ++p) {
    rays.push_back(ray_for_pixel(scene.views[1].camera, 8.5 + p, 10.5));
    ids.push_back(static_cast<uint64_t>(p));
  }
  RaysRender rr = render_rays(rays, ids, ws, models.coarse, models.fine, 1.5,
                              4.5, cfg, 0);
  const size_t mc = static_cast<size_t>(cfg.m_coarse);
  REQUIRE(rr.coarse_ts.size() == rays.size() * mc);
  REQUIRE(rr.coarse_weights.size() == rays.size() * mc);
  for (size_t r = 0; r < rays.size(); ++r) {
    double sum = 0;
    for (size_t k = 0; k < mc; ++k) {
      const double t = rr.coarse_ts[r * mc + k];
      CHECK(t >= 1.5);
      CHECK(t <= 4.5);
      if (k > 0) CHECK(t > rr.coarse_ts[r * mc + k - 1]);
      CHECK(rr.coarse_weights[r * mc + k] >= 0.0f);
      sum += rr.coarse_weights[r * mc + k];
    }
    CHECK(sum <= 1.0 + 1e-4);
  }
}

TEST_CASE("render_image: a 2x2 frame equals four independent ray renders") {
  Scene scene = make_render_scene();
  ModelSet models(tiny_config(), 3);
  RenderConfig cfg = tiny_render_config();
  cfg.chunk_size = 3;  // uneven split on purpose
  Camera target = make_camera({0.4, 2.3, 1.9}, 2, 2, 1.6);
  Image img = render_image(target, scene, models, cfg);

  NoGradGuard ng;
  WorkingSet ws = select_working_set(target, scene, models.feature,
                                     cfg.n_source_views, -1);
  for (int p = 0; p < 4; ++p) {
    const int px = p % 2, py = p / 2;
    Ray ray = ray_for_pixel(target, px + 0.5, py + 0.5);
    RayRender rr = render_ray(ray, static_cast<uint64_t>(p), ws, models.coarse,
                              models.fine, scene.near, scene.far, cfg);
    for (int ch = 0; ch < 3; ++ch) {
      const float want = std::clamp(rr.fine_color.data()[ch], 0.0f, 1.0f);
      CHECK(img.data[p * 3 + ch] == want);
    }
  }
}

TEST_CASE("render_image: chunk size and worker count never change a pixel") {
  Scene scene = make_render_scene();
  ModelSet models(tiny_config(), 3);
  Camera target = make_camera({0.5, 2.1, 2.0}, 4, 4, 3.2);

  RenderConfig one = tiny_render_config();
  one.chunk_size = 1;
  RenderConfig big = tiny_render_config();
  big.chunk_size = 4096;

  Image a, b, c;
  {
    WorkerGuard guard(1);
    a = render_image(target, scene, models, one);
    b = render_image(target, scene, models, big);
  }
  {
    WorkerGuard guard(4);
    c = render_image(target, scene, models, big);
  }
  REQUIRE(a.data.size() == b.data.size());
  CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
  CHECK(std::memcmp(a.data.data(), c.data.data(), a.data.size() * sizeof(float)) == 0);
  for (float v : a.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("render_rays: gradients reach the feature net and both radiance nets") {
  Scene scene = make_render_scene();
  ModelSet models(tiny_config(), 3);
  RenderConfig cfg = tiny_render_config();
  WorkingSet ws = select_working_set(scene.views[0].camera, scene, models.feature,
                                     cfg.n_source_views, 0);
  std::vector<Ray> rays = {ray_for_pixel(scene.views[0].camera, 12.5, 12.5),
                           ray_for_pixel(scene.views[0].camera, 10.5, 13.5)};
  RaysRender rr = render_rays(rays, {0, 1}, ws, models.coarse, models.fine, 1.5,
                              4.5, cfg);
  backward(add(sum_all(rr.fine_color), sum_all(rr.coarse_color)));

  auto grad_norm = [&](const char* name) {
    for (auto& p : models.named_params())
      if (p.first == name) {
        double n = 0;
        for (float g : p.second.grad()) n += std::abs(g);
        return n;
      }
    return -1.0;
  };
  CHECK(grad_norm("feat.enc1.w") > 0);
  CHECK(grad_norm("coarse.agg1.w") > 0);
  CHECK(grad_norm("coarse.pool.s") > 0);
  CHECK(grad_norm("fine.col1.w") > 0);
  CHECK(grad_norm("fine.attn0.wq") > 0);
}

TEST_CASE("render_rays: contract violations throw") {
  Scene scene = make_render_scene();
  ModelSet models(tiny_config(), 3);
  RenderConfig cfg = tiny_render_config();
  NoGradGuard ng;
  WorkingSet ws = select_working_set({}, scene, models.feature, 3, -1);
  Ray ray{{0, 0, 3}, {0, 0, -1}};
  CHECK_THROWS_AS(render_rays({ray}, {0, 1}, ws, models.coarse, models.fine, 1.5,
                              4.5, cfg),
                  ContractError);
  CHECK_THROWS_AS(render_rays({ray}, {0}, ws, models.coarse, models.fine, 4.5,
                              1.5, cfg),
                  ContractError);
  CHECK_THROWS_AS(render_rays({ray}, {0}, ws, models.coarse, models.fine, 1.5,
                              4.5, RenderConfig{.m_coarse = 1}),
                  ContractError);
}

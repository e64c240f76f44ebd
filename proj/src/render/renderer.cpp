#include "render/renderer.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "core/error.h"
#include "core/parallel.h"

namespace nvs {

namespace {

// World-space optical axis of a camera looking down -z.
Vec3 forward_axis(const Mat3& R) { return {-R.m[6], -R.m[7], -R.m[8]}; }

constexpr double kPdfEps = 1e-5;

// Per-sample, per-view projections, fetches and direction terms for one
// pass. depths is ragged-free: every ray has the same sample count.
SampleBatch build_batch(const std::vector<Ray>& rays,
                        const std::vector<std::vector<double>>& depths,
                        const WorkingSet& ws, bool fine_maps) {
  const int64_t n_rays = static_cast<int64_t>(rays.size());
  const int64_t m = static_cast<int64_t>(depths[0].size());
  const int64_t rows = n_rays * m;
  const int64_t n = static_cast<int64_t>(ws.views.size());

  std::vector<Vec3> pts(static_cast<size_t>(rows));
  par::parallel_chunks(n_rays, 64, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r)
      for (int64_t k = 0; k < m; ++k)
        pts[static_cast<size_t>(r * m + k)] = point_at(rays[static_cast<size_t>(r)], depths[static_cast<size_t>(r)][static_cast<size_t>(k)]);
  });

  std::vector<Tensor> feat_views, color_views;
  feat_views.reserve(static_cast<size_t>(n));
  color_views.reserve(static_cast<size_t>(n));
  std::vector<float> dots(static_cast<size_t>(rows * n));
  std::vector<float> ddir(static_cast<size_t>(rows * n * 3));
  std::vector<float> valid(static_cast<size_t>(rows * n));

  for (int64_t i = 0; i < n; ++i) {
    const SourceViewData& sv = ws.views[static_cast<size_t>(i)];
    std::vector<double> u(static_cast<size_t>(rows)), v(static_cast<size_t>(rows));
    std::vector<uint8_t> in_front(static_cast<size_t>(rows));
    par::parallel_chunks(rows, 1024, [&](int64_t a, int64_t b) {
      for (int64_t row = a; row < b; ++row) {
        Projection p = project(sv.cam, pts[static_cast<size_t>(row)]);
        u[static_cast<size_t>(row)] = p.u;
        v[static_cast<size_t>(row)] = p.v;
        in_front[static_cast<size_t>(row)] = p.in_front ? 1 : 0;
      }
    });

    std::vector<uint8_t> vf, vc;
    Tensor f = fetch_features<float>(fine_maps ? sv.maps.fine : sv.maps.coarse,
                                     u, v, in_front, &vf);
    Tensor c = fetch_colors<float>(sv.image, u, v, in_front, &vc);
    feat_views.push_back(reshape(f, {rows, 1, f.dim(1)}));
    color_views.push_back(reshape(c, {rows, 1, 3}));

    par::parallel_chunks(rows, 1024, [&](int64_t a, int64_t b) {
      for (int64_t row = a; row < b; ++row) {
        const Vec3& x = pts[static_cast<size_t>(row)];
        Vec3 to_x = x - sv.center;
        const double len = norm(to_x);
        const Vec3 d = rays[static_cast<size_t>(row / m)].dir;
        const Vec3 di = len > 1e-12 ? to_x * (1.0 / len) : d;
        RelativeDirection rd = relative_direction(d, di);
        const size_t e = static_cast<size_t>(row * n + i);
        dots[e] = static_cast<float>(rd.cos_angle);
        ddir[e * 3 + 0] = static_cast<float>(rd.delta.x);
        ddir[e * 3 + 1] = static_cast<float>(rd.delta.y);
        ddir[e * 3 + 2] = static_cast<float>(rd.delta.z);
        valid[e] = (vf[static_cast<size_t>(row)] && vc[static_cast<size_t>(row)]) ? 1.0f : 0.0f;
      }
    });
  }

  SampleBatch batch;
  batch.feats = concat(feat_views, 1);
  batch.colors = concat(color_views, 1);
  batch.ddir = Tensor::from_data({rows, n, 3}, std::move(ddir));
  batch.dots = Tensor::from_data({rows, n}, std::move(dots));
  batch.valid = Tensor::from_data({rows, n}, std::move(valid));
  return batch;
}

Tensor pass_deltas(const std::vector<std::vector<double>>& depths, double near,
                   double far) {
  const int64_t n_rays = static_cast<int64_t>(depths.size());
  const int64_t m = static_cast<int64_t>(depths[0].size());
  const double cap = (far - near) / static_cast<double>(m);
  std::vector<float> flat(static_cast<size_t>(n_rays * m));
  for (int64_t r = 0; r < n_rays; ++r) {
    std::vector<double> dd = delta_intervals(depths[static_cast<size_t>(r)], cap);
    for (int64_t k = 0; k < m; ++k)
      flat[static_cast<size_t>(r * m + k)] = static_cast<float>(dd[static_cast<size_t>(k)]);
  }
  return Tensor::from_data({n_rays, m}, std::move(flat));
}

}  // namespace

std::vector<int> select_view_indices(const Camera& target, const Scene& scene,
                                     int n, int exclude_index) {
  if (n < 1) throw ContractError("working set size must be positive");
  std::vector<int> pool;
  for (size_t i = 0; i < scene.views.size(); ++i)
    if (static_cast<int>(i) != exclude_index) pool.push_back(static_cast<int>(i));
  if (n > static_cast<int>(pool.size()))
    throw ContractError("working set needs " + std::to_string(n) +
                        " views but only " + std::to_string(pool.size()) +
                        " are available");

  const Vec3 tc = camera_center(target);
  std::vector<double> dist(scene.views.size()), dot_fwd(scene.views.size());
  const Vec3 tf = forward_axis(target.R);
  for (int idx : pool) {
    const Camera& cam = scene.views[static_cast<size_t>(idx)].camera;
    dist[static_cast<size_t>(idx)] = norm(camera_center(cam) - tc);
    dot_fwd[static_cast<size_t>(idx)] = dot(tf, forward_axis(cam.R));
  }

  std::sort(pool.begin(), pool.end(), [&](int a, int b) {
    const double da = dist[static_cast<size_t>(a)], db = dist[static_cast<size_t>(b)];
    return da != db ? da < db : a < b;
  });
  if (static_cast<int>(pool.size()) > 2 * n) pool.resize(static_cast<size_t>(2 * n));

  std::sort(pool.begin(), pool.end(), [&](int a, int b) {
    const double da = dot_fwd[static_cast<size_t>(a)], db = dot_fwd[static_cast<size_t>(b)];
    return da != db ? da > db : a < b;
  });
  pool.resize(static_cast<size_t>(n));
  return pool;
}

WorkingSet build_working_set(const Scene& scene, const std::vector<int>& indices,
                             const FeatureNet& net) {
  std::set<int> seen;
  WorkingSet ws;
  ws.indices = indices;
  for (int idx : indices) {
    if (idx < 0 || idx >= static_cast<int>(scene.views.size()))
      throw ContractError("working set index out of range");
    if (!seen.insert(idx).second)
      throw ContractError("working set indices must be distinct");
    const View& view = scene.views[static_cast<size_t>(idx)];
    SourceViewData sv;
    sv.index = idx;
    sv.cam = view.camera;
    sv.center = camera_center(view.camera);
    sv.forward = forward_axis(view.camera.R);
    sv.image = image_to_tensor<float>(view.image);
    sv.maps = net.extract(sv.image);
    ws.views.push_back(std::move(sv));
  }
  return ws;
}

WorkingSet select_working_set(const Camera& target, const Scene& scene,
                              const FeatureNet& net, int n, int exclude_index) {
  return build_working_set(scene, select_view_indices(target, scene, n, exclude_index), net);
}

CompositeOut composite(const Tensor& sigma, const Tensor& color,
                       const Tensor& delta) {
  const bool single = sigma.shape().size() == 1;
  Tensor s = sigma, c = color, d = delta;
  if (single) {
    const int64_t m = sigma.dim(0);
    s = reshape(s, {1, m});
    c = reshape(c, {1, m, 3});
    d = reshape(d, {1, m});
  }
  const int64_t n_rays = s.dim(0), m = s.dim(1);
  if (m < 1) throw ContractError("composite: need at least one sample");
  if (d.shape() != s.shape() || c.shape() != Shape{n_rays, m, 3})
    throw ShapeError("composite: shape mismatch");
  for (int64_t i = 0; i < s.size(); ++i) {
    if (s.data()[i] < 0) throw ContractError("composite: negative density");
    if (d.data()[i] <= 0) throw ContractError("composite: intervals must be positive");
  }

  Tensor sd = mul(s, d);
  Tensor trans = exp(neg(cumsum_exclusive(sd, 1)));       // T_k
  Tensor local = sub(Tensor::full({n_rays, m}, 1.0f), exp(neg(sd)));
  CompositeOut out;
  Tensor w = mul(trans, local);                            // a_k
  out.color = sum(mul(c, reshape(w, {n_rays, m, 1})), 1);  // [R, 3]
  out.alpha = sum(w, 1);
  out.weights = w;
  if (single) {
    out.color = reshape(out.color, {3});
    out.weights = reshape(out.weights, {m});
  }
  return out;
}

std::vector<double> sample_fine(const std::vector<double>& coarse_depths,
                                const std::vector<double>& weights, int m_f,
                                Rng& rng) {
  const size_t m = coarse_depths.size();
  if (m < 2) throw ContractError("sample_fine: need at least two coarse depths");
  if (weights.size() != m)
    throw ContractError("sample_fine: one weight per coarse depth");
  for (double w : weights)
    if (w < 0) throw ContractError("sample_fine: negative weight");
  if (m_f <= 0) return {};
  // Interval k spans [t_k, t_k+1] and carries weight a_k; the final
  // sample's interval is the open-ended cap, so its weight is unused.
  double wmax = 0;
  for (size_t k = 0; k + 1 < m; ++k) wmax = std::max(wmax, weights[k]);
  if (wmax <= 0)
    return sample_coarse(coarse_depths.front(), coarse_depths.back(), m_f, &rng);

  std::vector<double> cdf(m);
  cdf[0] = 0;
  for (size_t k = 0; k + 1 < m; ++k) cdf[k + 1] = cdf[k] + weights[k] + kPdfEps;
  const double total = cdf[m - 1];

  std::vector<double> out(static_cast<size_t>(m_f));
  for (int j = 0; j < m_f; ++j) {
    const double uu = rng.uniform() * total;
    size_t bin = static_cast<size_t>(
        std::upper_bound(cdf.begin(), cdf.end(), uu) - cdf.begin());
    bin = std::min(std::max<size_t>(bin, 1) - 1, m - 2);
    const double span = cdf[bin + 1] - cdf[bin];
    const double frac = span > 0 ? (uu - cdf[bin]) / span : 0.5;
    out[static_cast<size_t>(j)] =
        coarse_depths[bin] + frac * (coarse_depths[bin + 1] - coarse_depths[bin]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

RaysRender render_rays(const std::vector<Ray>& rays,
                       const std::vector<uint64_t>& ids, const WorkingSet& ws,
                       const RadianceNet& coarse_net,
                       const RadianceNet& fine_net, double near, double far,
                       const RenderConfig& cfg, uint64_t salt) {
  if (rays.size() != ids.size())
    throw ContractError("render_rays: one id per ray");
  if (ws.views.empty()) throw ContractError("render_rays: empty working set");
  if (!(near > 0) || !(far > near))
    throw ContractError("render_rays: invalid near/far");
  if (cfg.m_coarse < 2) throw ContractError("render_rays: m_coarse must be >= 2");
  if (cfg.m_fine < 0) throw ContractError("render_rays: m_fine must be >= 0");
  const int64_t n_rays = static_cast<int64_t>(rays.size());
  if (n_rays == 0)
    return {Tensor::zeros({0, 3}), Tensor::zeros({0, 3}), {}, {}, {}};

  const uint64_t salt_eff = cfg.deterministic ? 0 : salt;
  const int mc = cfg.m_coarse, mf = cfg.m_fine;

  std::vector<std::vector<double>> coarse_d(static_cast<size_t>(n_rays));
  for (int64_t r = 0; r < n_rays; ++r) {
    if (cfg.deterministic) {
      coarse_d[static_cast<size_t>(r)] = sample_coarse(near, far, mc, nullptr);
    } else {
      Rng jrng = keyed_rng(cfg.seed, 0x636f6172, ids[static_cast<size_t>(r)], salt_eff);
      coarse_d[static_cast<size_t>(r)] = sample_coarse(near, far, mc, &jrng);
    }
  }

  SampleBatch cb = build_batch(rays, coarse_d, ws, false);
  RayPrediction cp = coarse_net.predict_rays(cb, n_rays);
  CompositeOut cc = composite(reshape(cp.sigma, {n_rays, mc}),
                              reshape(cp.color, {n_rays, mc, 3}),
                              pass_deltas(coarse_d, near, far));

  std::vector<std::vector<double>> fine_d(static_cast<size_t>(n_rays));
  const float* wv = cc.weights.data();
  for (int64_t r = 0; r < n_rays; ++r) {
    std::vector<double> w(wv + r * mc, wv + (r + 1) * mc);
    Rng frng = keyed_rng(cfg.seed, 0x66696e65, ids[static_cast<size_t>(r)], salt_eff);
    std::vector<double> extra = sample_fine(coarse_d[static_cast<size_t>(r)], w, mf, frng);
    std::vector<double>& all = fine_d[static_cast<size_t>(r)];
    all = coarse_d[static_cast<size_t>(r)];
    all.insert(all.end(), extra.begin(), extra.end());
    std::sort(all.begin(), all.end());
    // Clamped jitter can reproduce an endpoint exactly; composite needs
    // strictly increasing depths, so bump duplicates by one ulp.
    for (size_t k = 1; k < all.size(); ++k)
      if (all[k] <= all[k - 1])
        all[k] = std::nextafter(all[k - 1], std::numeric_limits<double>::max());
  }

  SampleBatch fb = build_batch(rays, fine_d, ws, true);
  RayPrediction fp = fine_net.predict_rays(fb, n_rays);
  const int mt = mc + mf;
  CompositeOut fc = composite(reshape(fp.sigma, {n_rays, mt}),
                              reshape(fp.color, {n_rays, mt, 3}),
                              pass_deltas(fine_d, near, far));

  RaysRender out;
  out.coarse_color = cc.color;
  out.fine_color = fc.color;
  out.coarse_ts.reserve(static_cast<size_t>(n_rays * mc));
  for (int64_t r = 0; r < n_rays; ++r)
    out.coarse_ts.insert(out.coarse_ts.end(), coarse_d[static_cast<size_t>(r)].begin(),
                         coarse_d[static_cast<size_t>(r)].end());
  out.coarse_weights.assign(wv, wv + n_rays * mc);
  out.depth.assign(static_cast<size_t>(n_rays), 0.0);
  const float* fw = fc.weights.data();
  for (int64_t r = 0; r < n_rays; ++r)
    for (int k = 0; k < mt; ++k)
      out.depth[static_cast<size_t>(r)] +=
          static_cast<double>(fw[r * mt + k]) * fine_d[static_cast<size_t>(r)][static_cast<size_t>(k)];
  return out;
}

RayRender render_ray(const Ray& ray, uint64_t ray_id, const WorkingSet& ws,
                     const RadianceNet& coarse_net, const RadianceNet& fine_net,
                     double near, double far, const RenderConfig& cfg,
                     uint64_t salt) {
  RaysRender rr = render_rays({ray}, {ray_id}, ws, coarse_net, fine_net, near,
                              far, cfg, salt);
  return {reshape(rr.coarse_color, {3}), reshape(rr.fine_color, {3}), rr.depth[0]};
}

Image render_image(const Camera& target, const Scene& scene, ModelSet& models,
                   const RenderConfig& cfg, int exclude_index,
                   std::vector<double>* depth_out) {
  if (target.width < 1 || target.height < 1)
    throw ContractError("render_image: target camera has no image size");
  NoGradGuard ng;
  WorkingSet ws = select_working_set(target, scene, models.feature,
                                     cfg.n_source_views, exclude_index);
  const int w = target.width, h = target.height;
  Image out = Image::filled(w, h, 0, 0, 0);
  if (depth_out) depth_out->assign(static_cast<size_t>(w) * h, 0.0);

  const int64_t total = static_cast<int64_t>(w) * h;
  const int64_t chunk = std::max(1, cfg.chunk_size);
  for (int64_t start = 0; start < total; start += chunk) {
    const int64_t end = std::min(total, start + chunk);
    std::vector<Ray> rays;
    std::vector<uint64_t> ids;
    rays.reserve(static_cast<size_t>(end - start));
    ids.reserve(static_cast<size_t>(end - start));
    for (int64_t p = start; p < end; ++p) {
      const int px = static_cast<int>(p % w), py = static_cast<int>(p / w);
      rays.push_back(ray_for_pixel(target, px + 0.5, py + 0.5));
      ids.push_back(static_cast<uint64_t>(p));
    }
    RaysRender rr = render_rays(rays, ids, ws, models.coarse, models.fine,
                                scene.near, scene.far, cfg);
    const float* c = rr.fine_color.data();
    for (int64_t p = start; p < end; ++p) {
      const int64_t j = p - start;
      for (int ch = 0; ch < 3; ++ch)
        out.data[static_cast<size_t>(p * 3 + ch)] =
            std::clamp(c[j * 3 + ch], 0.0f, 1.0f);
      if (depth_out) (*depth_out)[static_cast<size_t>(p)] = rr.depth[static_cast<size_t>(j)];
    }
  }
  return out;
}

}  // namespace nvs

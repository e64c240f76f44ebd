#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "core/error.h"
#include "core/rng.h"
#include "model/radiance_net.h"

using namespace nvs;

namespace {

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

template <class S>
TensorT<S> rand_tensor(Shape shape, uint64_t key, double lo = -1, double hi = 1,
                       bool req = false) {
  std::vector<S> vals(static_cast<size_t>(numel(shape)));
  Rng rng = keyed_rng(0x7462ULL, key);
  for (S& v : vals) v = static_cast<S>(rng.uniform(lo, hi));
  return TensorT<S>::from_data(std::move(shape), std::move(vals), req);
}

template <class S>
SampleBatchT<S> random_batch(int64_t m, int64_t n, int64_t d, uint64_t key,
                             bool feats_grad = false) {
  SampleBatchT<S> b;
  b.feats = rand_tensor<S>({m, n, d}, key, -1, 1, feats_grad);
  b.colors = rand_tensor<S>({m, n, 3}, key + 1, 0, 1);
  b.ddir = rand_tensor<S>({m, n, 3}, key + 2, -0.3, 0.3);
  b.dots = rand_tensor<S>({m, n}, key + 3, -1, 1);
  b.valid = TensorT<S>::full({m, n}, 1);
  return b;
}

template <class S>
TensorT<S> permute_views(const TensorT<S>& t, const std::vector<int64_t>& perm) {
  const int64_t m = t.dim(0), n = t.dim(1);
  const int64_t tail = t.size() / (m * n);
  std::vector<S> out(t.size());
  for (int64_t k = 0; k < m; ++k)
    for (int64_t i = 0; i < n; ++i)
      std::memcpy(&out[(k * n + i) * tail], &t.data()[(k * n + perm[i]) * tail],
                  sizeof(S) * tail);
  return TensorT<S>::from_data(t.shape(), std::move(out), t.requires_grad());
}

}  // namespace

TEST_CASE("pooling weights reproduce the hand-evaluated two-view case") {
  RadianceNet net(tiny_config(), "c", 1);
  // dots (1, 0), s = 1: second weight is max(0, e^-1 - e^-1) = 0.
  Tensor w = net.pooling_weights(Tensor::from_data({1, 2}, {1.0f, 0.0f}),
                                 Tensor::full({1, 2}, 1.0f));
  CHECK(w.data()[0] == 1.0f);
  CHECK(w.data()[1] == 0.0f);
}

TEST_CASE("equal dots fall back to uniform weights") {
  RadianceNet net(tiny_config(), "c", 1);
  Tensor w = net.pooling_weights(Tensor::full({2, 3}, 0.4f), Tensor::full({2, 3}, 1.0f));
  for (int64_t i = 0; i < w.size(); ++i)
    CHECK(w.data()[i] == doctest::Approx(1.0 / 3).epsilon(1e-6));
}

TEST_CASE("a single view takes all the weight") {
  RadianceNet net(tiny_config(), "c", 1);
  Tensor w = net.pooling_weights(Tensor::from_data({1, 1}, {0.3f}),
                                 Tensor::full({1, 1}, 1.0f));
  CHECK(w.data()[0] == 1.0f);
}

TEST_CASE("pooling weights are a valid distribution favoring the largest dot") {
  RadianceNet net(tiny_config(), "c", 1);
  Rng rng = keyed_rng(0x706f6f6cULL, 1);
  for (int trial = 0; trial < 300; ++trial) {
    const int64_t n = 2 + rng.uniform_int(6);
    std::vector<float> dots(n), valid(n);
    int64_t n_valid = 0;
    for (int64_t i = 0; i < n; ++i) {
      dots[i] = static_cast<float>(rng.uniform(-1, 1));
      valid[i] = rng.uniform() < 0.75 ? 1.0f : 0.0f;
      n_valid += valid[i] > 0;
    }
    if (n_valid == 0) valid[0] = 1;
    Tensor w = net.pooling_weights(Tensor::from_data({1, n}, dots),
                                   Tensor::from_data({1, n}, valid));
    double sum = 0;
    int64_t best_dot = -1, best_w = -1;
    for (int64_t i = 0; i < n; ++i) {
      CHECK(w.data()[i] >= 0.0f);
      if (valid[i] == 0) CHECK(w.data()[i] == 0.0f);
      sum += w.data()[i];
      if (valid[i] > 0 && (best_dot < 0 || dots[i] > dots[best_dot])) best_dot = i;
      if (valid[i] > 0 && (best_w < 0 || w.data()[i] > w.data()[best_w])) best_w = i;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(best_w == best_dot);
  }
}

TEST_CASE("a row with no valid views is a contract error") {
  RadianceNet net(tiny_config(), "c", 1);
  Tensor dots = Tensor::from_data({2, 2}, {0.5f, 0.2f, 0.1f, 0.9f});
  Tensor valid = Tensor::from_data({2, 2}, {1.0f, 1.0f, 0.0f, 0.0f});
  CHECK_THROWS_WITH_AS(net.pooling_weights(dots, valid), doctest::Contains("sample 1"),
                       ContractError);
}

TEST_CASE("aggregation is invariant to view order") {
  RadianceConfig cfg = tiny_config();
  RadianceNetT<double> net(cfg, "c", 2);
  SampleBatchT<double> b = random_batch<double>(3, 5, cfg.d, 10);
  const std::vector<int64_t> perm = {3, 0, 4, 1, 2};

  AggOutT<double> a = net.aggregate(b.feats, b.dots, b.valid);
  AggOutT<double> p = net.aggregate(permute_views(b.feats, perm),
                                    permute_views(b.dots, perm), b.valid);
  REQUIRE(a.f_sigma.shape() == p.f_sigma.shape());
  for (int64_t i = 0; i < a.f_sigma.size(); ++i)
    CHECK(a.f_sigma.data()[i] == doctest::Approx(p.f_sigma.data()[i]).epsilon(1e-10));
}

TEST_CASE("single-view aggregation has zero variance and finite output") {
  RadianceConfig cfg = tiny_config();
  RadianceNet net(cfg, "c", 2);
  SampleBatch b = random_batch<float>(4, 1, cfg.d, 11);
  AggOutT<float> out = net.aggregate(b.feats, b.dots, b.valid);
  for (int64_t i = 0; i < out.v_w.size(); ++i)
    CHECK(std::abs(out.v_w.data()[i]) < 1e-6f);
  for (int64_t i = 0; i < out.f_sigma.size(); ++i)
    REQUIRE(std::isfinite(out.f_sigma.data()[i]));
  for (int64_t i = 0; i < out.w.size(); ++i) {
    CHECK(out.w.data()[i] >= 0.0f);
    CHECK(out.w.data()[i] <= 1.0f);
  }
}

TEST_CASE("duplicating every view leaves the density feature unchanged") {
  RadianceConfig cfg = tiny_config();
  RadianceNet net(cfg, "c", 3);
  const int64_t m = 3, n = 4;
  SampleBatch b = random_batch<float>(m, n, cfg.d, 12);

  auto dup = [&](const Tensor& t) {
    const int64_t tail = t.size() / (m * n);
    std::vector<float> out(static_cast<size_t>(t.size()) * 2);
    for (int64_t k = 0; k < m; ++k)
      for (int64_t i = 0; i < 2 * n; ++i)
        std::memcpy(&out[(k * 2 * n + i) * tail],
                    &t.data()[(k * n + i % n) * tail], sizeof(float) * tail);
    Shape s = t.shape();
    s[1] *= 2;
    return Tensor::from_data(s, std::move(out));
  };

  AggOutT<float> a = net.aggregate(b.feats, b.dots, b.valid);
  AggOutT<float> d = net.aggregate(dup(b.feats), dup(b.dots), dup(b.valid));
  for (int64_t i = 0; i < a.f_sigma.size(); ++i)
    CHECK(std::abs(a.f_sigma.data()[i] - d.f_sigma.data()[i]) < 1e-5f);
}

TEST_CASE("ray transformer handles a single sample") {
  RadianceConfig cfg = tiny_config();
  RadianceNet net(cfg, "c", 4);
  Tensor sig = net.ray_transformer(rand_tensor<float>({1, cfg.d_sigma}, 13));
  REQUIRE(sig.shape() == Shape{1});
  CHECK(sig.data()[0] >= 0.0f);
  CHECK(std::isfinite(sig.data()[0]));
}

TEST_CASE("attention rows are probability distributions") {
  RadianceConfig cfg = tiny_config();
  RadianceNet net(cfg, "c", 5);
  Tensor attn;
  net.ray_transformer(rand_tensor<float>({7, cfg.d_sigma}, 14), &attn);
  REQUIRE(attn.shape() == Shape{cfg.num_heads, 7, 7});
  for (int64_t h = 0; h < cfg.num_heads; ++h)
    for (int64_t r = 0; r < 7; ++r) {
      double s = 0;
      for (int64_t c = 0; c < 7; ++c) s += attn.data()[(h * 7 + r) * 7 + c];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("without positional encoding the transformer is permutation equivariant") {
  RadianceConfig cfg = tiny_config();
  cfg.transformer_use_pe = false;
  RadianceNetT<double> net(cfg, "c", 6);
  TensorD f = rand_tensor<double>({6, cfg.d_sigma}, 15);

  const std::vector<int64_t> perm = {4, 2, 0, 5, 1, 3};
  std::vector<double> pv(f.size());
  for (int64_t k = 0; k < 6; ++k)
    std::memcpy(&pv[k * cfg.d_sigma], &f.data()[perm[k] * cfg.d_sigma],
                sizeof(double) * cfg.d_sigma);
  TensorD fp = TensorD::from_data(f.shape(), std::move(pv));

  TensorD sig = net.ray_transformer(f);
  TensorD sig_p = net.ray_transformer(fp);
  for (int64_t k = 0; k < 6; ++k)
    CHECK(sig_p.data()[k] == doctest::Approx(sig.data()[perm[k]]).epsilon(1e-10));
}

TEST_CASE("with positional encoding the order matters") {
  RadianceConfig cfg = tiny_config();
  RadianceNet net(cfg, "c", 6);
  Tensor f = rand_tensor<float>({6, cfg.d_sigma}, 15);
  std::vector<float> rv(f.size());
  for (int64_t k = 0; k < 6; ++k)
    std::memcpy(&rv[k * cfg.d_sigma], &f.data()[(5 - k) * cfg.d_sigma],
                sizeof(float) * cfg.d_sigma);
  Tensor sig = net.ray_transformer(f);
  Tensor sig_r = net.ray_transformer(Tensor::from_data(f.shape(), std::move(rv)));
  double diff = 0;
  for (int64_t k = 0; k < 6; ++k)
    diff = std::max(diff, std::abs(static_cast<double>(sig.data()[5 - k]) -
                                   sig_r.data()[k]));
  CHECK(diff > 1e-6);
}

TEST_CASE("single-view blending returns that color exactly") {
  RadianceConfig cfg = tiny_config();
  RadianceNet net(cfg, "c", 7);
  SampleBatch b = random_batch<float>(3, 1, cfg.d, 16);
  AggOutT<float> agg = net.aggregate(b.feats, b.dots, b.valid);
  BlendOutT<float> out = net.blend_color(agg.fprime, b.ddir, b.colors, b.valid);
  for (int64_t i = 0; i < out.color.size(); ++i)
    CHECK(out.color.data()[i] == b.colors.data()[i]);
}

TEST_CASE("identical views blend symmetrically") {
  RadianceConfig cfg = tiny_config();
  RadianceNet net(cfg, "c", 8);
  // Same features and directions, different colors: logits tie, softmax 0.5.
  Tensor fprime = Tensor::zeros({1, 2, cfg.d});
  Tensor ddir = Tensor::zeros({1, 2, 3});
  Tensor colors = Tensor::from_data({1, 2, 3}, {1, 0, 0, 0, 1, 0});
  BlendOutT<float> out = net.blend_color(fprime, ddir, colors, Tensor::full({1, 2}, 1.0f));
  CHECK(out.weights.data()[0] == 0.5f);
  CHECK(out.weights.data()[1] == 0.5f);
  CHECK(out.color.data()[0] == 0.5f);
  CHECK(out.color.data()[1] == 0.5f);
  CHECK(out.color.data()[2] == 0.0f);
}

TEST_CASE("blended colors stay inside the valid-view envelope") {
  RadianceConfig cfg = tiny_config();
  RadianceNet net(cfg, "c", 9);
  Rng rng = keyed_rng(0x636f6e76ULL, 1);
  int samples = 0;
  for (int batch = 0; batch < 500 && samples < 10000; ++batch) {
    const int64_t m = 20, n = 2 + rng.uniform_int(5);
    SampleBatch b = random_batch<float>(m, n, cfg.d, 1000 + batch);
    std::vector<float> mask(static_cast<size_t>(m) * n);
    for (int64_t k = 0; k < m; ++k) {
      int64_t nv = 0;
      for (int64_t i = 0; i < n; ++i) {
        mask[k * n + i] = rng.uniform() < 0.7 ? 1.0f : 0.0f;
        nv += mask[k * n + i] > 0;
      }
      if (nv == 0) mask[k * n + rng.uniform_int(n)] = 1.0f;
    }
    b.valid = Tensor::from_data({m, n}, mask);
    AggOutT<float> agg = net.aggregate(b.feats, b.dots, b.valid);
    BlendOutT<float> out = net.blend_color(agg.fprime, b.ddir, b.colors, b.valid);
    for (int64_t k = 0; k < m; ++k, ++samples)
      for (int c = 0; c < 3; ++c) {
        float lo = 2, hi = -1;
        for (int64_t i = 0; i < n; ++i)
          if (mask[k * n + i] > 0) {
            lo = std::min(lo, b.colors.data()[(k * n + i) * 3 + c]);
            hi = std::max(hi, b.colors.data()[(k * n + i) * 3 + c]);
          }
        REQUIRE(out.color.data()[k * 3 + c] >= lo - 1e-6f);
        REQUIRE(out.color.data()[k * 3 + c] <= hi + 1e-6f);
      }
  }
  CHECK(samples == 10000);
}

TEST_CASE("predict_ray masks samples with no valid views") {
  RadianceConfig cfg = tiny_config();
  RadianceNet net(cfg, "c", 10);
  SampleBatch b = random_batch<float>(5, 3, cfg.d, 20);
  std::vector<float> mask(15, 1.0f);
  for (int64_t i = 0; i < 3; ++i) mask[1 * 3 + i] = 0;  // sample 1 fully invalid
  for (int64_t i = 0; i < 3; ++i) mask[4 * 3 + i] = 0;  // sample 4 fully invalid
  b.valid = Tensor::from_data({5, 3}, mask);

  RayPrediction pred = net.predict_ray(b);
  REQUIRE(pred.sigma.shape() == Shape{5});
  REQUIRE(pred.color.shape() == Shape{5, 3});
  CHECK(pred.sigma.data()[1] == 0.0f);
  CHECK(pred.sigma.data()[4] == 0.0f);
  for (int c = 0; c < 3; ++c) {
    CHECK(pred.color.data()[1 * 3 + c] == 0.0f);
    CHECK(pred.color.data()[4 * 3 + c] == 0.0f);
  }
  for (int64_t k : {0, 2, 3}) CHECK(pred.sigma.data()[k] > 0.0f);

  SampleBatch none = random_batch<float>(3, 2, cfg.d, 21);
  none.valid = Tensor::zeros({3, 2});
  RayPrediction empty = net.predict_ray(none);
  for (int64_t i = 0; i < empty.sigma.size(); ++i) CHECK(empty.sigma.data()[i] == 0.0f);
  for (int64_t i = 0; i < empty.color.size(); ++i) CHECK(empty.color.data()[i] == 0.0f);
}

TEST_CASE("predict_ray is invariant to source view order") {
  RadianceConfig cfg = tiny_config();
  RadianceNet net(cfg, "c", 11);
  SampleBatch b = random_batch<float>(6, 5, cfg.d, 22);
  const std::vector<int64_t> perm = {2, 4, 1, 0, 3};
  SampleBatch p{permute_views(b.feats, perm), permute_views(b.colors, perm),
                permute_views(b.ddir, perm), permute_views(b.dots, perm),
                permute_views(b.valid, perm)};
  RayPrediction a = net.predict_ray(b);
  RayPrediction q = net.predict_ray(p);
  for (int64_t i = 0; i < a.sigma.size(); ++i)
    CHECK(std::abs(a.sigma.data()[i] - q.sigma.data()[i]) <= 1e-5f);
  for (int64_t i = 0; i < a.color.size(); ++i)
    CHECK(std::abs(a.color.data()[i] - q.color.data()[i]) <= 1e-5f);
}

TEST_CASE("the same parameters accept any view count from 1 to 16") {
  RadianceConfig cfg = tiny_config();
  RadianceNet net(cfg, "c", 12);
  for (int64_t n = 1; n <= 16; ++n) {
    SampleBatch b = random_batch<float>(3, n, cfg.d, 100 + n);
    RayPrediction pred = net.predict_ray(b);
    REQUIRE(pred.sigma.shape() == Shape{3});
    for (int64_t i = 0; i < pred.sigma.size(); ++i) {
      CHECK(pred.sigma.data()[i] >= 0.0f);
      REQUIRE(std::isfinite(pred.sigma.data()[i]));
    }
  }
}

TEST_CASE("disabling the ray transformer changes the density function") {
  RadianceConfig cfg = tiny_config();
  RadianceNet full(cfg, "c", 13);
  cfg.ablate_ray_transformer = true;
  RadianceNet ablated(cfg, "c", 13);
  SampleBatch b = random_batch<float>(5, 4, cfg.d, 30);
  RayPrediction a = full.predict_ray(b);
  RayPrediction c = ablated.predict_ray(b);
  double diff = 0;
  for (int64_t i = 0; i < a.sigma.size(); ++i)
    diff = std::max(diff, std::abs(static_cast<double>(a.sigma.data()[i]) -
                                   c.sigma.data()[i]));
  CHECK(diff > 1e-7);
  CHECK(config_fingerprint(full.config()) != config_fingerprint(ablated.config()));
}

TEST_CASE("view-direction ablation uses uniform pooling and no ddir input") {
  RadianceConfig cfg = tiny_config();
  cfg.ablate_view_directions = true;
  RadianceNet net(cfg, "c", 14);
  Tensor dots = Tensor::from_data({1, 3}, {0.9f, -0.2f, 0.5f});
  Tensor w = net.pooling_weights(dots, Tensor::full({1, 3}, 1.0f));
  for (int64_t i = 0; i < 3; ++i)
    CHECK(w.data()[i] == doctest::Approx(1.0 / 3).epsilon(1e-6));
  SampleBatch b = random_batch<float>(4, 3, cfg.d, 31);
  RayPrediction pred = net.predict_ray(b);
  REQUIRE(pred.sigma.shape() == Shape{4});
}

TEST_CASE("parameter count sits within 20 percent of 0.04M") {
  RadianceNet net(RadianceConfig{}, "coarse", 1);
  const int64_t n = net.num_params();
  CHECK(n == 37748);
  CHECK(n >= 32000);
  CHECK(n <= 48000);
}

TEST_CASE("gradients through predict_ray match finite differences") {
  RadianceConfig cfg = tiny_config();
  RadianceNetT<double> net(cfg, "c", 15);
  SampleBatchT<double> b = random_batch<double>(4, 3, cfg.d, 40, true);
  // One invalid view exercises the masking; fully-invalid rows would drop
  // parts of the graph from the loss, which is legal but less thorough.
  std::vector<double> mask(12, 1.0);
  mask[2 * 3 + 1] = 0.0;
  b.valid = TensorD::from_data({4, 3}, mask);

  auto probe = [&]() {
    RayPredictionT<double> pred = net.predict_ray(b);
    TensorD all = concat(std::vector<TensorD>{reshape(pred.sigma, {4, 1}),
                                              pred.color},
                         1);
    std::vector<double> proj(all.size());
    Rng rng = keyed_rng(0x70726a32ULL, 1);
    for (double& v : proj) v = rng.uniform(0.25, 1.75);
    return sum_all(mul(all, TensorD::from_data(all.shape(), proj)));
  };

  backward(probe());

  auto params = net.named_params();
  params.emplace_back("input.feats", b.feats);
  Rng pick = keyed_rng(0x66647261ULL, 1);
  const double h = 1e-5;
  for (int trial = 0; trial < 80; ++trial) {
    auto& [name, p] = params[pick.uniform_int(static_cast<int64_t>(params.size()))];
    const int64_t i = pick.uniform_int(p.size());
    REQUIRE(p.has_grad());
    const double saved = p.data()[i];
    double fd;
    {
      NoGradGuard off;
      p.data()[i] = saved + h;
      const double up = probe().item();
      p.data()[i] = saved - h;
      const double dn = probe().item();
      p.data()[i] = saved;
      fd = (up - dn) / (2 * h);
    }
    const double an = p.grad()[i];
    const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
    if (rel >= 1e-3) MESSAGE("param ", name, " index ", i, " an ", an, " fd ", fd);
    CHECK(rel < 1e-3);
  }
}

TEST_CASE("predict_rays matches per-ray predictions bitwise, invalid samples included") {
  RadianceConfig cfg = tiny_config();
  RadianceNet net(cfg, "b", 9);
  const int64_t n_rays = 4, m = 5, n = 3;
  SampleBatch all = random_batch<float>(n_rays * m, n, cfg.d, 500);
  // ray 1 gets a dead sample (all views invalid), ray 3 a partial one
  for (int64_t i = 0; i < n; ++i) all.valid.data()[(1 * m + 2) * n + i] = 0;
  all.valid.data()[(3 * m + 0) * n + 1] = 0;

  RayPrediction batched = net.predict_rays(all, n_rays);
  REQUIRE(batched.sigma.shape() == Shape{n_rays * m});
  REQUIRE(batched.color.shape() == Shape{n_rays * m, 3});

  auto cut = [&](const Tensor& t, int64_t r) { return narrow(t, 0, r * m, m); };
  for (int64_t r = 0; r < n_rays; ++r) {
    SampleBatch one{cut(all.feats, r), cut(all.colors, r), cut(all.ddir, r),
                    cut(all.dots, r), cut(all.valid, r)};
    RayPrediction want = net.predict_ray(one);
    CHECK(std::memcmp(batched.sigma.data() + r * m, want.sigma.data(),
                      sizeof(float) * m) == 0);
    CHECK(std::memcmp(batched.color.data() + r * m * 3, want.color.data(),
                      sizeof(float) * m * 3) == 0);
  }
}

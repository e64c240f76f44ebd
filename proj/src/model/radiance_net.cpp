#include "model/radiance_net.h"

#include <cmath>

#include "core/error.h"
#include "core/rng.h"

namespace nvs {

uint64_t config_fingerprint(const RadianceConfig& cfg) {
  uint64_t h = hash_mix(0x6962726eULL, cfg.d);
  h = hash_mix(h, cfg.d_sigma);
  h = hash_mix(h, cfg.num_heads);
  h = hash_mix(h, cfg.transformer_depth);
  h = hash_mix(h, cfg.transformer_use_pe);
  h = hash_mix(h, cfg.ablate_ray_transformer);
  h = hash_mix(h, cfg.ablate_view_directions);
  h = hash_mix(h, cfg.agg_hidden);
  h = hash_mix(h, cfg.fsigma_hidden);
  h = hash_mix(h, cfg.color_hidden);
  h = hash_mix(h, cfg.head_hidden);
  return h;
}

namespace {

template <class S>
TensorT<S> mlp2(const TensorT<S>& x, const TensorT<S>& w1, const TensorT<S>& b1,
                const TensorT<S>& w2, const TensorT<S>& b2) {
  return linear(elu(linear(x, w1, b1)), w2, b2);
}

// Rows of `valid` that are entirely zero violate the >= 1 valid-view
// precondition of the pooling stages.
template <class S>
void check_any_valid(const TensorT<S>& valid) {
  const int64_t m = valid.dim(0), n = valid.dim(1);
  for (int64_t k = 0; k < m; ++k) {
    S row = 0;
    for (int64_t i = 0; i < n; ++i) row += valid.data()[k * n + i];
    if (row <= 0)
      throw ContractError("pooling: sample " + std::to_string(k) +
                          " has no valid source views");
  }
}

}  // namespace

template <class S>
RadianceNetT<S>::RadianceNetT(const RadianceConfig& cfg, const std::string& prefix,
                              uint64_t seed)
    : cfg_(cfg), prefix_(prefix) {
  if (cfg.d_sigma % (2 * cfg.num_heads) != 0)
    throw ContractError("radiance net: d_sigma must split across heads and PE pairs");
  uint64_t tag = 0;
  auto mk = [&](int64_t fan_in, int64_t fan_out) {
    Rng rng = keyed_rng(seed, 0x726164ULL, ++tag);
    return xavier_uniform<S>(fan_in, fan_out, rng);
  };
  auto zeros = [](int64_t n) { return TensorT<S>::zeros({n}, true); };

  s_ = TensorT<S>::from_data({1}, {static_cast<S>(1)}, true);

  const int d = cfg.d;
  agg1_w_ = mk(3 * d, cfg.agg_hidden);
  agg1_b_ = zeros(cfg.agg_hidden);
  agg2_w_ = mk(cfg.agg_hidden, cfg.agg_hidden);
  agg2_b_ = zeros(cfg.agg_hidden);
  agg3_w_ = mk(cfg.agg_hidden, d + 1);
  agg3_b_ = zeros(d + 1);

  fs1_w_ = mk(2 * d, cfg.fsigma_hidden);
  fs1_b_ = zeros(cfg.fsigma_hidden);
  fs2_w_ = mk(cfg.fsigma_hidden, cfg.d_sigma);
  fs2_b_ = zeros(cfg.d_sigma);

  attn_.resize(cfg.transformer_depth);
  for (Attn& a : attn_) {
    a.wq = mk(cfg.d_sigma, cfg.d_sigma);
    a.bq = zeros(cfg.d_sigma);
    a.wk = mk(cfg.d_sigma, cfg.d_sigma);
    a.bk = zeros(cfg.d_sigma);
    a.wv = mk(cfg.d_sigma, cfg.d_sigma);
    a.bv = zeros(cfg.d_sigma);
    a.wo = mk(cfg.d_sigma, cfg.d_sigma);
    a.bo = zeros(cfg.d_sigma);
  }
  head1_w_ = mk(cfg.d_sigma, cfg.head_hidden);
  head1_b_ = zeros(cfg.head_hidden);
  head2_w_ = mk(cfg.head_hidden, 1);
  head2_b_ = zeros(1);

  const int color_in = cfg.ablate_view_directions ? d : d + 3;
  col1_w_ = mk(color_in, cfg.color_hidden);
  col1_b_ = zeros(cfg.color_hidden);
  col2_w_ = mk(cfg.color_hidden, cfg.color_hidden);
  col2_b_ = zeros(cfg.color_hidden);
  col3_w_ = mk(cfg.color_hidden, 1);
  col3_b_ = zeros(1);
}

template <class S>
TensorT<S> RadianceNetT<S>::pooling_weights(const TensorT<S>& dots,
                                            const TensorT<S>& valid) const {
  if (dots.shape() != valid.shape() || dots.rank() != 2)
    throw ShapeError("pooling_weights: dots and valid must both be [M, N]");
  check_any_valid(valid);
  const TensorT<S> n_valid = sum(valid, 1, true);  // [M, 1], constant

  if (cfg_.ablate_view_directions) return div(valid, n_valid);

  // e_i = exp(s (dot_i - 1)); w~_i = max(0, e_i - min over valid e_j).
  TensorT<S> e = exp(mul(s_, add_scalar(dots, static_cast<S>(-1))));
  TensorT<S> big = TensorT<S>::full(valid.shape(), static_cast<S>(1e30));
  TensorT<S> e_min = reduce_min(where(valid, e, big), 1, true);  // [M, 1]
  TensorT<S> wt = mul(relu(sub(e, e_min)), valid);
  TensorT<S> z = sum(wt, 1, true);  // [M, 1]

  // Degenerate rows (all valid dots equal) fall back to uniform weights.
  TensorT<S> z_ok = cmp_gt(z, static_cast<S>(1e-12));          // [M, 1] constant
  TensorT<S> z_bad = sub(TensorT<S>::full(z.shape(), 1), z_ok);  // constant
  TensorT<S> uniform = div(valid, n_valid);
  return add(mul(uniform, z_bad), mul(div(wt, add(z, z_bad)), z_ok));
}

template <class S>
AggOutT<S> RadianceNetT<S>::aggregate(const TensorT<S>& feats, const TensorT<S>& dots,
                                      const TensorT<S>& valid) const {
  const int64_t m = feats.dim(0), n = feats.dim(1), d = feats.dim(2);
  if (d != cfg_.d)
    throw ShapeError("aggregate: feature dim " + std::to_string(d) +
                     " does not match configured d " + std::to_string(cfg_.d));
  AggOutT<S> out;
  TensorT<S> wf = reshape(pooling_weights(dots, valid), {m, n, 1});
  out.mu_w = weighted_mean(feats, wf, 1, true);  // [M, 1, d]
  out.v_w = weighted_var(feats, wf, 1, true);

  TensorT<S> bcast = TensorT<S>::zeros({m, n, d});
  TensorT<S> mu_b = add(out.mu_w, bcast);
  TensorT<S> v_b = add(out.v_w, bcast);
  TensorT<S> cat = concat(std::vector<TensorT<S>>{feats, mu_b, v_b}, 2);
  TensorT<S> flat = reshape(cat, {m * n, 3 * d});
  TensorT<S> hidden = elu(linear(elu(linear(flat, agg1_w_, agg1_b_)), agg2_w_, agg2_b_));
  TensorT<S> head = linear(hidden, agg3_w_, agg3_b_);  // [M*N, d+1]

  out.fprime = reshape(narrow(head, 1, 0, d), {m, n, d});
  out.w = reshape(sigmoid(narrow(head, 1, d, 1)), {m, n});

  // Learned scalars pool f', with invalid views excluded.
  TensorT<S> w_masked = reshape(mul(out.w, valid), {m, n, 1});
  TensorT<S> pooled_mu = weighted_mean(out.fprime, w_masked, 1);  // [M, d]
  TensorT<S> pooled_v = weighted_var(out.fprime, w_masked, 1);
  TensorT<S> stats = concat(std::vector<TensorT<S>>{pooled_mu, pooled_v}, 1);
  out.f_sigma = mlp2(stats, fs1_w_, fs1_b_, fs2_w_, fs2_b_);  // [M, d_sigma]
  return out;
}

template <class S>
TensorT<S> RadianceNetT<S>::ray_transformer(const TensorT<S>& f_sigma,
                                            TensorT<S>* attn_out) const {
  return transformer_batch(f_sigma, 1, attn_out);
}

template <class S>
TensorT<S> RadianceNetT<S>::transformer_batch(const TensorT<S>& f_sigma,
                                              int64_t n_rays,
                                              TensorT<S>* attn_out) const {
  const int64_t rows = f_sigma.dim(0), ds = f_sigma.dim(1);
  if (ds != cfg_.d_sigma)
    throw ShapeError("ray_transformer: feature dim mismatch");
  if (n_rays < 1 || rows % n_rays != 0)
    throw ShapeError("ray_transformer: rows do not split into rays");
  const int64_t m = rows / n_rays;

  if (cfg_.ablate_ray_transformer) {
    TensorT<S> sig = density_activation(
        mlp2(f_sigma, head1_w_, head1_b_, head2_w_, head2_b_));
    return reshape(sig, {rows});
  }

  TensorT<S> x = f_sigma;
  if (cfg_.transformer_use_pe) {
    std::vector<S> pe(static_cast<size_t>(rows) * ds);
    for (int64_t k = 0; k < rows; ++k)
      for (int64_t c = 0; c < ds; ++c) {
        const double freq = std::pow(10000.0, -2.0 * (c / 2) / ds);
        const double ang = static_cast<double>(k % m) * freq;
        pe[k * ds + c] = static_cast<S>(c % 2 == 0 ? std::sin(ang) : std::cos(ang));
      }
    x = add(x, TensorT<S>::from_data({rows, ds}, std::move(pe)));
  }

  const int heads = cfg_.num_heads;
  const int64_t hd = ds / heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));
  for (const Attn& a : attn_) {
    auto split = [&](const TensorT<S>& t) {
      // [R*M, ds] -> [R*heads, M, hd]
      return reshape(permute(reshape(t, {n_rays, m, heads, hd}), {0, 2, 1, 3}),
                     {n_rays * heads, m, hd});
    };
    TensorT<S> q = split(linear(x, a.wq, a.bq));
    TensorT<S> k = split(linear(x, a.wk, a.bk));
    TensorT<S> v = split(linear(x, a.wv, a.bv));
    TensorT<S> logits = mul_scalar(bmm(q, k, true), scale);  // [R*heads, M, M]
    TensorT<S> attn = softmax(logits, 2);
    if (attn_out) *attn_out = attn;
    TensorT<S> ctx = bmm(attn, v);  // [R*heads, M, hd]
    TensorT<S> merged = reshape(
        permute(reshape(ctx, {n_rays, heads, m, hd}), {0, 2, 1, 3}), {rows, ds});
    x = add(x, linear(merged, a.wo, a.bo));  // residual
  }
  TensorT<S> sig = density_activation(mlp2(x, head1_w_, head1_b_, head2_w_, head2_b_));
  return reshape(sig, {rows});
}

template <class S>
BlendOutT<S> RadianceNetT<S>::blend_color(const TensorT<S>& fprime,
                                          const TensorT<S>& ddir,
                                          const TensorT<S>& colors,
                                          const TensorT<S>& valid) const {
  const int64_t m = fprime.dim(0), n = fprime.dim(1), d = fprime.dim(2);
  check_any_valid(valid);
  TensorT<S> in = cfg_.ablate_view_directions
                      ? fprime
                      : concat(std::vector<TensorT<S>>{fprime, ddir}, 2);
  TensorT<S> flat = reshape(in, {m * n, in.dim(2)});
  TensorT<S> h = elu(linear(elu(linear(flat, col1_w_, col1_b_)), col2_w_, col2_b_));
  TensorT<S> logits = reshape(linear(h, col3_w_, col3_b_), {m, n});

  TensorT<S> neg_inf = TensorT<S>::full({m, n}, static_cast<S>(-1e30));
  TensorT<S> masked = where(valid, logits, neg_inf);
  BlendOutT<S> out;
  out.weights = softmax(masked, 1);
  TensorT<S> w3 = reshape(out.weights, {m, n, 1});
  out.color = sum(mul(colors, w3), 1);  // [M, 3]
  (void)d;
  return out;
}

template <class S>
RayPredictionT<S> RadianceNetT<S>::predict_ray(const SampleBatchT<S>& batch) const {
  const int64_t m = batch.feats.dim(0), n = batch.feats.dim(1);
  if (batch.valid.shape() != Shape{m, n})
    throw ShapeError("predict_ray: valid mask must be [M, N]");

  std::vector<int64_t> keep;
  keep.reserve(m);
  for (int64_t k = 0; k < m; ++k) {
    S row = 0;
    for (int64_t i = 0; i < n; ++i) row += batch.valid.data()[k * n + i];
    if (row > 0) keep.push_back(k);
  }

  if (keep.empty()) {
    RayPredictionT<S> out;
    out.sigma = TensorT<S>::zeros({m});
    out.color = TensorT<S>::zeros({m, 3});
    return out;
  }

  auto compact = [&](const TensorT<S>& t) {
    if (static_cast<int64_t>(keep.size()) == m) return t;
    std::vector<TensorT<S>> runs;
    int64_t i = 0;
    while (i < static_cast<int64_t>(keep.size())) {
      int64_t j = i;
      while (j + 1 < static_cast<int64_t>(keep.size()) &&
             keep[j + 1] == keep[j] + 1)
        ++j;
      runs.push_back(narrow(t, 0, keep[i], j - i + 1));
      i = j + 1;
    }
    return runs.size() == 1 ? runs[0] : concat(runs, 0);
  };

  SampleBatchT<S> live{compact(batch.feats), compact(batch.colors),
                       compact(batch.ddir), compact(batch.dots),
                       compact(batch.valid)};
  AggOutT<S> agg = aggregate(live.feats, live.dots, live.valid);
  TensorT<S> sigma = ray_transformer(agg.f_sigma);
  BlendOutT<S> blend = blend_color(agg.fprime, live.ddir, live.colors, live.valid);

  if (static_cast<int64_t>(keep.size()) == m)
    return {sigma, blend.color};

  // Scatter kept rows back; dropped samples stay at zero.
  std::vector<TensorT<S>> sig_rows, col_rows;
  int64_t pos = 0;
  for (int64_t k = 0; k < m; ++k) {
    if (pos < static_cast<int64_t>(keep.size()) && keep[pos] == k) {
      sig_rows.push_back(narrow(sigma, 0, pos, 1));
      col_rows.push_back(narrow(blend.color, 0, pos, 1));
      ++pos;
    } else {
      sig_rows.push_back(TensorT<S>::zeros({1}));
      col_rows.push_back(TensorT<S>::zeros({1, 3}));
    }
  }
  return {concat(sig_rows, 0), concat(col_rows, 0)};
}

template <class S>
RayPredictionT<S> RadianceNetT<S>::predict_dense(const SampleBatchT<S>& batch,
                                                 int64_t n_rays) const {
  AggOutT<S> agg = aggregate(batch.feats, batch.dots, batch.valid);
  TensorT<S> sigma = transformer_batch(agg.f_sigma, n_rays, nullptr);
  BlendOutT<S> blend =
      blend_color(agg.fprime, batch.ddir, batch.colors, batch.valid);
  return {sigma, blend.color};
}

template <class S>
RayPredictionT<S> RadianceNetT<S>::predict_rays(const SampleBatchT<S>& batch,
                                                int64_t n_rays) const {
  const int64_t rows = batch.feats.dim(0), n = batch.feats.dim(1);
  if (n_rays < 1 || rows % n_rays != 0)
    throw ShapeError("predict_rays: rows do not split into rays");
  if (batch.valid.shape() != Shape{rows, n})
    throw ShapeError("predict_rays: valid mask must be [R*M, N]");
  const int64_t m = rows / n_rays;

  // A ray with an all-invalid sample needs the per-ray path so that sample
  // stays out of its transformer sequence.
  std::vector<uint8_t> dense(static_cast<size_t>(n_rays), 1);
  bool all_dense = true;
  for (int64_t r = 0; r < n_rays; ++r) {
    for (int64_t k = 0; k < m; ++k) {
      S row = 0;
      for (int64_t i = 0; i < n; ++i)
        row += batch.valid.data()[(r * m + k) * n + i];
      if (row <= 0) {
        dense[static_cast<size_t>(r)] = 0;
        all_dense = false;
        break;
      }
    }
  }
  if (all_dense) return predict_dense(batch, n_rays);

  auto slice = [&](int64_t ray0, int64_t count) {
    auto cut = [&](const TensorT<S>& t) {
      return narrow(t, 0, ray0 * m, count * m);
    };
    return SampleBatchT<S>{cut(batch.feats), cut(batch.colors), cut(batch.ddir),
                           cut(batch.dots), cut(batch.valid)};
  };

  std::vector<TensorT<S>> sig_parts, col_parts;
  int64_t r = 0;
  while (r < n_rays) {
    if (dense[static_cast<size_t>(r)]) {
      int64_t j = r;
      while (j + 1 < n_rays && dense[static_cast<size_t>(j + 1)]) ++j;
      RayPredictionT<S> p = predict_dense(slice(r, j - r + 1), j - r + 1);
      sig_parts.push_back(p.sigma);
      col_parts.push_back(p.color);
      r = j + 1;
    } else {
      RayPredictionT<S> p = predict_ray(slice(r, 1));
      sig_parts.push_back(p.sigma);
      col_parts.push_back(p.color);
      ++r;
    }
  }
  if (sig_parts.size() == 1) return {sig_parts[0], col_parts[0]};
  return {concat(sig_parts, 0), concat(col_parts, 0)};
}

template <class S>
std::vector<std::pair<std::string, TensorT<S>>> RadianceNetT<S>::named_params() {
  std::vector<std::pair<std::string, TensorT<S>>> out = {
      {prefix_ + ".pool.s", s_},
      {prefix_ + ".agg1.w", agg1_w_}, {prefix_ + ".agg1.b", agg1_b_},
      {prefix_ + ".agg2.w", agg2_w_}, {prefix_ + ".agg2.b", agg2_b_},
      {prefix_ + ".agg3.w", agg3_w_}, {prefix_ + ".agg3.b", agg3_b_},
      {prefix_ + ".fs1.w", fs1_w_},   {prefix_ + ".fs1.b", fs1_b_},
      {prefix_ + ".fs2.w", fs2_w_},   {prefix_ + ".fs2.b", fs2_b_}};
  for (size_t i = 0; i < attn_.size(); ++i) {
    const std::string p = prefix_ + ".attn" + std::to_string(i);
    out.emplace_back(p + ".wq", attn_[i].wq);
    out.emplace_back(p + ".bq", attn_[i].bq);
    out.emplace_back(p + ".wk", attn_[i].wk);
    out.emplace_back(p + ".bk", attn_[i].bk);
    out.emplace_back(p + ".wv", attn_[i].wv);
    out.emplace_back(p + ".bv", attn_[i].bv);
    out.emplace_back(p + ".wo", attn_[i].wo);
    out.emplace_back(p + ".bo", attn_[i].bo);
  }
  out.emplace_back(prefix_ + ".head1.w", head1_w_);
  out.emplace_back(prefix_ + ".head1.b", head1_b_);
  out.emplace_back(prefix_ + ".head2.w", head2_w_);
  out.emplace_back(prefix_ + ".head2.b", head2_b_);
  out.emplace_back(prefix_ + ".col1.w", col1_w_);
  out.emplace_back(prefix_ + ".col1.b", col1_b_);
  out.emplace_back(prefix_ + ".col2.w", col2_w_);
  out.emplace_back(prefix_ + ".col2.b", col2_b_);
  out.emplace_back(prefix_ + ".col3.w", col3_w_);
  out.emplace_back(prefix_ + ".col3.b", col3_b_);
  return out;
}

template <class S>
int64_t RadianceNetT<S>::num_params() const {
  int64_t total = 0;
  for (const auto& p : const_cast<RadianceNetT<S>*>(this)->named_params())
    total += p.second.size();
  return total;
}

template class RadianceNetT<float>;
template class RadianceNetT<double>;

}  // namespace nvs

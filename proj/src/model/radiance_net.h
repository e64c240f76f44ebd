#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "core/tensor.h"

namespace nvs {

struct RadianceConfig {
  int d = 32;        // per-view feature dim
  int d_sigma = 16;  // density feature dim
  int num_heads = 4;
  int transformer_depth = 1;
  bool transformer_use_pe = true;
  bool ablate_ray_transformer = false;
  bool ablate_view_directions = false;
  int agg_hidden = 64;
  int fsigma_hidden = 256;  // sized to keep the parameter count near 0.04M
  int color_hidden = 32;
  int head_hidden = 64;
};

uint64_t config_fingerprint(const RadianceConfig& cfg);

// One ray's worth of per-sample, per-view inputs. feats may carry a graph
// (it comes from the feature net during training); the rest are constants.
template <class S>
struct SampleBatchT {
  TensorT<S> feats;   // [M, N, d]
  TensorT<S> colors;  // [M, N, 3]
  TensorT<S> ddir;    // [M, N, 3] direction differences d - d_i
  TensorT<S> dots;    // [M, N] direction dots d . d_i
  TensorT<S> valid;   // [M, N] 0/1 mask
};
using SampleBatch = SampleBatchT<float>;

template <class S>
struct AggOutT {
  TensorT<S> fprime;        // [M, N, d] multi-view aware features
  TensorT<S> w;             // [M, N] learned pooling scalars in [0,1]
  TensorT<S> f_sigma;       // [M, d_sigma]
  TensorT<S> mu_w, v_w;     // [M, 1, d] Eq.-1 weighted stats
};

template <class S>
struct BlendOutT {
  TensorT<S> color;    // [M, 3]
  TensorT<S> weights;  // [M, N] soft-argmax weights, invalid views at 0
};

template <class S>
struct RayPredictionT {
  TensorT<S> sigma;  // [M] nonnegative
  TensorT<S> color;  // [M, 3]
};
using RayPrediction = RayPredictionT<float>;

// Per-sample multi-view aggregation, ray transformer and color blending.
// One instance per sample set (coarse and fine each get their own).
template <class S>
class RadianceNetT {
 public:
  RadianceNetT(const RadianceConfig& cfg, const std::string& prefix, uint64_t seed);

  // Eq.-1 pooling weights per sample row: rows sum to 1, invalid views get
  // 0, degenerate all-equal rows fall back to uniform over valid views.
  // A row with no valid views is a contract error.
  TensorT<S> pooling_weights(const TensorT<S>& dots, const TensorT<S>& valid) const;

  AggOutT<S> aggregate(const TensorT<S>& feats, const TensorT<S>& dots,
                       const TensorT<S>& valid) const;

  // f_sigma: [M, d_sigma] ordered near to far -> densities [M].
  TensorT<S> ray_transformer(const TensorT<S>& f_sigma,
                             TensorT<S>* attn_out = nullptr) const;

  BlendOutT<S> blend_color(const TensorT<S>& fprime, const TensorT<S>& ddir,
                           const TensorT<S>& colors, const TensorT<S>& valid) const;

  // Full per-ray pipeline. Samples with zero valid views are excluded from
  // the transformer sequence and come back with sigma = 0, color = 0.
  RayPredictionT<S> predict_ray(const SampleBatchT<S>& batch) const;

  // Batched pipeline over n_rays contiguous rays with equal sample counts
  // (rows = n_rays * M). Matches predict_ray per ray bitwise; rays that
  // contain an all-invalid sample are routed through the per-ray path so
  // the transformer sequence exclusions still apply.
  RayPredictionT<S> predict_rays(const SampleBatchT<S>& batch,
                                 int64_t n_rays) const;

  std::vector<std::pair<std::string, TensorT<S>>> named_params();
  int64_t num_params() const;
  const RadianceConfig& config() const { return cfg_; }
  TensorT<S> sharpness() const { return s_; }

 private:
  TensorT<S> transformer_batch(const TensorT<S>& f_sigma, int64_t n_rays,
                               TensorT<S>* attn_out) const;
  RayPredictionT<S> predict_dense(const SampleBatchT<S>& batch,
                                  int64_t n_rays) const;

  RadianceConfig cfg_;
  std::string prefix_;
  TensorT<S> s_;  // Eq.-1 sharpness, trainable
  TensorT<S> agg1_w_, agg1_b_, agg2_w_, agg2_b_, agg3_w_, agg3_b_;
  TensorT<S> fs1_w_, fs1_b_, fs2_w_, fs2_b_;
  struct Attn {
    TensorT<S> wq, bq, wk, bk, wv, bv, wo, bo;
  };
  std::vector<Attn> attn_;
  TensorT<S> head1_w_, head1_b_, head2_w_, head2_b_;
  TensorT<S> col1_w_, col1_b_, col2_w_, col2_b_, col3_w_, col3_b_;
};
using RadianceNet = RadianceNetT<float>;

}  // namespace nvs

#pragma once

#include <cstdint>
#include <vector>

#include "core/rng.h"
#include "core/tensor.h"
#include "geometry/geometry.h"
#include "model/model_set.h"
#include "scene/scene_io.h"

namespace nvs {

struct RenderConfig {
  int n_source_views = 10;
  int m_coarse = 64;
  int m_fine = 64;
  int chunk_size = 256;
  // Deterministic renders place coarse samples at disparity-bin midpoints
  // and ignore the salt; either way every stream is keyed by (seed, ray id,
  // pass), so results never depend on worker scheduling.
  bool deterministic = true;
  uint64_t seed = 0;
};

struct SourceViewData {
  int index = -1;
  Camera cam;
  Vec3 center;
  Vec3 forward;  // world-space optical axis
  Tensor image;  // [H, W, 3]
  FeatureMaps maps;
};

struct WorkingSet {
  std::vector<int> indices;
  std::vector<SourceViewData> views;
};

// Candidates are the 2n spatially nearest camera centers; of those, keep
// the n whose optical axes have the largest dot with the target's, ties
// falling to the lower view index. exclude_index drops the target itself
// when it is a scene member. Throws ContractError when n > available.
std::vector<int> select_view_indices(const Camera& target, const Scene& scene,
                                     int n, int exclude_index = -1);

// Caches per-view feature maps and image tensors for the given views. Under
// grad mode the maps carry the feature net's graph.
WorkingSet build_working_set(const Scene& scene, const std::vector<int>& indices,
                             const FeatureNet& net);

WorkingSet select_working_set(const Camera& target, const Scene& scene,
                              const FeatureNet& net, int n,
                              int exclude_index = -1);

struct CompositeOut {
  Tensor color;    // [R, 3]
  Tensor weights;  // [R, M] a_k = T_k (1 - exp(-sigma_k delta_k))
  Tensor alpha;    // [R] sum over k of a_k
};

// sigma [R, M] or [M], color [R, M, 3] or [M, 3], delta matching sigma.
// Differentiable in sigma and color; delta is treated as constant.
CompositeOut composite(const Tensor& sigma, const Tensor& color,
                       const Tensor& delta);

// Inverse-CDF draws from the piecewise-constant PDF over the coarse
// intervals, proportional to the interval weight + 1e-5; the last sample's
// weight folds into the final interval. All-zero weights fall back to
// uniform-disparity sampling over [front, back]. Output is sorted.
std::vector<double> sample_fine(const std::vector<double>& coarse_depths,
                                const std::vector<double>& weights, int m_f,
                                Rng& rng);

struct RaysRender {
  Tensor coarse_color;        // [R, 3]
  Tensor fine_color;          // [R, 3]
  std::vector<double> depth;  // [R] fine-pass expected depth, sum a_k t_k
  // Coarse-pass sample depths and detached compositing weights, row-major
  // [R, m_coarse]; kept for diagnostics and reprojection baselines.
  std::vector<double> coarse_ts;
  std::vector<float> coarse_weights;
};

// Coarse pass over m_coarse stratified samples, fine pass over the merged
// m_coarse + m_fine set. ids key the per-ray RNG streams; salt varies them
// across training steps (ignored when cfg.deterministic).
RaysRender render_rays(const std::vector<Ray>& rays,
                       const std::vector<uint64_t>& ids, const WorkingSet& ws,
                       const RadianceNet& coarse_net,
                       const RadianceNet& fine_net, double near, double far,
                       const RenderConfig& cfg, uint64_t salt = 0);

struct RayRender {
  Tensor coarse_color;  // [3]
  Tensor fine_color;    // [3]
  double depth = 0;
};

RayRender render_ray(const Ray& ray, uint64_t ray_id, const WorkingSet& ws,
                     const RadianceNet& coarse_net, const RadianceNet& fine_net,
                     double near, double far, const RenderConfig& cfg,
                     uint64_t salt = 0);

// Renders the target view in ray chunks under NoGradGuard; pixels land in
// [0, 1]. depth_out, when given, receives the H*W fine depth estimates.
Image render_image(const Camera& target, const Scene& scene, ModelSet& models,
                   const RenderConfig& cfg, int exclude_index = -1,
                   std::vector<double>* depth_out = nullptr);

}  // namespace nvs

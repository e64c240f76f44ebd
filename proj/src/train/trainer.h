#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "core/adam.h"
#include "core/rng.h"
#include "model/model_set.h"
#include "render/renderer.h"
#include "scene/scene_io.h"

namespace nvs {

struct TrainConfig {
  int rays_per_batch = 512;
  int total_steps = 2000;
  double lr_feature = 1e-3;
  double lr_radiance = 5e-4;
  double finetune_lr_feature = 5e-4;
  double finetune_lr_radiance = 2e-4;
  double lr_decay = 0.5;
  int lr_decay_interval = 25000;
  int n_min = 8, n_max = 12;             // source count N ~ U{n_min..n_max}
  int pool_mult_min = 1, pool_mult_max = 3;  // pool size = n * N, n uniform
  double grad_clip = 5.0;
  uint64_t seed = 0;
  int eval_cadence = 200;       // steps between JSONL log lines (0 = off)
  int eval_views = 1;           // holdout views rendered per log line
  int checkpoint_cadence = 1000;
  std::string checkpoint_path;  // empty = no periodic checkpoints
  double holdout_fraction = 1.0 / 8.0;
  // Optional background masking: target pixels within mask_tol of
  // mask_color (max channel difference) never enter a ray batch.
  bool mask_background = false;
  std::array<float, 3> mask_color{0, 0, 0};
  float mask_tol = 1.5f / 255.0f;
  // m_coarse / m_fine / chunk for training renders; n_source_views only
  // applies to evaluation (training draws N from the sampler).
  RenderConfig render;
};

struct TrainingPair {
  int target = -1;
  int n_views = 0;    // N after clamping to the available views
  int pool_mult = 0;  // the drawn n
  std::vector<int> pool;
  std::vector<int> sources;  // N distinct pool members
};

// Uniform target; N ~ U{n_min..n_max} clamped to the non-target count with
// a warning, pool = the n*N nearest views by the working-set metric, and N
// draws from the pool without replacement.
TrainingPair sample_training_pair(const Scene& scene, Rng& rng,
                                  const TrainConfig& cfg,
                                  std::string* warning = nullptr);

// Views reserved for testing: every k-th index with k = round(1/fraction).
std::vector<int> holdout_indices(int n_views, double fraction);

// Mean over rays of |coarse - gt|^2 + |fine - gt|^2, channels summed.
Tensor eq4_loss(const Tensor& coarse, const Tensor& fine, const Tensor& gt);

struct EvalView {
  int view = -1;
  double psnr = 0, ssim = 0;
};
struct EvalReport {
  std::vector<EvalView> views;
  double mean_psnr = 0, mean_ssim = 0;
};

// Renders each held-out view from the remaining views and scores it. Caps
// the view count at max_views when nonnegative.
EvalReport evaluate(const Scene& scene, ModelSet& models,
                    const RenderConfig& render_cfg,
                    double holdout_fraction = 1.0 / 8.0, int max_views = -1);

class Trainer {
 public:
  // Holdout views are removed from the training copies up front; log, when
  // given, receives one JSON line per eval cadence.
  Trainer(ModelSet& models, std::vector<Scene> scenes, const TrainConfig& cfg,
          std::ostream* log = nullptr);

  // One optimizer step on the round-robin scene; returns the batch loss.
  // A batch with no parameter influence (all rays masked out by geometry)
  // skips the update. Non-finite loss throws NumericError naming the ray.
  double step();

  // Steps until current_step() reaches target_total, emitting cadence logs
  // and periodic checkpoints.
  void run(int target_total);

  // Model parameters plus optimizer state under "opt." names.
  Checkpoint checkpoint();
  // Restores parameters, step counter and any stored optimizer state;
  // a checkpoint without "opt." records leaves the optimizer fresh.
  void restore(const Checkpoint& ckpt);

  uint64_t current_step() const { return step_; }
  double lr_scale() const;     // decay^(step / interval)
  double lr_feature() const { return cfg_.lr_feature * lr_scale(); }
  double lr_radiance() const { return cfg_.lr_radiance * lr_scale(); }
  EvalReport eval_now();

 private:
  void log_line(double loss);

  ModelSet& models_;
  TrainConfig cfg_;
  std::vector<Scene> full_scenes_;
  std::vector<Scene> train_scenes_;
  Adam<float> opt_;
  uint64_t step_ = 0;
  std::ostream* log_ = nullptr;
  std::set<std::string> warned_;
};

// Runs cfg.total_steps steps (continuing from resume when given) and
// returns the final checkpoint.
Checkpoint train(ModelSet& models, std::vector<Scene> scenes,
                 const TrainConfig& cfg, std::ostream* log = nullptr,
                 const Checkpoint* resume = nullptr);

// Same loop on one scene at the fine-tune learning rates with a fresh
// optimizer (per-scene tuning restarts Adam's moments).
Checkpoint finetune(ModelSet& models, const Scene& scene, TrainConfig cfg,
                    int steps, std::ostream* log = nullptr);

}  // namespace nvs

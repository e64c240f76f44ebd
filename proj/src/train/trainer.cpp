#include "train/trainer.h"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <ostream>

#include "core/error.h"
#include "json.hpp"
#include "metrics/metrics.h"

namespace nvs {

namespace {

void validate_config(const TrainConfig& cfg) {
  if (cfg.rays_per_batch < 1)
    throw ContractError("train config: rays_per_batch must be positive");
  if (cfg.lr_feature <= 0 || cfg.lr_radiance <= 0 ||
      cfg.finetune_lr_feature <= 0 || cfg.finetune_lr_radiance <= 0)
    throw ContractError("train config: learning rates must be positive");
  if (!(cfg.lr_decay > 0) || cfg.lr_decay > 1)
    throw ContractError("train config: lr_decay must be in (0, 1]");
  if (cfg.lr_decay_interval < 1)
    throw ContractError("train config: lr_decay_interval must be positive");
  if (cfg.n_min < 1 || cfg.n_max < cfg.n_min)
    throw ContractError("train config: bad source-count range");
  if (cfg.pool_mult_min < 1 || cfg.pool_mult_max < cfg.pool_mult_min)
    throw ContractError("train config: bad pool multiplier range");
  if (cfg.holdout_fraction < 0 || cfg.holdout_fraction > 0.5)
    throw ContractError("train config: holdout fraction must be in [0, 0.5]");
}

bool is_background(const float* px, const TrainConfig& cfg) {
  for (int c = 0; c < 3; ++c)
    if (std::abs(px[c] - cfg.mask_color[static_cast<size_t>(c)]) > cfg.mask_tol)
      return false;
  return true;
}

}  // namespace

TrainingPair sample_training_pair(const Scene& scene, Rng& rng,
                                  const TrainConfig& cfg,
                                  std::string* warning) {
  const int v = static_cast<int>(scene.views.size());
  if (v < 2) throw ContractError("sample_training_pair: scene needs >= 2 views");

  TrainingPair pair;
  pair.target = static_cast<int>(rng.uniform_int(v));
  const int n_draw =
      cfg.n_min + static_cast<int>(rng.uniform_int(cfg.n_max - cfg.n_min + 1));
  pair.pool_mult = cfg.pool_mult_min + static_cast<int>(rng.uniform_int(
                                           cfg.pool_mult_max - cfg.pool_mult_min + 1));
  const int avail = v - 1;
  pair.n_views = std::min(n_draw, avail);
  if (pair.n_views < n_draw && warning)
    *warning = "scene '" + scene.name + "' has " + std::to_string(v) +
               " views; clamping N from " + std::to_string(n_draw) + " to " +
               std::to_string(pair.n_views);

  const int pool_size = std::min(pair.pool_mult * pair.n_views, avail);
  pair.pool = select_view_indices(scene.views[static_cast<size_t>(pair.target)].camera,
                                  scene, pool_size, pair.target);

  std::vector<int> draw = pair.pool;
  for (int j = 0; j < pair.n_views; ++j) {
    const int k = j + static_cast<int>(rng.uniform_int(
                          static_cast<int64_t>(draw.size()) - j));
    std::swap(draw[static_cast<size_t>(j)], draw[static_cast<size_t>(k)]);
  }
  draw.resize(static_cast<size_t>(pair.n_views));
  pair.sources = std::move(draw);
  return pair;
}

std::vector<int> holdout_indices(int n_views, double fraction) {
  std::vector<int> out;
  if (fraction <= 0) return out;
  const int k = std::max(2, static_cast<int>(std::lround(1.0 / fraction)));
  for (int i = k - 1; i < n_views; i += k) out.push_back(i);
  return out;
}

Tensor eq4_loss(const Tensor& coarse, const Tensor& fine, const Tensor& gt) {
  const int64_t r = gt.dim(0);
  if (r < 1) throw ContractError("eq4_loss: empty batch");
  if (coarse.shape() != gt.shape() || fine.shape() != gt.shape())
    throw ShapeError("eq4_loss: prediction/target shape mismatch");
  Tensor dc = sub(coarse, gt), df = sub(fine, gt);
  Tensor total = add(sum_all(mul(dc, dc)), sum_all(mul(df, df)));
  return mul_scalar(total, 1.0f / static_cast<float>(r));
}

EvalReport evaluate(const Scene& scene, ModelSet& models,
                    const RenderConfig& render_cfg, double holdout_fraction,
                    int max_views) {
  std::vector<int> hold =
      holdout_indices(static_cast<int>(scene.views.size()), holdout_fraction);
  if (max_views >= 0 && static_cast<int>(hold.size()) > max_views)
    hold.resize(static_cast<size_t>(max_views));

  Scene pool;
  pool.name = scene.name;
  pool.near = scene.near;
  pool.far = scene.far;
  std::set<int> held(hold.begin(), hold.end());
  for (size_t i = 0; i < scene.views.size(); ++i)
    if (!held.count(static_cast<int>(i))) pool.views.push_back(scene.views[i]);

  EvalReport rep;
  if (hold.empty()) return rep;
  if (pool.views.size() < 1)
    throw ContractError("evaluate: no source views left after holdout");

  RenderConfig rc = render_cfg;
  rc.deterministic = true;
  rc.n_source_views =
      std::min(render_cfg.n_source_views, static_cast<int>(pool.views.size()));
  for (int idx : hold) {
    const View& view = scene.views[static_cast<size_t>(idx)];
    Image img = render_image(view.camera, pool, models, rc);
    rep.views.push_back({idx, psnr(img, view.image), ssim(img, view.image)});
  }
  for (const EvalView& ev : rep.views) {
    rep.mean_psnr += ev.psnr;
    rep.mean_ssim += ev.ssim;
  }
  rep.mean_psnr /= static_cast<double>(rep.views.size());
  rep.mean_ssim /= static_cast<double>(rep.views.size());
  return rep;
}

Trainer::Trainer(ModelSet& models, std::vector<Scene> scenes,
                 const TrainConfig& cfg, std::ostream* log)
    : models_(models), cfg_(cfg), log_(log) {
  validate_config(cfg);
  if (scenes.empty()) throw ContractError("trainer needs at least one scene");
  full_scenes_ = std::move(scenes);
  for (const Scene& s : full_scenes_) {
    std::set<int> held;
    for (int i : holdout_indices(static_cast<int>(s.views.size()), cfg.holdout_fraction))
      held.insert(i);
    Scene t;
    t.name = s.name;
    t.near = s.near;
    t.far = s.far;
    for (size_t i = 0; i < s.views.size(); ++i)
      if (!held.count(static_cast<int>(i))) t.views.push_back(s.views[i]);
    if (t.views.size() < 2)
      throw ContractError("scene '" + s.name + "' too small after holdout");
    train_scenes_.push_back(std::move(t));
  }
  for (auto& p : models_.feature.named_params())
    opt_.add_param(p.first, p.second, static_cast<float>(cfg.lr_feature));
  for (auto& p : models_.coarse.named_params())
    opt_.add_param(p.first, p.second, static_cast<float>(cfg.lr_radiance));
  for (auto& p : models_.fine.named_params())
    opt_.add_param(p.first, p.second, static_cast<float>(cfg.lr_radiance));
}

double Trainer::lr_scale() const {
  return std::pow(cfg_.lr_decay, static_cast<double>(step_) /
                                     static_cast<double>(cfg_.lr_decay_interval));
}

double Trainer::step() {
  const Scene& scene = train_scenes_[step_ % train_scenes_.size()];
  Rng pair_rng = keyed_rng(cfg_.seed, 0x70616972, step_);
  std::string warning;
  TrainingPair pair = sample_training_pair(scene, pair_rng, cfg_, &warning);
  if (!warning.empty() && warned_.insert(scene.name).second)
    std::cerr << "warning: " << warning << "\n";

  WorkingSet ws = build_working_set(scene, pair.sources, models_.feature);
  const View& tv = scene.views[static_cast<size_t>(pair.target)];
  const int w = tv.camera.width, h = tv.camera.height;

  Rng px_rng = keyed_rng(cfg_.seed, 0x70697873, step_);
  std::vector<Ray> rays;
  std::vector<uint64_t> ids;
  std::vector<float> gt;
  const int want = cfg_.rays_per_batch;
  for (int64_t tries = 0;
       static_cast<int>(ids.size()) < want && tries < int64_t{64} * want; ++tries) {
    const int64_t p = px_rng.uniform_int(static_cast<int64_t>(w) * h);
    const int px = static_cast<int>(p % w), py = static_cast<int>(p / w);
    const float* c = tv.image.pixel(px, py);
    if (cfg_.mask_background && is_background(c, cfg_)) continue;
    rays.push_back(ray_for_pixel(tv.camera, px + 0.5, py + 0.5));
    ids.push_back(static_cast<uint64_t>(p));
    gt.insert(gt.end(), c, c + 3);
  }
  if (ids.empty())
    throw ContractError("training batch empty; background mask rejected every pixel");

  RenderConfig rc = cfg_.render;
  rc.deterministic = false;
  rc.seed = cfg_.seed;
  RaysRender rr = render_rays(rays, ids, ws, models_.coarse, models_.fine,
                              scene.near, scene.far, rc, step_);

  const int64_t r = static_cast<int64_t>(ids.size());
  Tensor gt_t = Tensor::from_data({r, 3}, std::move(gt));
  Tensor loss = eq4_loss(rr.coarse_color, rr.fine_color, gt_t);
  const double lv = loss.data()[0];
  if (!std::isfinite(lv)) {
    std::string diag = "non-finite loss at step " + std::to_string(step_) +
                       " on scene '" + scene.name + "'";
    for (int64_t i = 0; i < r; ++i) {
      const float* cc = rr.coarse_color.data() + i * 3;
      const float* fc = rr.fine_color.data() + i * 3;
      bool bad = false;
      for (int ch = 0; ch < 3; ++ch)
        bad = bad || !std::isfinite(cc[ch]) || !std::isfinite(fc[ch]);
      if (bad) {
        diag += ": ray id " + std::to_string(ids[static_cast<size_t>(i)]) +
                " coarse (" + std::to_string(cc[0]) + ", " + std::to_string(cc[1]) +
                ", " + std::to_string(cc[2]) + ") fine (" + std::to_string(fc[0]) +
                ", " + std::to_string(fc[1]) + ", " + std::to_string(fc[2]) + ")";
        break;
      }
    }
    throw NumericError(diag);
  }

  if (loss.requires_grad()) {
    opt_.zero_grad();
    backward(loss);
    opt_.clip_global_norm(cfg_.grad_clip);
    opt_.step(static_cast<float>(lr_scale()));
  }
  ++step_;
  return lv;
}

EvalReport Trainer::eval_now() {
  RenderConfig rc = cfg_.render;
  rc.seed = cfg_.seed;
  return evaluate(full_scenes_[0], models_, rc, cfg_.holdout_fraction,
                  cfg_.eval_views);
}

void Trainer::log_line(double loss) {
  EvalReport rep = eval_now();
  nlohmann::json j{{"step", step_},
                   {"loss", loss},
                   {"lr", lr_feature()},
                   {"psnr", rep.mean_psnr},
                   {"ssim", rep.mean_ssim}};
  (*log_) << j.dump() << "\n" << std::flush;
}

void Trainer::run(int target_total) {
  while (step_ < static_cast<uint64_t>(target_total)) {
    const double loss = step();
    if (log_ && cfg_.eval_cadence > 0 && step_ % cfg_.eval_cadence == 0)
      log_line(loss);
    if (!cfg_.checkpoint_path.empty() && cfg_.checkpoint_cadence > 0 &&
        step_ % cfg_.checkpoint_cadence == 0)
      save_checkpoint(cfg_.checkpoint_path, checkpoint());
  }
}

Checkpoint Trainer::checkpoint() {
  Checkpoint ck = models_.to_checkpoint(step_);
  for (size_t i = 0; i < opt_.num_params(); ++i) {
    const auto& m = opt_.m_state(i);
    const auto& v = opt_.v_state(i);
    ck.add("opt.m." + opt_.name(i),
           Tensor::from_data({static_cast<int64_t>(m.size())}, m));
    ck.add("opt.v." + opt_.name(i),
           Tensor::from_data({static_cast<int64_t>(v.size())}, v));
  }
  ck.add("opt.t", Tensor::from_data({1}, {static_cast<float>(opt_.t())}));
  return ck;
}

void Trainer::restore(const Checkpoint& ckpt) {
  models_.load(ckpt);
  step_ = ckpt.step;
  for (size_t i = 0; i < opt_.num_params(); ++i) {
    const Tensor* m = ckpt.find("opt.m." + opt_.name(i));
    const Tensor* v = ckpt.find("opt.v." + opt_.name(i));
    if (!m && !v) continue;
    if (!m || !v || m->size() != static_cast<int64_t>(opt_.m_state(i).size()) ||
        v->size() != static_cast<int64_t>(opt_.v_state(i).size()))
      throw FormatError("optimizer state mismatch for '" + opt_.name(i) + "'");
    std::copy(m->data(), m->data() + m->size(), opt_.m_state(i).begin());
    std::copy(v->data(), v->data() + v->size(), opt_.v_state(i).begin());
  }
  if (const Tensor* t = ckpt.find("opt.t"))
    opt_.set_t(static_cast<int64_t>(t->data()[0]));
}

Checkpoint train(ModelSet& models, std::vector<Scene> scenes,
                 const TrainConfig& cfg, std::ostream* log,
                 const Checkpoint* resume) {
  Trainer trainer(models, std::move(scenes), cfg, log);
  if (resume) trainer.restore(*resume);
  trainer.run(cfg.total_steps);
  return trainer.checkpoint();
}

Checkpoint finetune(ModelSet& models, const Scene& scene, TrainConfig cfg,
                    int steps, std::ostream* log) {
  cfg.lr_feature = cfg.finetune_lr_feature;
  cfg.lr_radiance = cfg.finetune_lr_radiance;
  Trainer trainer(models, {scene}, cfg, log);
  trainer.run(steps);
  return trainer.checkpoint();
}

}  // namespace nvs

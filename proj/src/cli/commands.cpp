#include "cli/commands.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "core/error.h"
#include "metrics/metrics.h"

namespace nvs {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

void write_manifest(const std::string& out_dir, const std::string& subcommand,
                    const ToolConfig& cfg, json inputs, json outputs) {
  if (out_dir.empty())
    throw ContractError(subcommand + ": --out is required");
  fs::create_directories(out_dir);
  json m{{"subcommand", subcommand},
         {"tool_version", kToolVersion},
         {"config", tool_config_to_json(cfg)},
         {"inputs", std::move(inputs)},
         {"outputs", std::move(outputs)}};
  const fs::path path = fs::path(out_dir) / "run_manifest.json";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write run manifest " + path.string());
  out << m.dump(2) << "\n";
  if (!out) throw IoError("failed writing run manifest " + path.string());
}

// Flag value if set, else the same field of the manifest the config came
// from, so a run manifest alone reproduces the run.
std::string pick(const std::string& flag_value, const json& manifest,
                 const char* group, const char* key) {
  if (!flag_value.empty()) return flag_value;
  if (manifest.is_object() && manifest.contains(group) &&
      manifest.at(group).contains(key) && manifest.at(group).at(key).is_string())
    return manifest.at(group).at(key).get<std::string>();
  return "";
}

std::string require_path(const std::string& value, const char* subcommand,
                         const char* flag) {
  if (value.empty())
    throw ContractError(std::string(subcommand) + ": " + flag + " is required");
  return value;
}

std::string padded(const char* stem, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%03d.png", stem, i);
  return buf;
}

ModelSet load_models(const std::string& ckpt_path, const ToolConfig& cfg,
                     uint64_t* step_out) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  ModelSet models(cfg.model, cfg.seed);
  models.load(ck);
  if (step_out) *step_out = ck.step;
  return models;
}

void print_line(const json& j) { std::cout << j.dump() << "\n" << std::flush; }

Vec3 cam_forward(const Mat3& R) { return {-R.m[6], -R.m[7], -R.m[8]}; }

}  // namespace

std::string ablation_tag(const RadianceConfig& cfg) {
  std::string tag;
  if (cfg.ablate_ray_transformer) tag = "ray-transformer";
  if (cfg.ablate_view_directions)
    tag += tag.empty() ? "view-directions" : "+view-directions";
  return tag.empty() ? "none" : tag;
}

std::vector<Camera> orbit_cameras(const Scene& scene, int n_frames) {
  if (n_frames < 1) throw ContractError("orbit: frame count must be positive");
  if (scene.views.empty()) throw ContractError("orbit: scene has no views");
  const double mid = 0.5 * (scene.near + scene.far);
  Vec3 target{0, 0, 0};
  for (const View& v : scene.views) {
    const Vec3 c = camera_center(v.camera);
    target = target + (c + cam_forward(v.camera.R) * mid) * (1.0 / scene.views.size());
  }
  double rh = 0, y_off = 0;
  for (const View& v : scene.views) {
    const Vec3 d = camera_center(v.camera) - target;
    rh += std::hypot(d.x, d.z) / scene.views.size();
    y_off += d.y / scene.views.size();
  }
  if (rh < 1e-9 && std::abs(y_off) < 1e-9)
    throw ContractError("orbit: camera rig collapses onto the target");

  const Vec3 d0 = camera_center(scene.views[0].camera) - target;
  const double a0 = std::atan2(d0.z, d0.x);
  std::vector<Camera> cams;
  cams.reserve(static_cast<size_t>(n_frames));
  for (int k = 0; k < n_frames; ++k) {
    const double a = a0 + 2.0 * M_PI * k / n_frames;
    const Vec3 eye = target + Vec3{rh * std::cos(a), y_off, rh * std::sin(a)};
    Camera cam = scene.views[0].camera;
    cam.R = look_at_rotation(eye, target, {0, 1, 0});
    cam.t = apply(cam.R, {-eye.x, -eye.y, -eye.z});
    cam.near = scene.near;
    cam.far = scene.far;
    cams.push_back(cam);
  }
  return cams;
}

int cmd_synth(const SynthArgs& args, ToolConfig cfg, const json& manifest) {
  SynthArgs a = args;
  a.spec_path = pick(a.spec_path, manifest, "inputs", "spec");
  a.preset = pick(a.preset, manifest, "inputs", "preset");
  a.out = pick(a.out, manifest, "outputs", "scene_dir");
  require_path(a.out, "synth", "--out");

  SceneSpec spec;
  if (!a.spec_path.empty() && !a.preset.empty())
    throw ContractError("synth: pass either --spec or --preset, not both");
  if (!a.spec_path.empty()) {
    spec = load_scene_spec(a.spec_path);
    if (a.seed_explicit) spec.seed = cfg.seed;
  } else if (!a.preset.empty()) {
    RigMode mode;
    int count;
    if (a.preset == "forward-facing") {
      mode = RigMode::kForwardArc;
      count = 24;
    } else if (a.preset == "hemisphere") {
      mode = RigMode::kHemisphere;
      count = 32;
    } else {
      throw ContractError("synth: unknown preset '" + a.preset +
                          "' (available: forward-facing, hemisphere)");
    }
    if (a.views > 0) count = a.views;
    spec = random_scene_spec(a.name, cfg.seed, mode, a.specular, count,
                             a.size > 0 ? a.size : 64);
  } else {
    throw ContractError("synth: pass --spec or --preset");
  }

  write_manifest(a.out, "synth", cfg,
                 {{"spec", a.spec_path}, {"preset", a.preset}},
                 {{"scene_dir", a.out}});
  Scene scene = generate_scene(spec, a.out);
  print_line({{"subcommand", "synth"},
              {"scene", scene.name},
              {"views", scene.views.size()},
              {"width", spec.width},
              {"height", spec.height},
              {"near", scene.near},
              {"far", scene.far},
              {"spheres", spec.spheres.size()},
              {"boxes", spec.boxes.size()},
              {"ground", spec.ground},
              {"out", a.out}});
  return 0;
}

int cmd_train(const TrainArgs& args, ToolConfig cfg, const json& manifest) {
  TrainArgs a = args;
  if (a.scenes.empty() && manifest.is_object() && manifest.contains("inputs") &&
      manifest.at("inputs").contains("scenes"))
    manifest.at("inputs").at("scenes").get_to(a.scenes);
  a.out = pick(a.out, manifest, "outputs", "dir");
  require_path(a.out, "train", "--out");
  if (a.scenes.empty()) throw ContractError("train: at least one --scene is required");
  if (a.steps >= 0) cfg.train.total_steps = a.steps;

  const std::string ckpt_path = (fs::path(a.out) / "checkpoint.bin").string();
  const std::string log_path = (fs::path(a.out) / "train_log.jsonl").string();
  write_manifest(a.out, "train", cfg, {{"scenes", a.scenes}},
                 {{"dir", a.out}, {"checkpoint", ckpt_path}, {"log", log_path}});

  std::vector<Scene> scenes;
  for (const std::string& dir : a.scenes) scenes.push_back(load_scene(dir));

  cfg.train.seed = cfg.seed;
  cfg.train.render = cfg.render;
  cfg.train.checkpoint_path = ckpt_path;
  std::ofstream log(log_path);
  if (!log) throw IoError("cannot write training log " + log_path);

  ModelSet models(cfg.model, cfg.seed);
  Trainer trainer(models, std::move(scenes), cfg.train, &log);
  trainer.run(cfg.train.total_steps);
  save_checkpoint(ckpt_path, trainer.checkpoint());

  print_line({{"subcommand", "train"},
              {"steps", trainer.current_step()},
              {"ablation", ablation_tag(cfg.model)},
              {"checkpoint", ckpt_path},
              {"log", log_path}});
  return 0;
}

int cmd_finetune(const FinetuneArgs& args, ToolConfig cfg, const json& manifest) {
  FinetuneArgs a = args;
  a.checkpoint = pick(a.checkpoint, manifest, "inputs", "checkpoint");
  a.scene = pick(a.scene, manifest, "inputs", "scene");
  a.out = pick(a.out, manifest, "outputs", "dir");
  require_path(a.checkpoint, "finetune", "--checkpoint");
  require_path(a.scene, "finetune", "--scene");
  require_path(a.out, "finetune", "--out");
  const int steps = a.steps >= 0 ? a.steps : cfg.train.total_steps;

  const std::string ckpt_path = (fs::path(a.out) / "checkpoint.bin").string();
  const std::string log_path = (fs::path(a.out) / "finetune_log.jsonl").string();
  write_manifest(a.out, "finetune", cfg,
                 {{"checkpoint", a.checkpoint}, {"scene", a.scene},
                  {"steps", steps}},
                 {{"dir", a.out}, {"checkpoint", ckpt_path}, {"log", log_path}});

  ModelSet models = load_models(a.checkpoint, cfg, nullptr);
  Scene scene = load_scene(a.scene);
  cfg.train.seed = cfg.seed;
  cfg.train.render = cfg.render;
  std::ofstream log(log_path);
  if (!log) throw IoError("cannot write training log " + log_path);
  save_checkpoint(ckpt_path, finetune(models, scene, cfg.train, steps, &log));

  print_line({{"subcommand", "finetune"},
              {"steps", steps},
              {"scene", scene.name},
              {"checkpoint", ckpt_path},
              {"log", log_path}});
  return 0;
}

int cmd_render(const RenderArgs& args, ToolConfig cfg, const json& manifest) {
  RenderArgs a = args;
  a.checkpoint = pick(a.checkpoint, manifest, "inputs", "checkpoint");
  a.scene = pick(a.scene, manifest, "inputs", "scene");
  a.out = pick(a.out, manifest, "outputs", "dir");
  if (a.view < 0 && a.orbit < 0 && manifest.is_object() && manifest.contains("inputs")) {
    const json& in = manifest.at("inputs");
    if (in.contains("view")) a.view = in.at("view").get<int>();
    if (in.contains("orbit")) a.orbit = in.at("orbit").get<int>();
  }
  require_path(a.checkpoint, "render", "--checkpoint");
  require_path(a.scene, "render", "--scene");
  require_path(a.out, "render", "--out");
  if ((a.view >= 0) == (a.orbit >= 0))
    throw ContractError("render: choose exactly one of --view or --orbit");
  if (a.n_sources > 0) cfg.render.n_source_views = a.n_sources;
  cfg.render.seed = cfg.seed;

  std::vector<std::string> frames;
  if (a.view >= 0) {
    frames.push_back((fs::path(a.out) / padded("view", a.view)).string());
  } else {
    for (int k = 0; k < a.orbit; ++k)
      frames.push_back((fs::path(a.out) / padded("frame", k)).string());
  }
  write_manifest(a.out, "render", cfg,
                 {{"checkpoint", a.checkpoint}, {"scene", a.scene},
                  {"view", a.view}, {"orbit", a.orbit}},
                 {{"dir", a.out}, {"frames", frames}});

  uint64_t step = 0;
  ModelSet models = load_models(a.checkpoint, cfg, &step);
  Scene scene = load_scene(a.scene);

  if (a.view >= 0) {
    if (a.view >= static_cast<int>(scene.views.size()))
      throw ContractError("render: --view " + std::to_string(a.view) +
                          " out of range, scene has " +
                          std::to_string(scene.views.size()) + " views");
    const View& gt = scene.views[static_cast<size_t>(a.view)];
    Image img = render_image(gt.camera, scene, models, cfg.render, a.view);
    write_png(frames[0], img);
    print_line({{"subcommand", "render"},
                {"view", a.view},
                {"psnr", psnr(img, gt.image)},
                {"ssim", ssim(img, gt.image)},
                {"checkpoint_step", step},
                {"path", frames[0]}});
  } else {
    std::vector<Camera> cams = orbit_cameras(scene, a.orbit);
    for (int k = 0; k < a.orbit; ++k) {
      Image img = render_image(cams[static_cast<size_t>(k)], scene, models,
                               cfg.render);
      write_png(frames[static_cast<size_t>(k)], img);
    }
    print_line({{"subcommand", "render"},
                {"frames", a.orbit},
                {"checkpoint_step", step},
                {"out", a.out}});
  }
  return 0;
}

int cmd_eval(const EvalArgs& args, ToolConfig cfg, const json& manifest) {
  EvalArgs a = args;
  a.checkpoint = pick(a.checkpoint, manifest, "inputs", "checkpoint");
  a.scene = pick(a.scene, manifest, "inputs", "scene");
  a.out = pick(a.out, manifest, "outputs", "dir");
  require_path(a.checkpoint, "eval", "--checkpoint");
  require_path(a.scene, "eval", "--scene");
  require_path(a.out, "eval", "--out");
  const double holdout = a.holdout >= 0 ? a.holdout : cfg.train.holdout_fraction;
  cfg.render.seed = cfg.seed;

  const std::string report_path = (fs::path(a.out) / "eval_report.json").string();
  write_manifest(a.out, "eval", cfg,
                 {{"checkpoint", a.checkpoint}, {"scene", a.scene},
                  {"holdout_fraction", holdout}},
                 {{"dir", a.out}, {"report", report_path}});

  uint64_t step = 0;
  ModelSet models = load_models(a.checkpoint, cfg, &step);
  Scene scene = load_scene(a.scene);
  EvalReport rep = evaluate(scene, models, cfg.render, holdout);

  json views = json::array();
  for (const EvalView& v : rep.views)
    views.push_back({{"view", v.view}, {"psnr", v.psnr}, {"ssim", v.ssim}});
  json report{{"subcommand", "eval"},
              {"scene", scene.name},
              {"checkpoint", a.checkpoint},
              {"checkpoint_step", step},
              {"ablation", ablation_tag(cfg.model)},
              {"holdout_fraction", holdout},
              {"views", views},
              {"mean_psnr", rep.mean_psnr},
              {"mean_ssim", rep.mean_ssim}};
  std::ofstream out(report_path);
  if (!out) throw IoError("cannot write eval report " + report_path);
  out << report.dump(2) << "\n";
  if (!out) throw IoError("failed writing eval report " + report_path);
  print_line(report);
  return 0;
}

}  // namespace nvs

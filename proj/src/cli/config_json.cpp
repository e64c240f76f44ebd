#include "cli/config_json.h"

#include <fstream>
#include <initializer_list>
#include <set>

#include "core/error.h"

namespace nvs {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw FormatError("config: '" + where + "' must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& item : j.items())
    if (!ok.count(item.key()))
      throw FormatError("config: unknown key '" + where + "." + item.key() + "'");
}

template <class T>
void pull(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

json vec3_to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Vec3 vec3_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3)
    throw FormatError("config: '" + where + "' must be a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

void pull_vec3(const json& j, const char* key, const std::string& where, Vec3& out) {
  if (j.contains(key)) out = vec3_from_json(j.at(key), where + std::string(".") + key);
}

json material_to_json(const Material& m) {
  return {{"albedo", vec3_to_json(m.albedo)},
          {"spec_strength", m.spec_strength},
          {"spec_exponent", m.spec_exponent}};
}

Material material_from_json(const json& j, const std::string& where) {
  check_keys(j, where, {"albedo", "spec_strength", "spec_exponent"});
  Material m;
  pull_vec3(j, "albedo", where, m.albedo);
  pull(j, "spec_strength", m.spec_strength);
  pull(j, "spec_exponent", m.spec_exponent);
  return m;
}

}  // namespace

json tool_config_to_json(const ToolConfig& cfg) {
  const RadianceConfig& m = cfg.model;
  const TrainConfig& t = cfg.train;
  const RenderConfig& r = cfg.render;
  return {
      {"seed", cfg.seed},
      {"model",
       {{"d", m.d},
        {"d_sigma", m.d_sigma},
        {"num_heads", m.num_heads},
        {"transformer_depth", m.transformer_depth},
        {"transformer_use_pe", m.transformer_use_pe},
        {"ablate_ray_transformer", m.ablate_ray_transformer},
        {"ablate_view_directions", m.ablate_view_directions},
        {"agg_hidden", m.agg_hidden},
        {"fsigma_hidden", m.fsigma_hidden},
        {"color_hidden", m.color_hidden},
        {"head_hidden", m.head_hidden}}},
      {"train",
       {{"rays_per_batch", t.rays_per_batch},
        {"total_steps", t.total_steps},
        {"lr_feature", t.lr_feature},
        {"lr_radiance", t.lr_radiance},
        {"finetune_lr_feature", t.finetune_lr_feature},
        {"finetune_lr_radiance", t.finetune_lr_radiance},
        {"lr_decay", t.lr_decay},
        {"lr_decay_interval", t.lr_decay_interval},
        {"n_min", t.n_min},
        {"n_max", t.n_max},
        {"pool_mult_min", t.pool_mult_min},
        {"pool_mult_max", t.pool_mult_max},
        {"grad_clip", t.grad_clip},
        {"eval_cadence", t.eval_cadence},
        {"eval_views", t.eval_views},
        {"checkpoint_cadence", t.checkpoint_cadence},
        {"holdout_fraction", t.holdout_fraction},
        {"mask_background", t.mask_background},
        {"mask_color", json::array({t.mask_color[0], t.mask_color[1], t.mask_color[2]})},
        {"mask_tol", t.mask_tol}}},
      {"render",
       {{"n_source_views", r.n_source_views},
        {"m_coarse", r.m_coarse},
        {"m_fine", r.m_fine},
        {"chunk_size", r.chunk_size},
        {"deterministic", r.deterministic}}}};
}

ToolConfig tool_config_from_json(const json& j) {
  check_keys(j, "config", {"seed", "model", "train", "render"});
  ToolConfig cfg;
  pull(j, "seed", cfg.seed);

  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, "model",
               {"d", "d_sigma", "num_heads", "transformer_depth",
                "transformer_use_pe", "ablate_ray_transformer",
                "ablate_view_directions", "agg_hidden", "fsigma_hidden",
                "color_hidden", "head_hidden"});
    pull(m, "d", cfg.model.d);
    pull(m, "d_sigma", cfg.model.d_sigma);
    pull(m, "num_heads", cfg.model.num_heads);
    pull(m, "transformer_depth", cfg.model.transformer_depth);
    pull(m, "transformer_use_pe", cfg.model.transformer_use_pe);
    pull(m, "ablate_ray_transformer", cfg.model.ablate_ray_transformer);
    pull(m, "ablate_view_directions", cfg.model.ablate_view_directions);
    pull(m, "agg_hidden", cfg.model.agg_hidden);
    pull(m, "fsigma_hidden", cfg.model.fsigma_hidden);
    pull(m, "color_hidden", cfg.model.color_hidden);
    pull(m, "head_hidden", cfg.model.head_hidden);
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, "train",
               {"rays_per_batch", "total_steps", "lr_feature", "lr_radiance",
                "finetune_lr_feature", "finetune_lr_radiance", "lr_decay",
                "lr_decay_interval", "n_min", "n_max", "pool_mult_min",
                "pool_mult_max", "grad_clip", "eval_cadence", "eval_views",
                "checkpoint_cadence", "holdout_fraction", "mask_background",
                "mask_color", "mask_tol"});
    pull(t, "rays_per_batch", cfg.train.rays_per_batch);
    pull(t, "total_steps", cfg.train.total_steps);
    pull(t, "lr_feature", cfg.train.lr_feature);
    pull(t, "lr_radiance", cfg.train.lr_radiance);
    pull(t, "finetune_lr_feature", cfg.train.finetune_lr_feature);
    pull(t, "finetune_lr_radiance", cfg.train.finetune_lr_radiance);
    pull(t, "lr_decay", cfg.train.lr_decay);
    pull(t, "lr_decay_interval", cfg.train.lr_decay_interval);
    pull(t, "n_min", cfg.train.n_min);
    pull(t, "n_max", cfg.train.n_max);
    pull(t, "pool_mult_min", cfg.train.pool_mult_min);
    pull(t, "pool_mult_max", cfg.train.pool_mult_max);
    pull(t, "grad_clip", cfg.train.grad_clip);
    pull(t, "eval_cadence", cfg.train.eval_cadence);
    pull(t, "eval_views", cfg.train.eval_views);
    pull(t, "checkpoint_cadence", cfg.train.checkpoint_cadence);
    pull(t, "holdout_fraction", cfg.train.holdout_fraction);
    pull(t, "mask_background", cfg.train.mask_background);
    if (t.contains("mask_color")) {
      const json& mc = t.at("mask_color");
      if (!mc.is_array() || mc.size() != 3)
        throw FormatError("config: 'train.mask_color' must be a 3-element array");
      for (int c = 0; c < 3; ++c)
        cfg.train.mask_color[static_cast<size_t>(c)] = mc[static_cast<size_t>(c)].get<float>();
    }
    pull(t, "mask_tol", cfg.train.mask_tol);
  }

  if (j.contains("render")) {
    const json& r = j.at("render");
    check_keys(r, "render",
               {"n_source_views", "m_coarse", "m_fine", "chunk_size",
                "deterministic"});
    pull(r, "n_source_views", cfg.render.n_source_views);
    pull(r, "m_coarse", cfg.render.m_coarse);
    pull(r, "m_fine", cfg.render.m_fine);
    pull(r, "chunk_size", cfg.render.chunk_size);
    pull(r, "deterministic", cfg.render.deterministic);
  }
  return cfg;
}

ToolConfig load_tool_config(const std::string& path, json* manifest_out) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("config " + path + ": " + e.what());
  }
  if (j.contains("subcommand")) {
    if (manifest_out) *manifest_out = j;
    if (!j.contains("config"))
      throw FormatError("config " + path + ": manifest lacks a 'config' field");
    return tool_config_from_json(j.at("config"));
  }
  return tool_config_from_json(j);
}

json scene_spec_to_json(const SceneSpec& spec) {
  json spheres = json::array();
  for (const SpherePrim& s : spec.spheres)
    spheres.push_back({{"center", vec3_to_json(s.center)},
                       {"radius", s.radius},
                       {"material", material_to_json(s.mat)}});
  json boxes = json::array();
  for (const BoxPrim& b : spec.boxes)
    boxes.push_back({{"lo", vec3_to_json(b.lo)},
                     {"hi", vec3_to_json(b.hi)},
                     {"material", material_to_json(b.mat)}});
  return {{"name", spec.name},
          {"seed", spec.seed},
          {"spheres", spheres},
          {"boxes", boxes},
          {"ground", spec.ground},
          {"ground_y", spec.ground_y},
          {"ground_radius", spec.ground_radius},
          {"ground_material", material_to_json(spec.ground_mat)},
          {"light_dir", vec3_to_json(spec.light_dir)},
          {"ambient", spec.ambient},
          {"diffuse", spec.diffuse},
          {"background", vec3_to_json(spec.background)},
          {"rig",
           {{"mode", spec.rig.mode == RigMode::kHemisphere ? "hemisphere"
                                                           : "forward-arc"},
            {"count", spec.rig.count},
            {"radius_min", spec.rig.radius_min},
            {"radius_max", spec.rig.radius_max},
            {"target", vec3_to_json(spec.rig.target)}}},
          {"width", spec.width},
          {"height", spec.height},
          {"fov_deg", spec.fov_deg},
          {"supersample", spec.supersample}};
}

SceneSpec scene_spec_from_json(const json& j) {
  check_keys(j, "spec",
             {"name", "seed", "spheres", "boxes", "ground", "ground_y",
              "ground_radius", "ground_material", "light_dir", "ambient",
              "diffuse", "background", "rig", "width", "height", "fov_deg",
              "supersample"});
  SceneSpec spec;
  pull(j, "name", spec.name);
  pull(j, "seed", spec.seed);
  if (j.contains("spheres")) {
    for (size_t i = 0; i < j.at("spheres").size(); ++i) {
      const json& s = j.at("spheres")[i];
      const std::string where = "spec.spheres[" + std::to_string(i) + "]";
      check_keys(s, where, {"center", "radius", "material"});
      SpherePrim p;
      pull_vec3(s, "center", where, p.center);
      pull(s, "radius", p.radius);
      if (s.contains("material"))
        p.mat = material_from_json(s.at("material"), where + ".material");
      spec.spheres.push_back(p);
    }
  }
  if (j.contains("boxes")) {
    for (size_t i = 0; i < j.at("boxes").size(); ++i) {
      const json& b = j.at("boxes")[i];
      const std::string where = "spec.boxes[" + std::to_string(i) + "]";
      check_keys(b, where, {"lo", "hi", "material"});
      BoxPrim p;
      pull_vec3(b, "lo", where, p.lo);
      pull_vec3(b, "hi", where, p.hi);
      if (b.contains("material"))
        p.mat = material_from_json(b.at("material"), where + ".material");
      spec.boxes.push_back(p);
    }
  }
  pull(j, "ground", spec.ground);
  pull(j, "ground_y", spec.ground_y);
  pull(j, "ground_radius", spec.ground_radius);
  if (j.contains("ground_material"))
    spec.ground_mat = material_from_json(j.at("ground_material"), "spec.ground_material");
  pull_vec3(j, "light_dir", "spec", spec.light_dir);
  pull(j, "ambient", spec.ambient);
  pull(j, "diffuse", spec.diffuse);
  pull_vec3(j, "background", "spec", spec.background);
  if (j.contains("rig")) {
    const json& r = j.at("rig");
    check_keys(r, "spec.rig", {"mode", "count", "radius_min", "radius_max", "target"});
    if (r.contains("mode")) {
      const std::string mode = r.at("mode").get<std::string>();
      if (mode == "hemisphere") {
        spec.rig.mode = RigMode::kHemisphere;
      } else if (mode == "forward-arc") {
        spec.rig.mode = RigMode::kForwardArc;
      } else {
        throw FormatError("config: 'spec.rig.mode' must be \"hemisphere\" or "
                          "\"forward-arc\", got \"" + mode + "\"");
      }
    }
    pull(r, "count", spec.rig.count);
    pull(r, "radius_min", spec.rig.radius_min);
    pull(r, "radius_max", spec.rig.radius_max);
    pull_vec3(r, "target", "spec.rig", spec.rig.target);
  }
  pull(j, "width", spec.width);
  pull(j, "height", spec.height);
  pull(j, "fov_deg", spec.fov_deg);
  pull(j, "supersample", spec.supersample);
  return spec;
}

SceneSpec load_scene_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scene spec " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("scene spec " + path + ": " + e.what());
  }
  try {
    return scene_spec_from_json(j);
  } catch (const json::exception& e) {
    throw FormatError("scene spec " + path + ": " + e.what());
  }
}

}  // namespace nvs

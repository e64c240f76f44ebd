#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "model/feature_net.h"
#include "model/radiance_net.h"
#include "scene/scene_io.h"

namespace nvs {

// Shared feature extractor plus the coarse and fine radiance networks.
// Copies share parameter storage (tensor handles are refcounted).
struct ModelSet {
  RadianceConfig config;
  FeatureNet feature;
  RadianceNet coarse;
  RadianceNet fine;

  explicit ModelSet(const RadianceConfig& cfg = {}, uint64_t seed = 0);

  std::vector<std::pair<std::string, Tensor>> named_params();
  int64_t num_params();
  uint64_t fingerprint() const { return config_fingerprint(config); }

  // Snapshot referencing the live parameter tensors; serialize promptly.
  Checkpoint to_checkpoint(uint64_t step);
  // Copies values into the existing parameters. Throws FormatError on a
  // fingerprint mismatch, an unknown tensor, a missing one, or a shape clash.
  void load(const Checkpoint& ckpt);
};

}  // namespace nvs

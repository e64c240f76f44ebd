#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "core/tensor.h"
#include "geometry/geometry.h"
#include "image/image.h"

namespace nvs {

struct View {
  std::string image_name;
  Image image;
  Camera camera;
};

struct Scene {
  std::string name;
  double near = 0, far = 0;
  std::vector<View> views;
};

// Directory layout: <dir>/scene.json plus the PNGs it references.
// scene.json fields: name, near, far, views[] with {image, width, height,
// intrinsics: 3x3 row-major, extrinsics: 3x4 row-major world-to-camera}.
Scene load_scene(const std::string& dir);
void save_scene(const std::string& dir, const Scene& scene);

inline constexpr uint32_t kCheckpointVersion = 1;

// Named float32 tensors plus the training step and a config fingerprint.
// File layout, all little-endian: "IBRN", u32 version, u64 step,
// u64 fingerprint, then per tensor: u32 name length, name bytes, u8 dtype
// (0 = f32), u8 rank, u32 dims, raw payload. Round trips bit-exactly.
struct Checkpoint {
  uint32_t version = kCheckpointVersion;
  uint64_t step = 0;
  uint64_t config_fingerprint = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;

  void add(const std::string& name, Tensor t);
  const Tensor* find(const std::string& name) const;
  // Missing names are a format error (checkpoint/model mismatch).
  Tensor require(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace nvs

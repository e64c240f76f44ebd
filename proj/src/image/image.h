#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/error.h"

namespace nvs {

// Row-major H x W x 3, values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  static Image filled(int width, int height, float r, float g, float b);
  float* pixel(int x, int y) { return data.data() + (y * width + x) * 3; }
  const float* pixel(int x, int y) const {
    return data.data() + (y * width + x) * 3;
  }
  int64_t size() const { return static_cast<int64_t>(data.size()); }
};

// 8-bit RGB PNG. Reading converts any PNG color type to RGB and maps
// through /255; writing quantizes by round(clamp(v)*255), so a written
// image reads back exactly as its quantized values.
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

uint8_t quantize_channel(float v);

}  // namespace nvs

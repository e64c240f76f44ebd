#include "image/image.h"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace nvs {

Image Image::filled(int width, int height, float r, float g, float b) {
  Image img;
  img.width = width;
  img.height = height;
  img.data.resize(static_cast<size_t>(width) * height * 3);
  for (int64_t p = 0; p < int64_t(width) * height; ++p) {
    img.data[p * 3 + 0] = r;
    img.data[p * 3 + 1] = g;
    img.data[p * 3 + 2] = b;
  }
  return img;
}

uint8_t quantize_channel(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<uint8_t>(std::lround(c * 255.0f));
}

Image read_png(const std::string& path) {
  png_image im;
  std::memset(&im, 0, sizeof(im));
  im.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&im, path.c_str())) {
    throw IoError("cannot read PNG '" + path + "': " + im.message);
  }
  im.format = PNG_FORMAT_RGB;
  std::vector<uint8_t> bytes(PNG_IMAGE_SIZE(im));
  if (!png_image_finish_read(&im, nullptr, bytes.data(), 0, nullptr)) {
    std::string msg = im.message;
    png_image_free(&im);
    throw FormatError("malformed PNG '" + path + "': " + msg);
  }
  Image img;
  img.width = static_cast<int>(im.width);
  img.height = static_cast<int>(im.height);
  img.data.resize(bytes.size());
  for (size_t i = 0; i < bytes.size(); ++i) {
    img.data[i] = static_cast<float>(bytes[i]) / 255.0f;
  }
  return img;
}

void write_png(const std::string& path, const Image& img) {
  if (img.width <= 0 || img.height <= 0 ||
      img.data.size() != static_cast<size_t>(img.width) * img.height * 3) {
    throw ContractError("write_png: image buffer does not match its size");
  }
  std::vector<uint8_t> bytes(img.data.size());
  for (size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = quantize_channel(img.data[i]);
  }
  png_image im;
  std::memset(&im, 0, sizeof(im));
  im.version = PNG_IMAGE_VERSION;
  im.width = static_cast<png_uint_32>(img.width);
  im.height = static_cast<png_uint_32>(img.height);
  im.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&im, path.c_str(), 0, bytes.data(), 0,
                               nullptr)) {
    throw IoError("cannot write PNG '" + path + "': " + im.message);
  }
}

}  // namespace nvs

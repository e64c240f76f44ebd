#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "core/rng.h"
#include "image/image.h"

using namespace nvs;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
  auto d = fs::temp_directory_path() / "nvs_image_tests";
  fs::create_directories(d);
  return d;
}

Image random_image(int w, int h, uint64_t key) {
  Rng rng = keyed_rng(0x696d6167ULL, key);
  Image img;
  img.width = w;
  img.height = h;
  img.data.resize(static_cast<size_t>(w) * h * 3);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST_CASE("quantization rounds and clamps") {
  CHECK(quantize_channel(0.0f) == 0);
  CHECK(quantize_channel(1.0f) == 255);
  CHECK(quantize_channel(-0.3f) == 0);
  CHECK(quantize_channel(2.0f) == 255);
  CHECK(quantize_channel(0.5f) == 128);  // round half up
  CHECK(quantize_channel(1.0f / 255.0f) == 1);
}

TEST_CASE("png write then read returns the quantized image") {
  const auto path = (tmp_dir() / "roundtrip.png").string();
  const Image img = random_image(21, 13, 1);
  write_png(path, img);
  const Image back = read_png(path);
  REQUIRE(back.width == img.width);
  REQUIRE(back.height == img.height);
  for (size_t i = 0; i < img.data.size(); ++i) {
    const float want = quantize_channel(img.data[i]) / 255.0f;
    REQUIRE(back.data[i] == want);
  }
}

TEST_CASE("writing the same image twice produces identical bytes") {
  const auto p1 = (tmp_dir() / "dup1.png").string();
  const auto p2 = (tmp_dir() / "dup2.png").string();
  const Image img = random_image(16, 16, 2);
  write_png(p1, img);
  write_png(p2, img);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), {});
  const std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);
  CHECK_FALSE(b1.empty());
}

TEST_CASE("missing file raises an i/o error naming the path") {
  const std::string path = (tmp_dir() / "does_not_exist.png").string();
  try {
    read_png(path);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find(path) != std::string::npos);
  }
}

TEST_CASE("garbage bytes raise an error naming the path") {
  const auto path = (tmp_dir() / "garbage.png").string();
  std::ofstream(path) << "this is not a png";
  CHECK_THROWS_AS(read_png(path), std::runtime_error);
}

TEST_CASE("filled constructor broadcasts the color") {
  const Image img = Image::filled(4, 3, 0.1f, 0.2f, 0.3f);
  CHECK(img.size() == 36);
  CHECK(img.pixel(3, 2)[0] == 0.1f);
  CHECK(img.pixel(0, 0)[2] == 0.3f);
}

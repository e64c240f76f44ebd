#include "scene/scene_io.h"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian and this code writes native bytes");

#include "core/error.h"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace nvs {

namespace {

json mat3_to_json(const Mat3& m) {
  json a = json::array();
  for (int i = 0; i < 9; ++i) a.push_back(m.m[i]);
  return a;
}

json extrinsics_to_json(const Camera& cam) {
  json a = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) a.push_back(cam.R.at(r, c));
    a.push_back(r == 0 ? cam.t.x : (r == 1 ? cam.t.y : cam.t.z));
  }
  return a;
}

double num_at(const json& a, size_t i) { return a.at(i).get<double>(); }

Camera camera_from_json(const json& v, const std::string& where) {
  const json& ki = v.at("intrinsics");
  const json& ex = v.at("extrinsics");
  if (!ki.is_array() || ki.size() != 9)
    throw FormatError(where + ": intrinsics must be a 9-element row-major 3x3 array");
  if (!ex.is_array() || ex.size() != 12)
    throw FormatError(where + ": extrinsics must be a 12-element row-major 3x4 array");
  Camera cam;
  cam.K.fx = num_at(ki, 0);
  cam.K.cx = num_at(ki, 2);
  cam.K.fy = num_at(ki, 4);
  cam.K.cy = num_at(ki, 5);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) cam.R.m[r * 3 + c] = num_at(ex, r * 4 + c);
  cam.t = {num_at(ex, 3), num_at(ex, 7), num_at(ex, 11)};
  cam.width = v.at("width").get<int>();
  cam.height = v.at("height").get<int>();
  return cam;
}

template <class T>
void write_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::istream& is, const std::string& path, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is)
    throw FormatError("checkpoint " + path + ": truncated while reading " + what);
  return v;
}

}  // namespace

Scene load_scene(const std::string& dir) {
  const fs::path manifest = fs::path(dir) / "scene.json";
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open scene manifest " + manifest.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("scene manifest " + manifest.string() + ": " + e.what());
  }

  Scene scene;
  try {
    scene.name = doc.at("name").get<std::string>();
    scene.near = doc.at("near").get<double>();
    scene.far = doc.at("far").get<double>();
    const json& views = doc.at("views");
    if (!views.is_array() || views.size() < 2)
      throw FormatError("scene manifest " + manifest.string() +
                        ": needs at least 2 views, found " +
                        std::to_string(views.is_array() ? views.size() : 0));
    scene.views.reserve(views.size());
    for (const json& v : views) {
      View view;
      view.image_name = v.at("image").get<std::string>();
      view.camera = camera_from_json(v, manifest.string() + " view " + view.image_name);
      view.camera.near = scene.near;
      view.camera.far = scene.far;
      scene.views.push_back(std::move(view));
    }
  } catch (const json::exception& e) {
    throw FormatError("scene manifest " + manifest.string() + ": " + e.what());
  }

  if (!(scene.near > 0) || !(scene.near < scene.far))
    throw FormatError("scene manifest " + manifest.string() + ": invalid bounds near=" +
                      std::to_string(scene.near) + " far=" + std::to_string(scene.far));

  for (View& view : scene.views) {
    const std::string where = manifest.string() + " view " + view.image_name;
    try {
      validate_camera(view.camera);
    } catch (const std::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    const fs::path img_path = fs::path(dir) / view.image_name;
    view.image = read_png(img_path.string());
    if (view.image.width != view.camera.width || view.image.height != view.camera.height)
      throw FormatError(where + ": image is " + std::to_string(view.image.width) + "x" +
                        std::to_string(view.image.height) + " but manifest says " +
                        std::to_string(view.camera.width) + "x" +
                        std::to_string(view.camera.height));
  }
  return scene;
}

void save_scene(const std::string& dir, const Scene& scene) {
  if (scene.views.size() < 2)
    throw ContractError("save_scene: needs at least 2 views");
  if (!(scene.near > 0) || !(scene.near < scene.far))
    throw ContractError("save_scene: invalid bounds near=" + std::to_string(scene.near) +
                        " far=" + std::to_string(scene.far));
  fs::create_directories(dir);
  json doc;
  doc["name"] = scene.name;
  doc["near"] = scene.near;
  doc["far"] = scene.far;
  json views = json::array();
  for (const View& view : scene.views) {
    validate_camera(view.camera);
    json v;
    v["image"] = view.image_name;
    v["width"] = view.camera.width;
    v["height"] = view.camera.height;
    json ki = json::array();
    Mat3 K;
    K.m[0] = view.camera.K.fx;
    K.m[2] = view.camera.K.cx;
    K.m[4] = view.camera.K.fy;
    K.m[5] = view.camera.K.cy;
    v["intrinsics"] = mat3_to_json(K);
    v["extrinsics"] = extrinsics_to_json(view.camera);
    views.push_back(std::move(v));
    write_png((fs::path(dir) / view.image_name).string(), view.image);
  }
  doc["views"] = std::move(views);

  const fs::path manifest = fs::path(dir) / "scene.json";
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw IoError("cannot write scene manifest " + manifest.string());
  out << doc.dump(2) << "\n";
  if (!out) throw IoError("failed writing scene manifest " + manifest.string());
}

void Checkpoint::add(const std::string& name, Tensor t) {
  if (!t.defined()) throw ContractError("checkpoint add: undefined tensor " + name);
  tensors.emplace_back(name, std::move(t));
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

Tensor Checkpoint::require(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t) throw FormatError("checkpoint is missing tensor " + name);
  return *t;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write("IBRN", 4);
  write_raw(out, ckpt.version);
  write_raw(out, ckpt.step);
  write_raw(out, ckpt.config_fingerprint);
  for (const auto& [name, t] : ckpt.tensors) {
    write_raw(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_raw(out, static_cast<uint8_t>(0));  // dtype: f32
    write_raw(out, static_cast<uint8_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) write_raw(out, static_cast<uint32_t>(t.dim(d)));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(sizeof(float) * t.size()));
  }
  if (!out) throw IoError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "IBRN", 4) != 0)
    throw FormatError("checkpoint " + path + ": bad magic, not a checkpoint file");
  Checkpoint ckpt;
  ckpt.version = read_raw<uint32_t>(in, path, "version");
  if (ckpt.version != kCheckpointVersion)
    throw VersionError("checkpoint " + path + ": file version " +
                       std::to_string(ckpt.version) + ", this build reads version " +
                       std::to_string(kCheckpointVersion));
  ckpt.step = read_raw<uint64_t>(in, path, "step");
  ckpt.config_fingerprint = read_raw<uint64_t>(in, path, "config fingerprint");

  while (true) {
    uint32_t name_len;
    in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    if (in.eof() && in.gcount() == 0) break;
    if (!in || in.gcount() != sizeof(name_len))
      throw FormatError("checkpoint " + path + ": truncated while reading record header");
    if (name_len > 4096)
      throw FormatError("checkpoint " + path + ": implausible tensor name length " +
                        std::to_string(name_len));
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw FormatError("checkpoint " + path + ": truncated while reading name");
    const auto dtype = read_raw<uint8_t>(in, path, "dtype");
    if (dtype != 0)
      throw FormatError("checkpoint " + path + ": tensor " + name +
                        " has unsupported dtype " + std::to_string(dtype));
    const auto rank = read_raw<uint8_t>(in, path, "rank");
    if (rank > 8)
      throw FormatError("checkpoint " + path + ": tensor " + name +
                        " has implausible rank " + std::to_string(rank));
    std::vector<int64_t> shape(rank);
    int64_t n = 1;
    for (int d = 0; d < rank; ++d) {
      shape[d] = read_raw<uint32_t>(in, path, "dims");
      n *= shape[d];
    }
    std::vector<float> values(static_cast<size_t>(n));
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(sizeof(float) * n));
    if (!in)
      throw FormatError("checkpoint " + path + ": truncated while reading tensor " + name);
    ckpt.tensors.emplace_back(name, Tensor::from_data(shape, values));
  }
  return ckpt;
}

}  // namespace nvs

#include "geometry/geometry.h"

#include <algorithm>
#include <string>

#include "core/rng.h"

namespace nvs {

Mat3 transpose(const Mat3& a) {
  Mat3 r;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) r.at(i, j) = a.at(j, i);
  }
  return r;
}

Mat3 matmul3(const Mat3& a, const Mat3& b) {
  Mat3 r;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double acc = 0;
      for (int k = 0; k < 3; ++k) acc += a.at(i, k) * b.at(k, j);
      r.at(i, j) = acc;
    }
  }
  return r;
}

Vec3 apply(const Mat3& a, const Vec3& v) {
  return {a.m[0] * v.x + a.m[1] * v.y + a.m[2] * v.z,
          a.m[3] * v.x + a.m[4] * v.y + a.m[5] * v.z,
          a.m[6] * v.x + a.m[7] * v.y + a.m[8] * v.z};
}

bool is_orthonormal(const Mat3& a, double tol) {
  const Mat3 shouldBeI = matmul3(a, transpose(a));
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const double want = i == j ? 1.0 : 0.0;
      if (std::abs(shouldBeI.at(i, j) - want) > tol) return false;
    }
  }
  return true;
}

Mat3 rotation_from_axes(const Vec3& x_axis, const Vec3& y_axis,
                        const Vec3& z_axis) {
  Mat3 r;
  r.m[0] = x_axis.x; r.m[1] = x_axis.y; r.m[2] = x_axis.z;
  r.m[3] = y_axis.x; r.m[4] = y_axis.y; r.m[5] = y_axis.z;
  r.m[6] = z_axis.x; r.m[7] = z_axis.y; r.m[8] = z_axis.z;
  return r;
}

Vec3 camera_center(const Camera& cam) {
  return apply(transpose(cam.R), -cam.t);
}

void validate_camera(const Camera& cam) {
  if (cam.K.fx <= 0 || cam.K.fy <= 0) {
    throw ContractError("camera focal lengths must be positive");
  }
  if (!(cam.near > 0) || !(cam.near < cam.far)) {
    throw ContractError("camera bounds must satisfy 0 < near < far, got " +
                        std::to_string(cam.near) + " / " +
                        std::to_string(cam.far));
  }
  if (cam.width <= 0 || cam.height <= 0) {
    throw ContractError("camera image size must be positive");
  }
  if (!is_orthonormal(cam.R, 1e-5)) {
    throw ContractError("camera rotation is not orthonormal within 1e-5");
  }
}

Projection project(const Camera& cam, const Vec3& x) {
  const Vec3 xc = apply(cam.R, x) + cam.t;
  Projection p;
  p.depth = -xc.z;
  p.in_front = p.depth > 1e-12;
  if (!p.in_front) return p;
  p.u = cam.K.cx + cam.K.fx * xc.x / p.depth;
  p.v = cam.K.cy + cam.K.fy * (-xc.y) / p.depth;
  return p;
}

Ray ray_for_pixel(const Camera& cam, double u, double v) {
  const Vec3 dir_cam = {(u - cam.K.cx) / cam.K.fx,
                        -(v - cam.K.cy) / cam.K.fy, -1.0};
  Ray r;
  r.origin = camera_center(cam);
  r.dir = normalized(apply(transpose(cam.R), dir_cam));
  return r;
}

Mat3 look_at_rotation(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 backward = normalized(eye - target);  // camera +z
  Vec3 right = cross(up, backward);
  const double n = norm(right);
  if (n < 1e-9) {
    // up is parallel to the view direction; pick another up
    right = cross(Vec3{1, 0, 0}, backward);
    if (norm(right) < 1e-9) right = cross(Vec3{0, 1, 0}, backward);
  }
  right = normalized(right);
  const Vec3 true_up = cross(backward, right);
  return rotation_from_axes(right, true_up, backward);
}

std::vector<double> sample_coarse(double near, double far, int m,
                                  Rng* jitter) {
  if (!(near > 0) || !(near < far)) {
    throw ContractError("sample_coarse: need 0 < near < far, got " +
                        std::to_string(near) + " / " + std::to_string(far));
  }
  if (m < 2) throw ContractError("sample_coarse: need at least 2 samples");
  const double s0 = 1.0 / near;
  const double ds = (1.0 / far - s0) / double(m - 1);
  std::vector<double> depths(m);
  for (int k = 0; k < m; ++k) {
    double pos = double(k);
    if (jitter) {
      pos = std::clamp(pos + jitter->uniform() - 0.5, 0.0, double(m - 1));
    }
    depths[k] = 1.0 / (s0 + pos * ds);
  }
  return depths;
}

std::vector<double> delta_intervals(const std::vector<double>& depths,
                                    double cap) {
  std::vector<double> deltas(depths.size());
  for (size_t i = 0; i + 1 < depths.size(); ++i) {
    deltas[i] = depths[i + 1] - depths[i];
  }
  if (!depths.empty()) deltas.back() = cap;
  return deltas;
}

RelativeDirection relative_direction(const Vec3& d, const Vec3& d_i) {
  return {d - d_i, dot(d, d_i)};
}

}  // namespace nvs

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "core/error.h"

namespace nvs {

class Rng;

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
};

inline double dot(const Vec3& a, const Vec3& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z,
          a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(const Vec3& a) {
  const double n = norm(a);
  if (n == 0.0) throw ContractError("cannot normalize a zero vector");
  return a * (1.0 / n);
}

// Row-major 3x3.
struct Mat3 {
  double m[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Mat3 identity() { return {}; }
  double& at(int r, int c) { return m[r * 3 + c]; }
  double at(int r, int c) const { return m[r * 3 + c]; }
};

Mat3 transpose(const Mat3& a);
Mat3 matmul3(const Mat3& a, const Mat3& b);
Vec3 apply(const Mat3& a, const Vec3& v);
bool is_orthonormal(const Mat3& a, double tol);

// Rotation with rows = camera axes expressed in world coordinates: maps
// world directions into the camera frame directly.
Mat3 rotation_from_axes(const Vec3& x_axis, const Vec3& y_axis,
                        const Vec3& z_axis);

struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
};

// Pinhole camera. Pose is the world-to-camera transform: x_cam = R x + t.
// Camera frame: x right, y up, z toward the viewer (looks down -z);
// image: u right, v down. depth = -z_cam.
struct Camera {
  Intrinsics K;
  Mat3 R;
  Vec3 t;
  int width = 0, height = 0;
  double near = 0, far = 0;
};

struct Ray {
  Vec3 origin;
  Vec3 dir;  // unit length
};

inline Vec3 point_at(const Ray& r, double depth) {
  return r.origin + r.dir * depth;
}

struct Projection {
  double u = 0, v = 0;
  double depth = 0;     // camera-space depth, positive in front
  bool in_front = false;
};

Vec3 camera_center(const Camera& cam);

// Throws ContractError when an invariant fails (focal lengths positive,
// near < far, rotation orthonormal within 1e-5).
void validate_camera(const Camera& cam);

Projection project(const Camera& cam, const Vec3& x);

// (u, v) are continuous image coordinates; pass (i + 0.5, j + 0.5) for the
// center of pixel (i, j).
Ray ray_for_pixel(const Camera& cam, double u, double v);

// Camera looking from `eye` toward `target`, `up` fixing the roll.
Mat3 look_at_rotation(const Vec3& eye, const Vec3& target, const Vec3& up);

// M depths with equidistant spacing in disparity (1/depth). With an rng the
// samples are stratified: each is drawn uniformly in its own disparity bin,
// so ordering and the [near, far] bracket still hold.
std::vector<double> sample_coarse(double near, double far, int m, Rng* jitter);

// Quadrature intervals for ascending depths; the final open interval gets a
// fixed cap so the last term stays bounded.
std::vector<double> delta_intervals(const std::vector<double>& depths,
                                    double cap);

struct RelativeDirection {
  Vec3 delta;  // d - d_i
  double cos_angle;
};
RelativeDirection relative_direction(const Vec3& d, const Vec3& d_i);

}  // namespace nvs

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "sne/error.hpp"

namespace sne {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  constexpr double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }
  constexpr double& operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }

  friend constexpr Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend constexpr Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend constexpr Vec3 operator-(Vec3 a) { return {-a.x, -a.y, -a.z}; }
  friend constexpr Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend constexpr Vec3 operator*(Vec3 a, double s) { return s * a; }
  friend constexpr Vec3 operator/(Vec3 a, double s) { return {a.x / s, a.y / s, a.z / s}; }
  friend constexpr bool operator==(Vec3 a, Vec3 b) = default;
};

constexpr double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

constexpr Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
constexpr double squared_distance(Vec3 a, Vec3 b) { return dot(a - b, a - b); }
inline double distance(Vec3 a, Vec3 b) { return std::sqrt(squared_distance(a, b)); }

inline bool is_finite(Vec3 a) {
  return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z);
}

inline Vec3 normalized(Vec3 a) {
  const double n = norm(a);
  if (!(n > 0.0) || !std::isfinite(n)) throw InvalidArgument("cannot normalize a zero-length vector");
  return a / n;
}

/// Row-major 3x3 matrix.
struct Mat3 {
  std::array<std::array<double, 3>, 3> m{};

  static constexpr Mat3 identity() {
    Mat3 r;
    r.m[0][0] = r.m[1][1] = r.m[2][2] = 1.0;
    return r;
  }
  constexpr double operator()(std::size_t r, std::size_t c) const { return m[r][c]; }
  constexpr double& operator()(std::size_t r, std::size_t c) { return m[r][c]; }

  constexpr Vec3 row(std::size_t r) const { return {m[r][0], m[r][1], m[r][2]}; }
  constexpr Vec3 col(std::size_t c) const { return {m[0][c], m[1][c], m[2][c]}; }

  constexpr Mat3 transposed() const {
    Mat3 t;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) t.m[i][j] = m[j][i];
    return t;
  }

  constexpr double determinant() const {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  }

  friend constexpr Vec3 operator*(const Mat3& a, Vec3 v) {
    return {dot(a.row(0), v), dot(a.row(1), v), dot(a.row(2), v)};
  }
  friend constexpr Mat3 operator*(const Mat3& a, const Mat3& b) {
    Mat3 r;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t k = 0; k < 3; ++k) r.m[i][j] += a.m[i][k] * b.m[k][j];
    return r;
  }
};

/// Rotation about a unit axis (Rodrigues).
inline Mat3 axis_angle_rotation(Vec3 axis, double angle) {
  const Vec3 k = normalized(axis);
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  Mat3 r;
  r.m = {{{t * k.x * k.x + c, t * k.x * k.y - s * k.z, t * k.x * k.z + s * k.y},
          {t * k.x * k.y + s * k.z, t * k.y * k.y + c, t * k.y * k.z - s * k.x},
          {t * k.x * k.z - s * k.y, t * k.y * k.z + s * k.x, t * k.z * k.z + c}}};
  return r;
}

/// A set of 3D points with optional ground-truth unit normals.
struct PointCloud {
  std::vector<Vec3> points;
  std::optional<std::vector<Vec3>> normals;
  std::string name;

  std::size_t size() const { return points.size(); }
  bool has_normals() const { return normals.has_value(); }

  /// Throws DataError if the cloud violates its invariants.
  void validate() const {
    if (points.empty()) throw DataError("point cloud '" + name + "' is empty");
    for (std::size_t i = 0; i < points.size(); ++i)
      if (!is_finite(points[i]))
        throw DataError("point " + std::to_string(i) + " has a non-finite coordinate");
    if (normals) {
      if (normals->size() != points.size())
        throw DataError("normal count " + std::to_string(normals->size()) +
                        " does not match point count " + std::to_string(points.size()));
      for (std::size_t i = 0; i < normals->size(); ++i)
        if (std::abs(norm((*normals)[i]) - 1.0) > 1e-6)
          throw DataError("normal " + std::to_string(i) + " is not unit length");
    }
  }

  /// Axis-aligned bounding box diagonal length.
  double bounding_box_diagonal() const {
    if (points.empty()) return 0.0;
    Vec3 lo = points.front(), hi = points.front();
    for (const Vec3& p : points)
      for (std::size_t d = 0; d < 3; ++d) {
        lo[d] = std::min(lo[d], p[d]);
        hi[d] = std::max(hi[d], p[d]);
      }
    return norm(hi - lo);
  }
};

/// Unoriented angle between two directions, in radians within [0, pi/2].
/// Equal to arccos(|a.b| / (|a||b|)) but evaluated as atan2(|a x b|, |a.b|),
/// which stays accurate for nearly parallel vectors where arccos bottoms out
/// near 1.5e-8.
inline double angular_error(Vec3 a, Vec3 b) {
  if (!(norm(a) > 0.0) || !(norm(b) > 0.0)) throw InvalidArgument("angular_error of a zero-length vector");
  return std::atan2(norm(cross(a, b)), std::abs(dot(a, b)));
}

inline constexpr double radians_to_degrees(double r) { return r * 180.0 / std::numbers::pi; }
inline constexpr double degrees_to_radians(double d) { return d * std::numbers::pi / 180.0; }

}  // namespace sne

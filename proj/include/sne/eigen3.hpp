#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>

#include "sne/error.hpp"
#include "sne/geometry.hpp"

namespace sne {

/// Eigenpairs of a symmetric 3x3 matrix. Column i of `vectors` pairs with
/// `values[i]`; values are descending.
struct SymmetricEigen3 {
  std::array<double, 3> values{};
  Mat3 vectors = Mat3::identity();
};

/// Cyclic Jacobi sweeps until the off-diagonal mass is negligible.
///
/// Sign convention: the largest-magnitude component of each eigenvector is
/// positive (first such component on ties), then the third column is flipped
/// if needed so that det(vectors) = +1.
inline SymmetricEigen3 symmetric_eigen3(const Mat3& input) {
  Mat3 a = input;
  Mat3 v = Mat3::identity();
  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
    const double diag = a(0, 0) * a(0, 0) + a(1, 1) * a(1, 1) + a(2, 2) * a(2, 2);
    if (off == 0.0 || off <= 1e-32 * diag) break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        // A <- J^T A J with the rotation in the (p, q) plane.
        for (int k = 0; k < 3; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < 3; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return a(i, i) > a(j, j); });

  SymmetricEigen3 out;
  for (int c = 0; c < 3; ++c) {
    out.values[c] = a(order[c], order[c]);
    Vec3 col = v.col(order[c]);
    int big = 0;
    for (int k = 1; k < 3; ++k)
      if (std::abs(col[k]) > std::abs(col[big])) big = k;
    if (col[big] < 0.0) col = -col;
    for (int k = 0; k < 3; ++k) out.vectors(k, c) = col[k];
  }
  if (out.vectors.determinant() < 0.0)
    for (int k = 0; k < 3; ++k) out.vectors(k, 2) = -out.vectors(k, 2);
  return out;
}

/// Covariance (divided by n) of a point set about its centroid.
inline Mat3 covariance(std::span<const Vec3> points) {
  if (points.empty()) throw InvalidArgument("covariance of an empty point set");
  Vec3 mean;
  for (const Vec3& p : points) mean = mean + p;
  mean = mean / static_cast<double>(points.size());
  Mat3 c;
  for (const Vec3& p : points) {
    const Vec3 d = p - mean;
    for (int i = 0; i < 3; ++i)
      for (int j = i; j < 3; ++j) c(i, j) += d[i] * d[j];
  }
  const double inv = 1.0 / static_cast<double>(points.size());
  for (int i = 0; i < 3; ++i)
    for (int j = i; j < 3; ++j) {
      c(i, j) *= inv;
      c(j, i) = c(i, j);
    }
  return c;
}

inline SymmetricEigen3 covariance_eigendecomposition(std::span<const Vec3> points) {
  if (points.size() < 3) throw InvalidArgument("covariance eigendecomposition needs at least 3 points");
  return symmetric_eigen3(covariance(points));
}

}  // namespace sne

#pragma once

#include <algorithm>
#include <cstddef>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "sne/eigen3.hpp"
#include "sne/error.hpp"
#include "sne/geometry.hpp"
#include "sne/knn.hpp"

namespace sne {

/// The k nearest neighbors of a query point (query included).
struct Patch {
  std::size_t center_index = 0;
  std::vector<std::size_t> indices;
  std::vector<Vec3> positions;
  std::optional<std::vector<Vec3>> gt_normals;

  std::size_t size() const { return positions.size(); }

  /// Position of the query point within `indices`.
  std::size_t center_slot() const {
    const auto it = std::find(indices.begin(), indices.end(), center_index);
    return static_cast<std::size_t>(it - indices.begin());
  }
};

/// Maps world coordinates into the canonical patch frame:
///   canonical = rotation * (p - translation) / scale
struct PatchTransform {
  Vec3 translation;
  Mat3 rotation = Mat3::identity();  // rows are the PCA axes, descending variance
  double scale = 1.0;

  Vec3 apply(Vec3 p) const { return rotation * ((p - translation) / scale); }
  Vec3 rotate(Vec3 direction) const { return rotation * direction; }
};

struct NormalizedPatch {
  std::vector<Vec3> positions;
  PatchTransform transform;
  std::size_t center_slot = 0;
  bool degenerate = false;  // collinear input: rotation left at identity

  std::size_t size() const { return positions.size(); }
};

inline Patch extract_patch(const PointCloud& cloud, const KnnIndex& index, std::size_t query_index,
                           std::size_t k) {
  if (query_index >= cloud.size())
    throw InvalidArgument("query index " + std::to_string(query_index) + " out of range");
  if (k == 0 || k > cloud.size())
    throw InvalidArgument("patch size " + std::to_string(k) + " invalid for a cloud of " +
                          std::to_string(cloud.size()) + " points");
  Patch patch;
  patch.center_index = query_index;
  patch.indices = index.query(cloud.points[query_index], k);
  // Coincident points with lower indices can outrank the query itself.
  if (std::find(patch.indices.begin(), patch.indices.end(), query_index) == patch.indices.end())
    patch.indices.back() = query_index;
  patch.positions.reserve(k);
  for (std::size_t i : patch.indices) patch.positions.push_back(cloud.points[i]);
  if (cloud.normals) {
    patch.gt_normals.emplace();
    patch.gt_normals->reserve(k);
    for (std::size_t i : patch.indices) patch.gt_normals->push_back((*cloud.normals)[i]);
  }
  return patch;
}

enum class DegeneratePolicy { fallback, strict };

/// Query-centered, radius-normalized, PCA-aligned copy of a patch.
///
/// Collinear patches either throw DegeneratePatch (strict) or keep an identity
/// rotation with a warning on stderr (fallback). Patches whose points all
/// coincide with the query always throw.
inline NormalizedPatch normalize_patch(const Patch& patch,
                                       DegeneratePolicy policy = DegeneratePolicy::fallback) {
  if (patch.positions.empty()) throw InvalidArgument("cannot normalize an empty patch");
  NormalizedPatch out;
  out.center_slot = patch.center_slot();
  if (out.center_slot >= patch.size()) throw InvalidArgument("patch does not contain its query point");
  const Vec3 center = patch.positions[out.center_slot];

  double radius = 0.0;
  for (const Vec3& p : patch.positions) radius = std::max(radius, distance(p, center));
  if (!(radius > 0.0)) throw DegeneratePatch("patch points all coincide with the query point");

  out.transform.translation = center;
  out.transform.scale = radius;
  out.positions.reserve(patch.size());
  for (const Vec3& p : patch.positions) out.positions.push_back((p - center) / radius);

  bool collinear = patch.size() < 3;
  if (!collinear) {
    const SymmetricEigen3 eig = covariance_eigendecomposition(out.positions);
    collinear = !(eig.values[1] > 1e-12 * std::max(eig.values[0], 1e-300));
    if (!collinear) {
      out.transform.rotation = eig.vectors.transposed();
      for (Vec3& p : out.positions) p = out.transform.rotation * p;
    }
  }
  if (collinear) {
    if (policy == DegeneratePolicy::strict)
      throw DegeneratePatch("patch around point " + std::to_string(patch.center_index) +
                            " is collinear");
    std::cerr << "warning: collinear patch around point " << patch.center_index
              << "; using translation and scale only\n";
    out.degenerate = true;
  }
  return out;
}

/// Maps a direction from the canonical patch frame back to world space.
inline Vec3 denormalize_normal(const PatchTransform& transform, Vec3 n) {
  if (!is_finite(n)) throw InvalidArgument("non-finite normal");
  return normalized(transform.rotation.transposed() * n);
}

}  // namespace sne

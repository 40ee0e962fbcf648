#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "sne/error.hpp"
#include "sne/geometry.hpp"

namespace sne {

/// Exact k-nearest-neighbor index over a fixed set of points (bucketed
/// kd-tree, median splits on the widest axis). Immutable after construction;
/// concurrent queries are safe.
///
/// Results are ordered by (squared distance, point index), so ties resolve to
/// the lower index.
class KnnIndex {
 public:
  static constexpr std::size_t kLeafSize = 12;

  explicit KnnIndex(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
    if (points_.empty()) throw InvalidArgument("cannot index an empty point set");
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::uint32_t{0});
    nodes_.reserve(2 * points_.size() / kLeafSize + 1);
    build(0, order_.size());
  }

  explicit KnnIndex(const PointCloud& cloud) : KnnIndex(std::span<const Vec3>(cloud.points)) {}

  std::size_t point_count() const { return points_.size(); }
  const Vec3& point(std::size_t i) const { return points_[i]; }

  /// Indices of the min(k, point_count) nearest points to `query`.
  std::vector<std::size_t> query(Vec3 query, std::size_t k) const {
    if (k == 0) throw InvalidArgument("k must be at least 1");
    k = std::min(k, points_.size());
    std::vector<Candidate> heap;
    heap.reserve(k + 1);
    search(0, query, k, heap);
    std::sort_heap(heap.begin(), heap.end());
    std::vector<std::size_t> out(heap.size());
    for (std::size_t i = 0; i < heap.size(); ++i) out[i] = heap[i].index;
    return out;
  }

 private:
  struct Candidate {
    double dist2;
    std::size_t index;
    bool operator<(const Candidate& o) const {
      return dist2 < o.dist2 || (dist2 == o.dist2 && index < o.index);
    }
  };

  struct Node {
    Vec3 lo, hi;  // bounding box of the node's points
    std::uint32_t begin = 0, end = 0;
    std::int32_t left = -1, right = -1;
  };

  std::int32_t build(std::size_t begin, std::size_t end) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.emplace_back();
    Vec3 lo = points_[order_[begin]], hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
      const Vec3& p = points_[order_[i]];
      for (std::size_t d = 0; d < 3; ++d) {
        lo[d] = std::min(lo[d], p[d]);
        hi[d] = std::max(hi[d], p[d]);
      }
    }
    nodes_[id].lo = lo;
    nodes_[id].hi = hi;
    nodes_[id].begin = static_cast<std::uint32_t>(begin);
    nodes_[id].end = static_cast<std::uint32_t>(end);
    if (end - begin <= kLeafSize) return id;

    std::size_t axis = 0;
    for (std::size_t d = 1; d < 3; ++d)
      if (hi[d] - lo[d] > hi[axis] - lo[axis]) axis = d;
    if (hi[axis] - lo[axis] <= 0.0) return id;  // all coincident

    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) {
                       const double pa = points_[a][axis], pb = points_[b][axis];
                       return pa < pb || (pa == pb && a < b);
                     });
    const std::int32_t left = build(begin, mid);
    const std::int32_t right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  static double box_distance2(const Node& n, Vec3 q) {
    double d2 = 0.0;
    for (std::size_t d = 0; d < 3; ++d) {
      const double excess = std::max({n.lo[d] - q[d], 0.0, q[d] - n.hi[d]});
      d2 += excess * excess;
    }
    return d2;
  }

  void offer(std::vector<Candidate>& heap, std::size_t k, Candidate c) const {
    if (heap.size() < k) {
      heap.push_back(c);
      std::push_heap(heap.begin(), heap.end());
    } else if (c < heap.front()) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = c;
      std::push_heap(heap.begin(), heap.end());
    }
  }

  void search(std::int32_t id, Vec3 q, std::size_t k, std::vector<Candidate>& heap) const {
    const Node& n = nodes_[id];
    if (n.left < 0) {
      for (std::uint32_t i = n.begin; i < n.end; ++i)
        offer(heap, k, {squared_distance(points_[order_[i]], q), order_[i]});
      return;
    }
    const double dl = box_distance2(nodes_[n.left], q);
    const double dr = box_distance2(nodes_[n.right], q);
    const auto first = dl <= dr ? n.left : n.right;
    const auto second = dl <= dr ? n.right : n.left;
    const double d_first = std::min(dl, dr), d_second = std::max(dl, dr);
    // Boxes at exactly the current worst distance may still hold a lower-index tie.
    if (heap.size() < k || d_first <= heap.front().dist2) search(first, q, k, heap);
    if (heap.size() < k || d_second <= heap.front().dist2) search(second, q, k, heap);
  }

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

inline KnnIndex build_knn_index(const PointCloud& cloud) {
  if (cloud.points.empty()) throw InvalidArgument("cannot index an empty point cloud");
  return KnnIndex(cloud);
}

inline std::vector<std::size_t> query_knn(const KnnIndex& index, Vec3 query, std::size_t k) {
  return index.query(query, k);
}

}  // namespace sne

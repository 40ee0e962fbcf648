#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sne/classical.hpp"
#include "sne/io.hpp"
#include "sne/knn.hpp"
#include "sne/model.hpp"
#include "sne/patch.hpp"

namespace sne {

// ---------------------------------------------------------------------------
// Metrics

inline std::vector<double> unoriented_errors(std::span<const Vec3> predicted, std::span<const Vec3> ground_truth) {
  if (predicted.size() != ground_truth.size())
    throw InvalidArgument("prediction count " + std::to_string(predicted.size()) + " does not match " +
                          std::to_string(ground_truth.size()) + " ground-truth normals");
  std::vector<double> out(predicted.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = angular_error(predicted[i], ground_truth[i]);
  return out;
}

/// Root mean square of per-point errors given in radians, in degrees.
inline double rmse_degrees_from_errors(std::span<const double> errors) {
  if (errors.empty()) throw InvalidArgument("rmse of an empty set");
  double sq = 0.0;
  for (double e : errors) sq += e * e;
  return radians_to_degrees(std::sqrt(sq / static_cast<double>(errors.size())));
}

inline double rmse(std::span<const Vec3> predicted, std::span<const Vec3> ground_truth) {
  return rmse_degrees_from_errors(unoriented_errors(predicted, ground_truth));
}

inline std::vector<double> default_pgp_alphas() {
  std::vector<double> a;
  for (int d = 0; d <= 30; ++d) a.push_back(d);
  return a;
}

/// Fraction of errors strictly below each threshold (degrees).
inline std::vector<double> pgp_from_errors(std::span<const double> errors, std::span<const double> alphas_degrees) {
  if (errors.empty()) throw InvalidArgument("pgp of an empty set");
  std::vector<double> sorted_deg(errors.size());
  for (std::size_t i = 0; i < errors.size(); ++i) sorted_deg[i] = radians_to_degrees(errors[i]);
  std::sort(sorted_deg.begin(), sorted_deg.end());
  std::vector<double> out;
  for (double alpha : alphas_degrees) {
    const auto below = std::lower_bound(sorted_deg.begin(), sorted_deg.end(), alpha) - sorted_deg.begin();
    out.push_back(static_cast<double>(below) / static_cast<double>(errors.size()));
  }
  return out;
}

inline std::vector<double> pgp_curve(std::span<const Vec3> predicted, std::span<const Vec3> ground_truth,
                                     std::span<const double> alphas_degrees) {
  return pgp_from_errors(unoriented_errors(predicted, ground_truth), alphas_degrees);
}

inline std::vector<double> pgp_curve(std::span<const Vec3> predicted, std::span<const Vec3> ground_truth) {
  return pgp_curve(predicted, ground_truth, default_pgp_alphas());
}

// ---------------------------------------------------------------------------
// Estimators

/// A per-point normal estimator over a cloud and its search index.
struct NormalEstimator {
  std::string method;
  std::size_t k = 0;
  std::function<Vec3(const PointCloud&, const KnnIndex&, std::size_t)> estimate;
};

inline NormalEstimator pca_estimator(std::size_t k) {
  return {"pca", k, [k](const PointCloud& c, const KnnIndex& idx, std::size_t i) {
            return estimate_normal_pca(extract_patch(c, idx, i, k));
          }};
}

inline NormalEstimator jet_estimator(std::size_t k, int order = kDefaultJetOrder) {
  return {"jet", k, [k, order](const PointCloud& c, const KnnIndex& idx, std::size_t i) {
            return estimate_normal_jet(extract_patch(c, idx, i, k), order);
          }};
}

/// Learned model: one patch per query, the query's own prediction.
inline NormalEstimator model_estimator(std::shared_ptr<const ad::ParameterSet> weights, ModelConfig config,
                                       std::size_t k, std::string name = "model") {
  if (k < config.graph_k)
    throw InvalidArgument("patch size " + std::to_string(k) + " is smaller than graph_k " +
                          std::to_string(config.graph_k));
  return {std::move(name), k, [weights, config, k](const PointCloud& c, const KnnIndex& idx, std::size_t i) {
            const NormalizedPatch patch = normalize_patch(extract_patch(c, idx, i, k));
            const auto normals = predict_patch(*weights, config, prepare_input(patch, config));
            return denormalize_normal(patch.transform, normals[patch.center_slot]);
          }};
}

class EstimationFailed : public NumericalError {
 public:
  EstimationFailed(const std::string& what, std::vector<std::size_t> indices)
      : NumericalError(what), indices_(std::move(indices)) {}
  const std::vector<std::size_t>& indices() const { return indices_; }

 private:
  std::vector<std::size_t> indices_;
};

/// Normals at `queries`, in query order. Workers take a fixed strided share.
inline std::vector<Vec3> estimate_normals(const PointCloud& cloud, const KnnIndex& index,
                                          const NormalEstimator& estimator, std::span<const std::size_t> queries,
                                          std::size_t threads = 1) {
  if (estimator.k > cloud.size())
    throw InvalidArgument("patch size " + std::to_string(estimator.k) + " exceeds the cloud's " +
                          std::to_string(cloud.size()) + " points");
  std::vector<Vec3> out(queries.size());
  std::vector<std::string> errors(queries.size());
  auto work = [&](std::size_t worker, std::size_t stride) {
    for (std::size_t q = worker; q < queries.size(); q += stride) {
      try {
        out[q] = estimator.estimate(cloud, index, queries[q]);
      } catch (const Error& e) {
        errors[q] = e.what();
      }
    }
  };
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(queries.size(), 1));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& t : pool) t.join();
  }
  std::vector<std::size_t> failed;
  std::string first;
  for (std::size_t q = 0; q < queries.size(); ++q)
    if (!errors[q].empty()) {
      if (failed.empty()) first = errors[q];
      failed.push_back(queries[q]);
    }
  if (!failed.empty()) {
    std::string list;
    for (std::size_t i = 0; i < std::min<std::size_t>(failed.size(), 20); ++i)
      list += (i ? ", " : "") + std::to_string(failed[i]);
    if (failed.size() > 20) list += ", ...";
    throw EstimationFailed(estimator.method + " failed on " + std::to_string(failed.size()) + " points (" + list +
                               "); first error: " + first,
                           std::move(failed));
  }
  return out;
}

inline std::vector<Vec3> estimate_all_normals(const PointCloud& cloud, const NormalEstimator& estimator,
                                              std::size_t threads = 1) {
  const KnnIndex index(cloud);
  std::vector<std::size_t> all(cloud.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return estimate_normals(cloud, index, estimator, all, threads);
}

// ---------------------------------------------------------------------------
// Reports

struct EvalReport {
  std::string cloud;
  std::string method;
  std::string corruption;
  std::size_t k = 0;
  std::size_t stride = 1;
  std::vector<std::size_t> indices;
  std::vector<double> per_point_errors;  // radians
  double rmse_degrees = 0.0;
  std::vector<double> pgp_alphas;
  std::vector<double> pgp;
  double seconds = 0.0;
  double points_per_second = 0.0;
};

inline std::vector<std::size_t> strided_indices(std::size_t n, std::size_t stride) {
  if (stride == 0) throw InvalidArgument("stride must be positive");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; i += stride) out.push_back(i);
  return out;
}

inline EvalReport report_from_predictions(std::string cloud_name, std::string method, std::vector<std::size_t> indices,
                                          std::span<const Vec3> predicted, std::span<const Vec3> ground_truth) {
  EvalReport r;
  r.cloud = std::move(cloud_name);
  r.method = std::move(method);
  r.indices = std::move(indices);
  r.per_point_errors = unoriented_errors(predicted, ground_truth);
  r.rmse_degrees = rmse_degrees_from_errors(r.per_point_errors);
  r.pgp_alphas = default_pgp_alphas();
  r.pgp = pgp_from_errors(r.per_point_errors, r.pgp_alphas);
  return r;
}

struct EvalOptions {
  std::size_t stride = 1;
  std::size_t threads = 1;
  std::string corruption = "none";
};

/// Runs the estimator at every `stride`-th point and scores it against the
/// cloud's normals.
inline EvalReport evaluate_cloud(const PointCloud& cloud, const NormalEstimator& estimator,
                                 const EvalOptions& options = {}) {
  if (!cloud.has_normals()) throw InvalidArgument("evaluation needs ground-truth normals");
  const KnnIndex index(cloud);
  const auto queries = strided_indices(cloud.size(), options.stride);
  const auto t0 = std::chrono::steady_clock::now();
  const auto predicted = estimate_normals(cloud, index, estimator, queries, options.threads);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::vector<Vec3> gt;
  gt.reserve(queries.size());
  for (std::size_t q : queries) gt.push_back((*cloud.normals)[q]);
  EvalReport r = report_from_predictions(cloud.name, estimator.method, queries, predicted, gt);
  r.corruption = options.corruption;
  r.k = estimator.k;
  r.stride = options.stride;
  r.seconds = seconds;
  r.points_per_second = seconds > 0.0 ? static_cast<double>(queries.size()) / seconds : 0.0;
  return r;
}

/// RMSE over all points of all reports together.
inline double pooled_rmse_degrees(std::span<const EvalReport> reports) {
  std::vector<double> all;
  for (const EvalReport& r : reports) all.insert(all.end(), r.per_point_errors.begin(), r.per_point_errors.end());
  return rmse_degrees_from_errors(all);
}

/// Average of per-cloud RMSE values.
inline double mean_rmse_degrees(std::span<const EvalReport> reports) {
  if (reports.empty()) throw InvalidArgument("no reports");
  double s = 0.0;
  for (const EvalReport& r : reports) s += r.rmse_degrees;
  return s / static_cast<double>(reports.size());
}

inline nlohmann::json to_json(const EvalReport& r, bool include_timing = true) {
  nlohmann::json j{{"cloud", r.cloud},
                   {"method", r.method},
                   {"corruption", r.corruption},
                   {"k", r.k},
                   {"stride", r.stride},
                   {"points", r.per_point_errors.size()},
                   {"rmse_degrees", r.rmse_degrees},
                   {"pgp", {{"alpha_degrees", r.pgp_alphas}, {"fraction", r.pgp}}},
                   {"indices", r.indices},
                   {"per_point_errors_radians", r.per_point_errors}};
  if (include_timing) j["timing"] = {{"seconds", r.seconds}, {"points_per_second", r.points_per_second}};
  return j;
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.cloud = j.at("cloud").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.corruption = j.value("corruption", std::string("none"));
    r.k = j.value("k", std::size_t{0});
    r.stride = j.value("stride", std::size_t{1});
    r.rmse_degrees = j.at("rmse_degrees").get<double>();
    r.pgp_alphas = j.at("pgp").at("alpha_degrees").get<std::vector<double>>();
    r.pgp = j.at("pgp").at("fraction").get<std::vector<double>>();
    r.indices = j.at("indices").get<std::vector<std::size_t>>();
    r.per_point_errors = j.at("per_point_errors_radians").get<std::vector<double>>();
    if (j.contains("timing")) {
      r.seconds = j["timing"].value("seconds", 0.0);
      r.points_per_second = j["timing"].value("points_per_second", 0.0);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed evaluation report: ") + e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Heatmap

// Linear ramp: 0 deg -> blue (0, 0, 255), >= 60 deg -> red (255, 0, 0).
inline constexpr double kHeatmapMaxDegrees = 60.0;

struct Rgb {
  unsigned char r, g, b;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

inline Rgb heatmap_color(double error_radians) {
  const double t = std::clamp(radians_to_degrees(error_radians) / kHeatmapMaxDegrees, 0.0, 1.0);
  const auto level = [](double x) { return static_cast<unsigned char>(std::lround(255.0 * x)); };
  return {level(t), 0, level(1.0 - t)};
}

inline void export_error_heatmap(std::span<const Vec3> points, std::span<const double> errors,
                                 const std::filesystem::path& path) {
  if (points.size() != errors.size())
    throw InvalidArgument("heatmap: " + std::to_string(points.size()) + " points but " +
                          std::to_string(errors.size()) + " errors");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "ply\nformat ascii 1.0\n"
      << "comment normal error heatmap: linear ramp 0 deg = (0,0,255) to " << kHeatmapMaxDegrees
      << " deg and above = (255,0,0)\n"
      << "element vertex " << points.size() << "\n"
      << "property double x\nproperty double y\nproperty double z\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "end_header\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Rgb c = heatmap_color(errors[i]);
    out << detail::format_double(points[i].x) << ' ' << detail::format_double(points[i].y) << ' ' << detail::format_double(points[i].z) << ' '
        << int(c.r) << ' ' << int(c.g) << ' ' << int(c.b) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Timing

struct BenchmarkStats {
  std::string method;
  std::size_t points = 0;
  double warmup_seconds = 0.0;
  std::vector<double> run_seconds;
  double median_seconds = 0.0;
  double spread_seconds = 0.0;  // max - min
  double points_per_second = 0.0;
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw InvalidArgument("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// One untimed warm-up call, then `repetitions` timed calls of `run`.
inline BenchmarkStats benchmark_inference(const std::string& method, const std::function<void()>& run,
                                          std::size_t points, std::size_t repetitions) {
  if (repetitions < 3) throw InvalidArgument("benchmark needs at least 3 repetitions");
  using clock = std::chrono::steady_clock;
  BenchmarkStats s;
  s.method = method;
  s.points = points;
  auto t0 = clock::now();
  run();
  s.warmup_seconds = std::chrono::duration<double>(clock::now() - t0).count();
  for (std::size_t r = 0; r < repetitions; ++r) {
    t0 = clock::now();
    run();
    s.run_seconds.push_back(std::chrono::duration<double>(clock::now() - t0).count());
  }
  s.median_seconds = median(s.run_seconds);
  const auto [lo, hi] = std::minmax_element(s.run_seconds.begin(), s.run_seconds.end());
  s.spread_seconds = *hi - *lo;
  s.points_per_second = s.median_seconds > 0.0 ? static_cast<double>(points) / s.median_seconds : 0.0;
  return s;
}

inline BenchmarkStats benchmark_estimator(const NormalEstimator& estimator, const PointCloud& cloud,
                                          std::size_t repetitions, std::size_t stride = 1, std::size_t threads = 1) {
  const KnnIndex index(cloud);
  const auto queries = strided_indices(cloud.size(), stride);
  return benchmark_inference(
      estimator.method, [&] { estimate_normals(cloud, index, estimator, queries, threads); }, queries.size(),
      repetitions);
}

}  // namespace sne

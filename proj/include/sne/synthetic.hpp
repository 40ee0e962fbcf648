#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "sne/error.hpp"
#include "sne/geometry.hpp"
#include "sne/random.hpp"

namespace sne {

enum class ShapeKind { plane, sphere, cylinder, saddle, torus };

inline std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::plane: return "plane";
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::cylinder: return "cylinder";
    case ShapeKind::saddle: return "saddle";
    case ShapeKind::torus: return "torus";
  }
  return "?";
}

inline ShapeKind parse_shape_kind(const std::string& s) {
  for (ShapeKind k : {ShapeKind::plane, ShapeKind::sphere, ShapeKind::cylinder, ShapeKind::saddle, ShapeKind::torus})
    if (to_string(k) == s) return k;
  throw InvalidArgument("unknown shape '" + s + "' (expected plane, sphere, cylinder, saddle, torus)");
}

/// Analytic surface to sample.
///   plane     z = 0 over [-extent, extent]^2
///   sphere    |p| = radius
///   cylinder  x^2 + y^2 = radius^2, |z| <= height / 2
///   saddle    z = curvature * x * y over [-extent, extent]^2
///   torus     major radius `radius`, tube radius `minor_radius`, axis z
struct SyntheticShape {
  ShapeKind kind = ShapeKind::sphere;
  double radius = 1.0;
  double minor_radius = 0.4;
  double height = 2.0;
  double extent = 1.0;
  double curvature = 1.0;
  std::size_t sample_count = 10000;
  std::uint64_t seed = 0;

  void validate() const {
    if (sample_count < 100) throw InvalidArgument("sample_count must be at least 100");
    if (!(extent > 0.0)) throw InvalidArgument("extent must be positive");
    switch (kind) {
      case ShapeKind::sphere:
        if (!(radius > 0.0)) throw InvalidArgument("sphere radius must be positive");
        break;
      case ShapeKind::cylinder:
        if (!(radius > 0.0) || !(height > 0.0)) throw InvalidArgument("cylinder radius and height must be positive");
        break;
      case ShapeKind::torus:
        if (!(minor_radius > 0.0) || !(radius > minor_radius))
          throw InvalidArgument("torus needs 0 < minor_radius < radius");
        break;
      case ShapeKind::saddle:
        if (!std::isfinite(curvature)) throw InvalidArgument("saddle curvature must be finite");
        break;
      case ShapeKind::plane: break;
    }
  }

  friend bool operator==(const SyntheticShape&, const SyntheticShape&) = default;
};

inline nlohmann::json to_json(const SyntheticShape& s) {
  return {{"kind", to_string(s.kind)}, {"radius", s.radius},      {"minor_radius", s.minor_radius},
          {"height", s.height},        {"extent", s.extent},      {"curvature", s.curvature},
          {"sample_count", s.sample_count}, {"seed", s.seed}};
}

inline SyntheticShape synthetic_shape_from_json(const nlohmann::json& j) {
  SyntheticShape s;
  s.kind = parse_shape_kind(j.value("kind", to_string(s.kind)));
  s.radius = j.value("radius", s.radius);
  s.minor_radius = j.value("minor_radius", s.minor_radius);
  s.height = j.value("height", s.height);
  s.extent = j.value("extent", s.extent);
  s.curvature = j.value("curvature", s.curvature);
  s.sample_count = j.value("sample_count", s.sample_count);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

/// Unit normal of z = a x y, facing +z.
inline Vec3 saddle_normal(double curvature, double x, double y) {
  return normalized(Vec3{-curvature * y, -curvature * x, 1.0});
}

/// Area-uniform samples with exact unit normals.
inline PointCloud generate_synthetic_shape(const SyntheticShape& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, 0x5a3e, static_cast<std::uint64_t>(spec.kind)));
  PointCloud cloud;
  cloud.name = to_string(spec.kind);
  std::vector<Vec3> normals;
  cloud.points.reserve(spec.sample_count);
  normals.reserve(spec.sample_count);
  constexpr double two_pi = 2.0 * std::numbers::pi;

  while (cloud.points.size() < spec.sample_count) {
    switch (spec.kind) {
      case ShapeKind::plane:
        cloud.points.push_back({rng.uniform(-spec.extent, spec.extent), rng.uniform(-spec.extent, spec.extent), 0.0});
        normals.push_back({0.0, 0.0, 1.0});
        break;
      case ShapeKind::sphere: {
        Vec3 d{rng.normal(), rng.normal(), rng.normal()};
        const double len = norm(d);
        if (len < 1e-12) continue;
        d = d / len;
        cloud.points.push_back(spec.radius * d);
        normals.push_back(d);
        break;
      }
      case ShapeKind::cylinder: {
        const double t = rng.uniform(0.0, two_pi);
        const double z = rng.uniform(-0.5 * spec.height, 0.5 * spec.height);
        cloud.points.push_back({spec.radius * std::cos(t), spec.radius * std::sin(t), z});
        normals.push_back({std::cos(t), std::sin(t), 0.0});
        break;
      }
      case ShapeKind::saddle: {
        const double a = spec.curvature, e = spec.extent;
        const double x = rng.uniform(-e, e), y = rng.uniform(-e, e);
        // accept with probability proportional to the area element
        const double area = std::sqrt(1.0 + a * a * (x * x + y * y));
        const double area_max = std::sqrt(1.0 + 2.0 * a * a * e * e);
        if (rng.uniform() * area_max > area) continue;
        cloud.points.push_back({x, y, a * x * y});
        normals.push_back(saddle_normal(a, x, y));
        break;
      }
      case ShapeKind::torus: {
        const double big = spec.radius, small = spec.minor_radius;
        const double theta = rng.uniform(0.0, two_pi);  // around the tube
        const double phi = rng.uniform(0.0, two_pi);    // around the axis
        if (rng.uniform() * (big + small) > big + small * std::cos(theta)) continue;
        const double ring = big + small * std::cos(theta);
        cloud.points.push_back({ring * std::cos(phi), ring * std::sin(phi), small * std::sin(theta)});
        normals.push_back({std::cos(theta) * std::cos(phi), std::cos(theta) * std::sin(phi), std::sin(theta)});
        break;
      }
    }
  }
  cloud.normals = std::move(normals);
  return cloud;
}

// ---------------------------------------------------------------------------
// Corruptions

enum class DensityMode { none, stripes, gradient };

inline std::string to_string(DensityMode m) {
  switch (m) {
    case DensityMode::none: return "none";
    case DensityMode::stripes: return "stripes";
    case DensityMode::gradient: return "gradient";
  }
  return "?";
}

inline DensityMode parse_density_mode(const std::string& s) {
  for (DensityMode m : {DensityMode::none, DensityMode::stripes, DensityMode::gradient})
    if (to_string(m) == s) return m;
  throw InvalidArgument("unknown density mode '" + s + "' (expected none, stripes, gradient)");
}

struct CorruptionSpec {
  double noise_sigma_fraction = 0.0;  // of the bounding-box diagonal
  DensityMode density_mode = DensityMode::none;
  std::uint64_t seed = 0;

  // density constants
  std::size_t stripe_bands = 8;
  double stripe_keep = 0.1;     // odd bands
  double gradient_min_keep = 0.05;

  void validate() const {
    if (!(noise_sigma_fraction >= 0.0) || !std::isfinite(noise_sigma_fraction))
      throw InvalidArgument("noise sigma fraction must be finite and non-negative");
    if (stripe_bands == 0) throw InvalidArgument("stripe band count must be positive");
    if (!(stripe_keep >= 0.0 && stripe_keep <= 1.0) || !(gradient_min_keep >= 0.0 && gradient_min_keep <= 1.0))
      throw InvalidArgument("keep probabilities must lie in [0, 1]");
  }

  std::string label() const {
    std::string s = "noise=" + std::to_string(noise_sigma_fraction);
    s.erase(s.find_last_not_of('0') + 1);
    if (s.back() == '.') s.pop_back();
    if (density_mode != DensityMode::none) s += ",density=" + to_string(density_mode);
    return s;
  }

  friend bool operator==(const CorruptionSpec&, const CorruptionSpec&) = default;
};

inline nlohmann::json to_json(const CorruptionSpec& c) {
  return {{"noise_sigma_fraction", c.noise_sigma_fraction},
          {"density_mode", to_string(c.density_mode)},
          {"seed", c.seed},
          {"stripe_bands", c.stripe_bands},
          {"stripe_keep", c.stripe_keep},
          {"gradient_min_keep", c.gradient_min_keep}};
}

inline CorruptionSpec corruption_from_json(const nlohmann::json& j) {
  CorruptionSpec c;
  c.noise_sigma_fraction = j.value("noise_sigma_fraction", c.noise_sigma_fraction);
  c.density_mode = parse_density_mode(j.value("density_mode", to_string(c.density_mode)));
  c.seed = j.value("seed", c.seed);
  c.stripe_bands = j.value("stripe_bands", c.stripe_bands);
  c.stripe_keep = j.value("stripe_keep", c.stripe_keep);
  c.gradient_min_keep = j.value("gradient_min_keep", c.gradient_min_keep);
  c.validate();
  return c;
}

/// Isotropic Gaussian offsets with sigma = fraction * bbox diagonal of the
/// input. Normals stay those of the clean surface.
inline PointCloud add_gaussian_noise(const PointCloud& cloud, const CorruptionSpec& spec) {
  spec.validate();
  PointCloud out = cloud;
  if (spec.noise_sigma_fraction == 0.0) return out;
  const double sigma = spec.noise_sigma_fraction * cloud.bounding_box_diagonal();
  Rng rng(derive_seed(spec.seed, 0x4015e));
  for (Vec3& p : out.points) {
    const double dx = rng.normal(), dy = rng.normal(), dz = rng.normal();
    p = p + sigma * Vec3{dx, dy, dz};
  }
  return out;
}

/// Keep probability of a point at normalized position t in [0, 1] along x.
inline double density_keep_probability(const CorruptionSpec& spec, double t) {
  switch (spec.density_mode) {
    case DensityMode::none: return 1.0;
    case DensityMode::stripes: {
      const auto band = std::min(static_cast<std::size_t>(t * static_cast<double>(spec.stripe_bands)),
                                 spec.stripe_bands - 1);
      return band % 2 == 1 ? spec.stripe_keep : 1.0;
    }
    case DensityMode::gradient: return 1.0 + (spec.gradient_min_keep - 1.0) * t;
  }
  return 1.0;
}

/// Thins the cloud along its x extent. Survivors keep their order and normals.
inline PointCloud apply_density_variation(const PointCloud& cloud, const CorruptionSpec& spec,
                                          std::size_t patch_size) {
  spec.validate();
  if (spec.density_mode == DensityMode::none) throw InvalidArgument("density mode is none");
  double lo = INFINITY, hi = -INFINITY;
  for (const Vec3& p : cloud.points) {
    lo = std::min(lo, p.x);
    hi = std::max(hi, p.x);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  Rng rng(derive_seed(spec.seed, 0xde5));
  PointCloud out;
  out.name = cloud.name;
  std::vector<Vec3> normals;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double keep = density_keep_probability(spec, (cloud.points[i].x - lo) / span);
    const double u = rng.uniform();
    if (u >= keep) continue;
    out.points.push_back(cloud.points[i]);
    if (cloud.normals) normals.push_back((*cloud.normals)[i]);
  }
  if (cloud.normals) out.normals = std::move(normals);
  if (out.size() < 3 * patch_size)
    throw DataError("density variation leaves " + std::to_string(out.size()) + " points, fewer than 3 x patch size " +
                    std::to_string(patch_size));
  return out;
}

/// Noise first, then density thinning.
inline PointCloud apply_corruption(const PointCloud& cloud, const CorruptionSpec& spec, std::size_t patch_size) {
  PointCloud out = add_gaussian_noise(cloud, spec);
  if (spec.density_mode != DensityMode::none) out = apply_density_variation(out, spec, patch_size);
  return out;
}

}  // namespace sne

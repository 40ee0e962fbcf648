#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "sne/eigen3.hpp"
#include "sne/error.hpp"
#include "sne/geometry.hpp"
#include "sne/patch.hpp"

namespace sne {

/// Plane-fit normal: the covariance eigenvector with the smallest eigenvalue,
/// sign chosen so that its z-component is non-negative.
inline Vec3 estimate_normal_pca(const Patch& patch) {
  if (patch.size() < 3) throw DegeneratePatch("PCA normal needs at least 3 points");
  const SymmetricEigen3 eig = covariance_eigendecomposition(patch.positions);
  if (!(eig.values[1] > 1e-12 * std::max(eig.values[0], 1e-300)))
    throw DegeneratePatch("PCA normal undefined for a collinear patch");
  Vec3 n = normalized(eig.vectors.col(2));
  if (n.z < 0.0) n = -n;
  return n;
}

/// Bivariate height polynomial h(u, v) = sum c_ij u^i v^j over i + j <= order.
/// Monomials are stored by total degree, then by descending power of u:
/// 1, u, v, u^2, uv, v^2, u^3, ...
struct JetCoefficients {
  int order = 1;
  std::vector<double> coeffs;
  double residual_rms = 0.0;

  static std::size_t count_for(int order) {
    return static_cast<std::size_t>((order + 1) * (order + 2) / 2);
  }

  /// Coefficient of u^i v^j.
  double at(int i, int j) const {
    const int d = i + j;
    return coeffs[static_cast<std::size_t>(d * (d + 1) / 2 + j)];
  }

  double evaluate(double u, double v) const {
    double h = 0.0;
    for (int d = 0; d <= order; ++d)
      for (int j = 0; j <= d; ++j) h += at(d - j, j) * std::pow(u, d - j) * std::pow(v, j);
    return h;
  }
};

inline constexpr double kJetRidge = 1e-10;
inline constexpr int kDefaultJetOrder = 3;

namespace detail {

inline void jet_monomials(int order, double u, double v, std::vector<double>& row) {
  row.clear();
  for (int d = 0; d <= order; ++d)
    for (int j = 0; j <= d; ++j) row.push_back(std::pow(u, d - j) * std::pow(v, j));
}

}  // namespace detail

/// Least-squares height-field fit in the patch's canonical frame (third axis is
/// height), via ridge-regularized normal equations and Cholesky.
inline JetCoefficients fit_jet(const NormalizedPatch& patch, int order = kDefaultJetOrder) {
  if (order < 1 || order > 4) throw InvalidArgument("jet order must be in [1, 4]");
  const std::size_t m = JetCoefficients::count_for(order);
  if (patch.size() < m)
    throw InvalidArgument("jet of order " + std::to_string(order) + " needs at least " +
                          std::to_string(m) + " points, patch has " +
                          std::to_string(patch.size()));

  std::vector<double> ata(m * m, 0.0), atb(m, 0.0), row;
  for (const Vec3& p : patch.positions) {
    detail::jet_monomials(order, p.x, p.y, row);
    for (std::size_t r = 0; r < m; ++r) {
      atb[r] += row[r] * p.z;
      for (std::size_t c = 0; c <= r; ++c) ata[r * m + c] += row[r] * row[c];
    }
  }
  for (std::size_t r = 0; r < m; ++r) ata[r * m + r] += kJetRidge;

  // In-place lower Cholesky.
  for (std::size_t j = 0; j < m; ++j) {
    double d = ata[j * m + j];
    for (std::size_t k = 0; k < j; ++k) d -= ata[j * m + k] * ata[j * m + k];
    if (!(d > 0.0) || !std::isfinite(d))
      throw NumericalError("jet design matrix is rank deficient beyond ridge rescue");
    const double l = std::sqrt(d);
    ata[j * m + j] = l;
    for (std::size_t i = j + 1; i < m; ++i) {
      double s = ata[i * m + j];
      for (std::size_t k = 0; k < j; ++k) s -= ata[i * m + k] * ata[j * m + k];
      ata[i * m + j] = s / l;
    }
  }
  std::vector<double> y(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = atb[i];
    for (std::size_t k = 0; k < i; ++k) s -= ata[i * m + k] * y[k];
    y[i] = s / ata[i * m + i];
  }
  JetCoefficients jet;
  jet.order = order;
  jet.coeffs.assign(m, 0.0);
  for (std::size_t i = m; i-- > 0;) {
    double s = y[i];
    for (std::size_t k = i + 1; k < m; ++k) s -= ata[k * m + i] * jet.coeffs[k];
    jet.coeffs[i] = s / ata[i * m + i];
  }
  for (double c : jet.coeffs)
    if (!std::isfinite(c)) throw NumericalError("jet fit produced non-finite coefficients");

  double sse = 0.0;
  for (const Vec3& p : patch.positions) {
    const double r = jet.evaluate(p.x, p.y) - p.z;
    sse += r * r;
  }
  jet.residual_rms = std::sqrt(sse / static_cast<double>(patch.size()));
  return jet;
}

/// Normal of the fitted height field at the frame origin, in the patch frame.
inline Vec3 jet_normal(const JetCoefficients& jet) {
  const double hu = jet.coeffs.size() > 1 ? jet.at(1, 0) : 0.0;
  const double hv = jet.coeffs.size() > 2 ? jet.at(0, 1) : 0.0;
  return normalized(Vec3{-hu, -hv, 1.0});
}

/// World-space jet normal for a raw patch.
inline Vec3 estimate_normal_jet(const Patch& patch, int order = kDefaultJetOrder) {
  const NormalizedPatch np = normalize_patch(patch, DegeneratePolicy::strict);
  return denormalize_normal(np.transform, jet_normal(fit_jet(np, order)));
}

}  // namespace sne

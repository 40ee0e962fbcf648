#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "sne/eigen3.hpp"
#include "sne/io.hpp"
#include "sne/knn.hpp"
#include "sne/patch.hpp"
#include "test_util.hpp"

namespace sne {
namespace {

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

// ---------------------------------------------------------------- file input

TEST(LoadPointCloud, ParsesOnePointPerLine) {
  const auto dir = testing::scratch_dir("load_basic");
  write_file(dir / "a.xyz", "0 0 0\n1 0 0\n");
  const PointCloud c = load_point_cloud((dir / "a.xyz").string());
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c.points[1], (Vec3{1, 0, 0}));
  EXPECT_FALSE(c.has_normals());
  EXPECT_EQ(c.name, "a.xyz");
}

TEST(LoadPointCloud, MalformedLineNamesTheLine) {
  const auto dir = testing::scratch_dir("load_bad");
  write_file(dir / "b.xyz", "0 0 0\n1 1 1\n1 2\n");
  try {
    load_point_cloud((dir / "b.xyz").string());
    FAIL() << "expected a DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
}

TEST(LoadPointCloud, MissingFileIsAnIoError) {
  EXPECT_THROW(load_point_cloud("/nonexistent/cloud.xyz"), IoError);
}

TEST(LoadPointCloud, NormalsLengthMismatch) {
  const auto dir = testing::scratch_dir("load_mismatch");
  write_file(dir / "c.xyz", "0 0 0\n1 0 0\n");
  write_file(dir / "c.normals", "0 0 1\n");
  EXPECT_THROW(load_point_cloud((dir / "c.xyz").string(), (dir / "c.normals").string()), DataError);
}

TEST(LoadPointCloud, PcpnetPairMatchesReferenceParser) {
  const auto dir = testing::scratch_dir("load_pair");
  Rng rng(11);
  std::ostringstream xyz, nrm;
  for (int i = 0; i < 100; ++i) {
    xyz << rng.uniform(-5, 5) << " " << rng.uniform(-5, 5) << "\t" << rng.uniform(-5, 5) << "\n";
    nrm << rng.normal() * 3 << "  " << rng.normal() << " " << rng.normal() + 0.1 << "\n";
  }
  write_file(dir / "s.xyz", xyz.str());
  write_file(dir / "s.normals", nrm.str());
  const PointCloud c = load_point_cloud((dir / "s.xyz").string(), (dir / "s.normals").string());

  // Reference: strtod over whitespace-split tokens.
  auto reference = [](const std::string& text) {
    std::vector<Vec3> out;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
      const char* s = line.c_str();
      char* end = nullptr;
      Vec3 v;
      v.x = std::strtod(s, &end);
      v.y = std::strtod(end, &end);
      v.z = std::strtod(end, &end);
      out.push_back(v);
    }
    return out;
  };
  const auto ref_pts = reference(xyz.str());
  const auto ref_nrm = reference(nrm.str());
  ASSERT_EQ(c.size(), 100u);
  ASSERT_TRUE(c.has_normals());
  for (std::size_t i = 0; i < 100; ++i) {
    EXPECT_EQ(c.points[i], ref_pts[i]);
    EXPECT_NEAR(norm((*c.normals)[i]), 1.0, 1e-15);
    EXPECT_LT(norm((*c.normals)[i] - ref_nrm[i] / norm(ref_nrm[i])), 1e-15);
  }
  EXPECT_NO_THROW(c.validate());
}

TEST(SaveLoad, WrittenDoublesParseBackExactly) {
  const auto dir = testing::scratch_dir("save_roundtrip");
  const auto pts = testing::random_points(50, 3);
  save_points((dir / "r.xyz").string(), pts);
  const PointCloud c = load_point_cloud((dir / "r.xyz").string());
  ASSERT_EQ(c.points, pts);
}

// ----------------------------------------------------------------- eigen 3x3

// Closed-form eigenvalues of a symmetric 3x3 matrix (trigonometric solution
// of the characteristic polynomial), descending.
std::array<double, 3> closed_form_eigenvalues(const Mat3& a) {
  const double p1 = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
  const double q = (a(0, 0) + a(1, 1) + a(2, 2)) / 3.0;
  const double p2 = (a(0, 0) - q) * (a(0, 0) - q) + (a(1, 1) - q) * (a(1, 1) - q) +
                    (a(2, 2) - q) * (a(2, 2) - q) + 2.0 * p1;
  const double p = std::sqrt(p2 / 6.0);
  Mat3 b = a;
  for (int i = 0; i < 3; ++i) b(i, i) -= q;
  for (auto& row : b.m)
    for (double& v : row) v /= p;
  const double r = std::clamp(b.determinant() / 2.0, -1.0, 1.0);
  const double phi = std::acos(r) / 3.0;
  const double e1 = q + 2.0 * p * std::cos(phi);
  const double e3 = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
  return {e1, 3.0 * q - e1 - e3, e3};
}

void expect_orthonormal_columns(const Mat3& v, double tol) {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(dot(v.col(i), v.col(j)), i == j ? 1.0 : 0.0, tol);
}

TEST(CovarianceEigen, PlanarPointsHaveZeroThirdEigenvalue) {
  Rng rng(5);
  std::vector<Vec3> pts;
  for (int i = 0; i < 40; ++i) pts.push_back({rng.uniform(-1, 1), rng.uniform(-2, 2), 0.0});
  const auto eig = covariance_eigendecomposition(pts);
  EXPECT_NEAR(eig.values[2], 0.0, 1e-12);
  EXPECT_NEAR(std::abs(eig.vectors.col(2).z), 1.0, 1e-12);
}

TEST(CovarianceEigen, LinearPointsHaveTwoZeroEigenvalues) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 20; ++i) pts.push_back(static_cast<double>(i) * Vec3{1, 2, -1});
  const auto eig = covariance_eigendecomposition(pts);
  EXPECT_NEAR(eig.values[1], 0.0, 1e-12);
  EXPECT_NEAR(eig.values[2], 0.0, 1e-12);
  EXPECT_GT(eig.values[0], 1.0);
}

TEST(CovarianceEigen, IsotropicSampleMatchesClosedForm) {
  Rng rng(17);
  std::vector<Vec3> pts(20000);
  for (Vec3& p : pts) p = {rng.normal(), rng.normal(), rng.normal()};
  const Mat3 cov = covariance(pts);
  const auto eig = symmetric_eigen3(cov);
  const auto ref = closed_form_eigenvalues(cov);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(eig.values[i], ref[i], 1e-10);
    EXPECT_NEAR(eig.values[i], 1.0, 0.05);  // sampling tolerance
  }
  expect_orthonormal_columns(eig.vectors, 1e-12);
}

TEST(CovarianceEigen, TooFewPoints) {
  std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}};
  EXPECT_THROW(covariance_eigendecomposition(pts), InvalidArgument);
}

TEST(CovarianceEigen, PropertyReconstructionAndConvention) {
  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    const auto pts = testing::random_points(3 + rng.index(30), 1000 + trial, -3.0, 3.0);
    const Mat3 cov = covariance(pts);
    const auto eig = symmetric_eigen3(cov);
    expect_orthonormal_columns(eig.vectors, 1e-10);
    EXPECT_NEAR(eig.vectors.determinant(), 1.0, 1e-10);
    EXPECT_GE(eig.values[0], eig.values[1]);
    EXPECT_GE(eig.values[1], eig.values[2]);
    Mat3 rebuilt;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int c = 0; c < 3; ++c) rebuilt(i, j) += eig.vectors(i, c) * eig.values[c] * eig.vectors(j, c);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) EXPECT_NEAR(rebuilt(i, j), cov(i, j), 1e-10);
    const auto ref = closed_form_eigenvalues(cov);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(eig.values[i], ref[i], 1e-9);
    // First two columns obey the largest-component-positive rule.
    for (int c = 0; c < 2; ++c) {
      const Vec3 v = eig.vectors.col(c);
      int big = 0;
      for (int k = 1; k < 3; ++k)
        if (std::abs(v[k]) > std::abs(v[big])) big = k;
      EXPECT_GT(v[big], 0.0);
    }
  }
}

// ------------------------------------------------------------------ patches

PointCloud wavy_cloud(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform(-1, 1), y = rng.uniform(-1, 1);
    c.points.push_back({2.0 * x, y, 0.2 * std::sin(3 * x) + 0.05 * y * y});
  }
  return c;
}

TEST(ExtractPatch, SingleNeighborIsTheQuery) {
  const PointCloud c = wavy_cloud(100, 1);
  const KnnIndex idx = build_knn_index(c);
  const Patch p = extract_patch(c, idx, 42, 1);
  ASSERT_EQ(p.indices.size(), 1u);
  EXPECT_EQ(p.indices[0], 42u);
  EXPECT_FALSE(p.gt_normals.has_value());
}

TEST(ExtractPatch, NormalsFollowTheCloud) {
  PointCloud c = wavy_cloud(100, 2);
  c.normals = std::vector<Vec3>(100, Vec3{0, 0, 1});
  const KnnIndex idx = build_knn_index(c);
  const Patch p = extract_patch(c, idx, 7, 10);
  ASSERT_TRUE(p.gt_normals.has_value());
  EXPECT_EQ(p.gt_normals->size(), 10u);
}

TEST(ExtractPatch, InvalidQuery) {
  const PointCloud c = wavy_cloud(10, 3);
  const KnnIndex idx = build_knn_index(c);
  EXPECT_THROW(extract_patch(c, idx, 10, 3), InvalidArgument);
  EXPECT_THROW(extract_patch(c, idx, 0, 11), InvalidArgument);
}

TEST(ExtractPatch, SevenHundredOfHundredThousandMatchesBruteForce) {
  Rng rng(99);
  PointCloud c;
  c.points = testing::random_points(100000, 4);
  const KnnIndex idx = build_knn_index(c);
  for (int q = 0; q < 3; ++q) {
    const std::size_t query = rng.index(c.size());
    const Patch p = extract_patch(c, idx, query, 700);
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t i = 0; i < c.size(); ++i) all.push_back({squared_distance(c.points[i], c.points[query]), i});
    std::partial_sort(all.begin(), all.begin() + 700, all.end());
    std::vector<std::size_t> expect, got(p.indices);
    for (int i = 0; i < 700; ++i) expect.push_back(all[i].second);
    std::sort(expect.begin(), expect.end());
    std::sort(got.begin(), got.end());
    EXPECT_EQ(got, expect);
    EXPECT_EQ(std::adjacent_find(got.begin(), got.end()), got.end());
    EXPECT_NE(std::find(got.begin(), got.end(), query), got.end());
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p.positions[i], c.points[p.indices[i]]);
  }
}

TEST(NormalizePatch, InvariantsHold) {
  const PointCloud c = wavy_cloud(2000, 5);
  const KnnIndex idx = build_knn_index(c);
  for (std::size_t q : {0u, 17u, 555u, 1999u}) {
    const Patch p = extract_patch(c, idx, q, 64);
    const NormalizedPatch np = normalize_patch(p);
    double max_r = 0.0;
    for (const Vec3& v : np.positions) max_r = std::max(max_r, norm(v));
    EXPECT_NEAR(max_r, 1.0, 1e-9);
    EXPECT_LT(norm(np.positions[np.center_slot]), 1e-15);
    const Mat3& r = np.transform.rotation;
    const Mat3 rrt = r * r.transposed();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) EXPECT_NEAR(rrt(i, j), i == j ? 1.0 : 0.0, 1e-9);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-9);
    EXPECT_GT(np.transform.scale, 0.0);
    // Self-consistency: the recorded transform reproduces the positions.
    for (std::size_t i = 0; i < p.size(); ++i)
      EXPECT_LT(norm(np.transform.apply(p.positions[i]) - np.positions[i]), 1e-9);
  }
}

TEST(NormalizePatch, AxisAlignedCenteredPatchIsIdentity) {
  Patch p;
  p.center_index = 0;
  // Variance largest along x, then y, then z; symmetric about the origin.
  const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {-1, 0, 0}, {0, 0.5, 0}, {0, -0.5, 0},
                              {0, 0, 0.2}, {0, 0, -0.2}};
  for (std::size_t i = 0; i < pts.size(); ++i) {
    p.indices.push_back(i);
    p.positions.push_back(pts[i]);
  }
  const NormalizedPatch np = normalize_patch(p);
  EXPECT_EQ(np.transform.translation, (Vec3{0, 0, 0}));
  EXPECT_DOUBLE_EQ(np.transform.scale, 1.0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(np.transform.rotation(i, j), i == j ? 1.0 : 0.0, 1e-12);
}

TEST(NormalizePatch, RotatedCopyGivesSamePositionsUpToAxisSigns) {
  const PointCloud c = wavy_cloud(3000, 6);
  const KnnIndex idx = build_knn_index(c);
  const Patch p = extract_patch(c, idx, 123, 50);
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const Mat3 rot = testing::random_rotation(rng);
    Patch rotated = p;
    for (Vec3& v : rotated.positions) v = rot * v + Vec3{3, -2, 1};
    const NormalizedPatch a = normalize_patch(p);
    const NormalizedPatch b = normalize_patch(rotated);
    // Each canonical axis may flip with the eigenvector sign convention.
    for (int axis = 0; axis < 3; ++axis) {
      double same = 0.0, flipped = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        same = std::max(same, std::abs(a.positions[i][axis] - b.positions[i][axis]));
        flipped = std::max(flipped, std::abs(a.positions[i][axis] + b.positions[i][axis]));
      }
      EXPECT_LT(std::min(same, flipped), 1e-6) << "axis " << axis;
    }
  }
}

TEST(NormalizePatch, CollinearFallsBackOrThrows) {
  Patch p;
  p.center_index = 0;
  for (int i = 0; i < 5; ++i) {
    p.indices.push_back(i);
    p.positions.push_back(static_cast<double>(i) * Vec3{1, 1, 0});
  }
  EXPECT_THROW(normalize_patch(p, DegeneratePolicy::strict), DegeneratePatch);
  const NormalizedPatch np = normalize_patch(p, DegeneratePolicy::fallback);
  EXPECT_TRUE(np.degenerate);
  EXPECT_EQ(np.transform.rotation.m, Mat3::identity().m);
  EXPECT_NEAR(norm(np.positions.back()), 1.0, 1e-12);
}

TEST(DenormalizeNormal, IdentityAndInverse) {
  PatchTransform t;
  EXPECT_EQ(denormalize_normal(t, {0, 0, 1}), (Vec3{0, 0, 1}));
  EXPECT_THROW(denormalize_normal(t, {0, 0, 0}), InvalidArgument);
  Rng rng(31);
  for (int i = 0; i < 100; ++i) {
    t.rotation = testing::random_rotation(rng);
    const Vec3 v = testing::random_unit(rng);
    const Vec3 back = denormalize_normal(t, t.rotate(v));
    EXPECT_LT(norm(back - v), 1e-12);
    const Vec3 any{rng.normal(), rng.normal(), rng.normal()};
    EXPECT_NEAR(norm(denormalize_normal(t, any)), 1.0, 1e-12);
  }
}

// ------------------------------------------------------------ angular error

TEST(AngularError, ClosedFormCases) {
  EXPECT_EQ(angular_error({0, 0, 1}, {0, 0, -1}), 0.0);
  EXPECT_NEAR(angular_error({1, 0, 0}, {0, 1, 0}), std::numbers::pi / 2, 1e-15);
  EXPECT_NEAR(angular_error({1, 0, 0}, Vec3{1, 1, 0} / std::sqrt(2.0)), std::acos(1 / std::sqrt(2.0)), 1e-15);
  EXPECT_NEAR(angular_error({1, 0, 0}, Vec3{1, 1, 0} / std::sqrt(2.0)), std::numbers::pi / 4, 1e-15);
  EXPECT_THROW(angular_error({0, 0, 0}, {1, 0, 0}), InvalidArgument);
}

TEST(AngularError, UnorientedSymmetryIsExact) {
  Rng rng(41);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 a{rng.normal(), rng.normal(), rng.normal()};
    const Vec3 b{rng.normal(), rng.normal(), rng.normal()};
    const double e = angular_error(a, b);
    EXPECT_EQ(e, angular_error(b, a));
    EXPECT_EQ(e, angular_error(-a, b));
    EXPECT_EQ(e, angular_error(a, -b));
    EXPECT_GE(e, 0.0);
    EXPECT_LE(e, std::numbers::pi / 2);
  }
}

}  // namespace
}  // namespace sne

#pragma once

#include <Eigen/Dense>

#include <span>
#include <utility>
#include <vector>

namespace uae {

using Point3 = Eigen::Vector3d;

struct AffineTransform;

/// Proper rigid motion x -> rotation * x + translation.
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static RigidTransform identity() { return {}; }

  Point3 apply(const Point3& p) const { return rotation * p + translation; }
  RigidTransform inverse() const;
  AffineTransform to_affine() const;
  /// this ∘ other (other applied first).
  RigidTransform compose(const RigidTransform& other) const;
};

struct AffineTransform {
  Eigen::Matrix3d linear = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static AffineTransform identity() { return {}; }

  Point3 apply(const Point3& p) const { return linear * p + translation; }
  /// Throws DegenerateGeometry when |det(linear)| <= 1e-12.
  AffineTransform inverse() const;
  AffineTransform compose(const AffineTransform& other) const;
};

struct FitReport {
  double residual_sum_squares = 0.0;
  std::vector<bool> inlier_mask;
  int iterations = 0;

  std::size_t inlier_count() const;
};

std::vector<Point3> apply(const RigidTransform& t, std::span<const Point3> points);
std::vector<Point3> apply(const AffineTransform& t, std::span<const Point3> points);

/// Sum of squared residuals ||dst_i - T(src_i)||^2.
double residual_sum_squares(const RigidTransform& t, std::span<const Point3> src,
                            std::span<const Point3> dst);
double residual_sum_squares(const AffineTransform& t, std::span<const Point3> src,
                            std::span<const Point3> dst);

/// Closed-form least-squares rigid fit (SVD of the cross-covariance).
/// A reflection solution is corrected by flipping the singular vector of the
/// smallest singular value so that det(R) = +1.
std::pair<RigidTransform, FitReport> fit_rigid(std::span<const Point3> src,
                                               std::span<const Point3> dst);

/// Least-squares affine fit; needs >= 4 non-coplanar source points.
std::pair<AffineTransform, FitReport> fit_affine(std::span<const Point3> src,
                                                 std::span<const Point3> dst);

/// Rigid fit that repeatedly discards the ceil(trim_fraction * N) worst pairs.
/// Pairs whose residual is already at round-off level are never discarded.
std::pair<RigidTransform, FitReport> fit_rigid_trimmed(std::span<const Point3> src,
                                                       std::span<const Point3> dst,
                                                       double trim_fraction);

/// Rotation angle of R in degrees.
double rotation_angle_deg(const Eigen::Matrix3d& r);

/// Rotation from ZYX Euler angles in degrees.
Eigen::Matrix3d rotation_from_euler_deg(double rx, double ry, double rz);

/// True when the centered point cloud spans at least `rank` dimensions.
bool spans_rank(std::span<const Point3> points, int rank);

}  // namespace uae

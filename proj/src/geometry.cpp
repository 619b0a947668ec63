#include "uae/geometry.hpp"

#include "uae/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace uae {

namespace {

// Relative singular-value floor used to classify degenerate point clouds.
// Singular values come from scatter eigenvalues, so round-off sits near sqrt(eps).
constexpr double kRankTolerance = 1e-6;

void check_lengths(std::span<const Point3> src, std::span<const Point3> dst) {
  if (src.size() != dst.size()) {
    throw Error(ErrorCode::MismatchedLengths,
                std::to_string(src.size()) + " source vs " + std::to_string(dst.size()) +
                    " destination points");
  }
}

Point3 centroid(std::span<const Point3> pts) {
  Point3 c = Point3::Zero();
  for (const auto& p : pts) c += p;
  return c / static_cast<double>(pts.size());
}

Eigen::Vector3d centered_singular_values(std::span<const Point3> pts) {
  const Point3 c = centroid(pts);
  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  for (const auto& p : pts) scatter += (p - c) * (p - c).transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(scatter);
  // eigenvalues ascending; return sqrt in descending order
  Eigen::Vector3d ev = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return {ev(2), ev(1), ev(0)};
}

}  // namespace

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

AffineTransform RigidTransform::to_affine() const { return {rotation, translation}; }

RigidTransform RigidTransform::compose(const RigidTransform& other) const {
  return {rotation * other.rotation, rotation * other.translation + translation};
}

AffineTransform AffineTransform::inverse() const {
  const double det = linear.determinant();
  if (!(std::abs(det) > 1e-12)) {
    throw Error(ErrorCode::DegenerateGeometry, "affine transform is not invertible");
  }
  AffineTransform inv;
  inv.linear = linear.inverse();
  inv.translation = -(inv.linear * translation);
  return inv;
}

AffineTransform AffineTransform::compose(const AffineTransform& other) const {
  return {linear * other.linear, linear * other.translation + translation};
}

std::size_t FitReport::inlier_count() const {
  return static_cast<std::size_t>(std::count(inlier_mask.begin(), inlier_mask.end(), true));
}

std::vector<Point3> apply(const RigidTransform& t, std::span<const Point3> points) {
  std::vector<Point3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(t.apply(p));
  return out;
}

std::vector<Point3> apply(const AffineTransform& t, std::span<const Point3> points) {
  std::vector<Point3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(t.apply(p));
  return out;
}

double residual_sum_squares(const RigidTransform& t, std::span<const Point3> src,
                            std::span<const Point3> dst) {
  check_lengths(src, dst);
  double sum = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) sum += (dst[i] - t.apply(src[i])).squaredNorm();
  return sum;
}

double residual_sum_squares(const AffineTransform& t, std::span<const Point3> src,
                            std::span<const Point3> dst) {
  check_lengths(src, dst);
  double sum = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) sum += (dst[i] - t.apply(src[i])).squaredNorm();
  return sum;
}

bool spans_rank(std::span<const Point3> points, int rank) {
  if (points.size() < static_cast<std::size_t>(rank) + 1) return false;
  const Eigen::Vector3d sv = centered_singular_values(points);
  if (!(sv(0) > 0.0)) return false;
  for (int k = 1; k < rank; ++k) {
    if (sv(k) <= kRankTolerance * sv(0)) return false;
  }
  return true;
}

std::pair<RigidTransform, FitReport> fit_rigid(std::span<const Point3> src,
                                               std::span<const Point3> dst) {
  check_lengths(src, dst);
  if (src.size() < 3) {
    throw Error(ErrorCode::DegenerateGeometry, "rigid fit needs at least 3 point pairs");
  }
  if (!spans_rank(src, 2)) {
    throw Error(ErrorCode::DegenerateGeometry, "source points are collinear");
  }

  const Point3 cs = centroid(src);
  const Point3 cd = centroid(dst);
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) h += (src[i] - cs) * (dst[i] - cd).transpose();

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d v = svd.matrixV();
  const Eigen::Matrix3d& u = svd.matrixU();
  Eigen::Matrix3d r = v * u.transpose();
  if (r.determinant() < 0.0) {
    // singular values are sorted descending; column 2 is the smallest
    v.col(2) *= -1.0;
    r = v * u.transpose();
  }

  RigidTransform t;
  t.rotation = r;
  t.translation = cd - r * cs;

  FitReport report;
  report.residual_sum_squares = residual_sum_squares(t, src, dst);
  report.inlier_mask.assign(src.size(), true);
  report.iterations = 1;
  return {t, report};
}

std::pair<AffineTransform, FitReport> fit_affine(std::span<const Point3> src,
                                                 std::span<const Point3> dst) {
  check_lengths(src, dst);
  if (src.size() < 4 || !spans_rank(src, 3)) {
    throw Error(ErrorCode::DegenerateGeometry, "affine fit needs >= 4 non-coplanar points");
  }
  const Eigen::Index n = static_cast<Eigen::Index>(src.size());
  // Center for conditioning, then solve the 3x3 normal system per output axis.
  const Point3 cs = centroid(src);
  const Point3 cd = centroid(dst);
  Eigen::MatrixXd a(n, 3);
  Eigen::MatrixXd b(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    a.row(i) = (src[static_cast<std::size_t>(i)] - cs).transpose();
    b.row(i) = (dst[static_cast<std::size_t>(i)] - cd).transpose();
  }
  const Eigen::MatrixXd x = a.colPivHouseholderQr().solve(b);

  AffineTransform t;
  t.linear = x.transpose();
  t.translation = cd - t.linear * cs;

  FitReport report;
  report.residual_sum_squares = residual_sum_squares(t, src, dst);
  report.inlier_mask.assign(src.size(), true);
  report.iterations = 1;
  return {t, report};
}

std::pair<RigidTransform, FitReport> fit_rigid_trimmed(std::span<const Point3> src,
                                                       std::span<const Point3> dst,
                                                       double trim_fraction) {
  check_lengths(src, dst);
  if (!(trim_fraction >= 0.0 && trim_fraction <= 0.5)) {
    throw Error(ErrorCode::InvalidArgument, "trim_fraction must lie in [0, 0.5]");
  }
  const std::size_t n = src.size();
  const auto n_drop = static_cast<std::size_t>(std::ceil(trim_fraction * static_cast<double>(n)));
  if (n < 3 || n - std::min(n, n_drop) < 3) {
    throw Error(ErrorCode::DegenerateGeometry, "fewer than 3 pairs survive trimming");
  }

  // Residual magnitude regarded as exact: scaled by the cloud extent.
  double extent = 0.0;
  const Point3 cs = centroid(src);
  for (const auto& p : src) extent = std::max(extent, (p - cs).norm());
  const double exact_floor = 1e-9 * std::max(1.0, extent);

  std::vector<bool> mask(n, true);
  RigidTransform current;
  double rss = 0.0;
  int rounds = 0;
  constexpr int kMaxRounds = 10;
  while (true) {
    std::vector<Point3> s_in;
    std::vector<Point3> d_in;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask[i]) {
        s_in.push_back(src[i]);
        d_in.push_back(dst[i]);
      }
    }
    auto [fit, rep] = fit_rigid(s_in, d_in);
    current = fit;
    rss = rep.residual_sum_squares;
    ++rounds;
    if (n_drop == 0 || rounds >= kMaxRounds) break;

    std::vector<double> residual(n);
    for (std::size_t i = 0; i < n; ++i) residual[i] = (dst[i] - current.apply(src[i])).norm();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return residual[a] > residual[b]; });
    std::vector<bool> next(n, true);
    for (std::size_t k = 0; k < n_drop; ++k) {
      if (residual[order[k]] > exact_floor) next[order[k]] = false;
    }
    if (next == mask) break;
    mask = std::move(next);
  }

  FitReport report;
  report.residual_sum_squares = rss;
  report.inlier_mask = std::move(mask);
  report.iterations = rounds;
  return {current, report};
}

double rotation_angle_deg(const Eigen::Matrix3d& r) {
  const double c = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

Eigen::Matrix3d rotation_from_euler_deg(double rx, double ry, double rz) {
  constexpr double k = std::numbers::pi / 180.0;
  return (Eigen::AngleAxisd(rz * k, Eigen::Vector3d::UnitZ()) *
          Eigen::AngleAxisd(ry * k, Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(rx * k, Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

}  // namespace uae

#pragma once

#include "uae/geometry.hpp"

#include <optional>
#include <string>
#include <vector>

namespace uae {

struct LandmarkPairSet {
  std::vector<Point3> predicted;  // mm
  std::vector<Point3> truth;      // mm
  std::vector<double> radii;      // empty, or one per pair (mm)

  void validate() const;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

struct MetricsReport {
  std::size_t count = 0;
  MeanStd med, med_x, med_y, med_z;
  double threshold_mm = 10.0;
  double cpm_at_threshold = 0.0;  // percent, distance strictly below the threshold
  std::optional<double> cpm_at_radius;
  double max_error = 0.0;
};

/// Radius-based CPM is computed when radii are present; `require_radius`
/// turns their absence into MissingRadii.
MetricsReport evaluate(const LandmarkPairSet& pairs, double threshold_mm, bool require_radius = false);

/// Per-pair Euclidean distances.
std::vector<double> distances(const LandmarkPairSet& pairs);

/// Aligned human-readable table.
std::string format_report(const MetricsReport& r);
/// key=value lines.
std::string format_report_kv(const MetricsReport& r);

}  // namespace uae

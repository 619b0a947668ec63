#include "uae/metrics.hpp"

#include "uae/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace uae {

namespace {

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(ss / static_cast<double>(v.size()));
  return m;
}

std::string fmt(const char* f, double a, double b = 0.0) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

}  // namespace

void LandmarkPairSet::validate() const {
  if (predicted.empty() && truth.empty()) throw Error(ErrorCode::EmptySet, "no landmark pairs");
  if (predicted.size() != truth.size()) {
    throw Error(ErrorCode::MismatchedLengths, "predicted and truth differ in length");
  }
  if (!radii.empty()) {
    if (radii.size() != truth.size()) throw Error(ErrorCode::MismatchedLengths, "one radius per pair required");
    for (double r : radii) {
      if (!(r > 0.0)) throw Error(ErrorCode::InvalidArgument, "radii must be > 0");
    }
  }
}

std::vector<double> distances(const LandmarkPairSet& pairs) {
  pairs.validate();
  std::vector<double> d(pairs.truth.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = (pairs.predicted[i] - pairs.truth[i]).norm();
  return d;
}

MetricsReport evaluate(const LandmarkPairSet& pairs, double threshold_mm, bool require_radius) {
  const std::vector<double> d = distances(pairs);
  if (require_radius && pairs.radii.empty()) {
    throw Error(ErrorCode::MissingRadii, "CPM at radius requested without radii");
  }
  const std::size_t n = d.size();
  std::vector<double> ax[3];
  for (auto& a : ax) a.resize(n);
  std::size_t hit = 0, hit_r = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) ax[a][i] = std::abs(pairs.predicted[i](a) - pairs.truth[i](a));
    if (d[i] < threshold_mm) ++hit;
    if (!pairs.radii.empty() && d[i] < pairs.radii[i]) ++hit_r;
  }
  MetricsReport r;
  r.count = n;
  r.med = mean_std(d);
  r.med_x = mean_std(ax[0]);
  r.med_y = mean_std(ax[1]);
  r.med_z = mean_std(ax[2]);
  r.threshold_mm = threshold_mm;
  r.cpm_at_threshold = 100.0 * static_cast<double>(hit) / static_cast<double>(n);
  if (!pairs.radii.empty()) r.cpm_at_radius = 100.0 * static_cast<double>(hit_r) / static_cast<double>(n);
  r.max_error = *std::max_element(d.begin(), d.end());
  return r;
}

std::string format_report(const MetricsReport& r) {
  std::string s;
  s += "pairs        " + std::to_string(r.count) + "\n";
  s += "MED          " + fmt("%.4f +- %.4f mm", r.med.mean, r.med.std) + "\n";
  s += "MEDX         " + fmt("%.4f +- %.4f mm", r.med_x.mean, r.med_x.std) + "\n";
  s += "MEDY         " + fmt("%.4f +- %.4f mm", r.med_y.mean, r.med_y.std) + "\n";
  s += "MEDZ         " + fmt("%.4f +- %.4f mm", r.med_z.mean, r.med_z.std) + "\n";
  s += "CPM@" + fmt("%-8g %.2f %%", r.threshold_mm, r.cpm_at_threshold) + "\n";
  if (r.cpm_at_radius) s += "CPM@Radius   " + fmt("%.2f %%", *r.cpm_at_radius) + "\n";
  s += "max error    " + fmt("%.4f mm", r.max_error) + "\n";
  return s;
}

std::string format_report_kv(const MetricsReport& r) {
  std::string s;
  const auto kv = [&](const char* k, double v) { s += std::string(k) + "=" + fmt("%.17g", v) + "\n"; };
  s += "count=" + std::to_string(r.count) + "\n";
  kv("med", r.med.mean);
  kv("med_std", r.med.std);
  kv("med_x", r.med_x.mean);
  kv("med_x_std", r.med_x.std);
  kv("med_y", r.med_y.mean);
  kv("med_y_std", r.med_y.std);
  kv("med_z", r.med_z.mean);
  kv("med_z_std", r.med_z.std);
  kv("threshold_mm", r.threshold_mm);
  kv("cpm_at_threshold", r.cpm_at_threshold);
  if (r.cpm_at_radius) kv("cpm_at_radius", *r.cpm_at_radius);
  kv("max_error", r.max_error);
  return s;
}

}  // namespace uae

#include "doctest.h"

#include "uae/error.hpp"
#include "uae/metrics.hpp"

#include <cmath>
#include <random>

using namespace uae;

namespace {

// Five pairs with offsets whose lengths are 5, 10, 3, 7 and 0 mm.
LandmarkPairSet fixture() {
  LandmarkPairSet s;
  s.truth = {Point3(10, 20, 30), Point3(-5, 0, 2), Point3(1, 1, 1), Point3(0, 0, 0), Point3(7, -3, 4)};
  const Point3 offsets[] = {Point3(3, 4, 0), Point3(0, 0, -10), Point3(1, -2, 2), Point3(-2, 3, 6), Point3(0, 0, 0)};
  for (int i = 0; i < 5; ++i) s.predicted.push_back(s.truth[static_cast<std::size_t>(i)] + offsets[i]);
  s.radii = {6, 12, 2, 8, 1};
  return s;
}

}  // namespace

TEST_CASE("hand computed fixture") {
  const MetricsReport r = evaluate(fixture(), 10.0);
  CHECK(r.count == 5);
  CHECK(std::abs(r.med.mean - 5.0) < 1e-9);
  CHECK(std::abs(r.med.std - std::sqrt(11.6)) < 1e-9);
  CHECK(std::abs(r.med_x.mean - 1.2) < 1e-9);
  CHECK(std::abs(r.med_x.std - std::sqrt(1.36)) < 1e-9);
  CHECK(std::abs(r.med_y.mean - 1.8) < 1e-9);
  CHECK(std::abs(r.med_z.mean - 3.6) < 1e-9);
  CHECK(std::abs(r.cpm_at_threshold - 80.0) < 1e-9);
  REQUIRE(r.cpm_at_radius.has_value());
  CHECK(std::abs(*r.cpm_at_radius - 80.0) < 1e-9);
  CHECK(r.max_error == 10.0);
  CHECK(std::abs(evaluate(fixture(), 5.0).cpm_at_threshold - 40.0) < 1e-9);
}

TEST_CASE("threshold boundary is strict") {
  LandmarkPairSet s;
  s.truth = {Point3(0, 0, 0)};
  s.predicted = {Point3(0, 10, 0)};
  CHECK(evaluate(s, 10.0).cpm_at_threshold == 0.0);
  CHECK(evaluate(s, 10.0 + 1e-12).cpm_at_threshold == 100.0);
  s.predicted = s.truth;
  const MetricsReport r = evaluate(s, 10.0);
  CHECK(r.med.mean == 0.0);
  CHECK(r.cpm_at_threshold == 100.0);
}

TEST_CASE("errors") {
  LandmarkPairSet empty;
  CHECK_THROWS_AS(evaluate(empty, 10.0), Error);
  try {
    evaluate(empty, 10.0);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptySet);
  }
  LandmarkPairSet s = fixture();
  s.radii.clear();
  try {
    evaluate(s, 10.0, true);
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingRadii);
  }
  CHECK_FALSE(evaluate(s, 10.0).cpm_at_radius.has_value());
  s.predicted.pop_back();
  CHECK_THROWS_AS(evaluate(s, 10.0), Error);
}

TEST_CASE("invariances") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 5.0);
  LandmarkPairSet s;
  for (int i = 0; i < 40; ++i) {
    s.truth.emplace_back(n(rng), n(rng), n(rng));
    s.predicted.push_back(s.truth.back() + Point3(n(rng), n(rng), n(rng)));
  }
  const MetricsReport base = evaluate(s, 6.0);

  LandmarkPairSet shifted = s;
  const Point3 d(100.0, -37.5, 12.25);
  for (auto& p : shifted.truth) p += d;
  for (auto& p : shifted.predicted) p += d;
  const MetricsReport t = evaluate(shifted, 6.0);
  CHECK(std::abs(t.med.mean - base.med.mean) < 1e-9);
  CHECK(std::abs(t.med_z.mean - base.med_z.mean) < 1e-9);
  CHECK(t.cpm_at_threshold == base.cpm_at_threshold);

  LandmarkPairSet scaled = s;
  for (auto& p : scaled.truth) p *= 2.0;
  for (auto& p : scaled.predicted) p *= 2.0;
  CHECK(std::abs(evaluate(scaled, 6.0).med.mean - 2.0 * base.med.mean) < 1e-12);

  const auto dist = distances(s);
  for (std::size_t i = 0; i < dist.size(); ++i) {
    CHECK(dist[i] >= (s.predicted[i] - s.truth[i]).cwiseAbs().maxCoeff());
  }
}

TEST_CASE("report formatting") {
  const MetricsReport r = evaluate(fixture(), 10.0);
  const std::string kv = format_report_kv(r);
  CHECK(kv.find("med=5\n") != std::string::npos);
  CHECK(kv.find("cpm_at_threshold=80\n") != std::string::npos);
  CHECK(format_report(r).find("CPM@Radius") != std::string::npos);
}

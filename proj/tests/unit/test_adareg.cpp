#include "doctest.h"

#include "uae/adareg.hpp"
#include "uae/error.hpp"
#include "uae/phantom.hpp"

#include <cmath>

using namespace uae;

namespace {

PhantomSpec suite_spec() {
  PhantomSpec s;
  s.dims = {64, 64, 64};
  s.num_organs = 4;
  s.organ_axis_min = 5.0;
  s.organ_axis_max = 8.0;
  s.texture_blobs = 200;
  return s;
}

double angle_deg(const Eigen::Matrix3d& r) {
  const double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) * 180.0 / 3.14159265358979323846;
}

AffineTransform generator() {
  AffineTransform t;
  t.linear = rotation_from_euler_deg(0.0, 0.0, 6.0);
  const Point3 c(31.5, 31.5, 31.5);
  t.translation = c - t.linear * c + Point3(5.0, -3.0, 4.0);
  return t;
}

Box3 small_fov() {
  Box3 b;
  b.min = {12, 12, 16};
  b.max = {51, 51, 47};
  return b;
}

class ShiftBackend : public DeformableBackend {
 public:
  explicit ShiftBackend(Point3 d) : d_(std::move(d)) {}
  DisplacementField refine(const RegisteredPair& pair) const override {
    DisplacementField f(pair.fixed_crop.geometry, 3, false);
    for (std::size_t i = 0; i < f.voxel_count(); ++i)
      for (int a = 0; a < 3; ++a) f.data[i * 3 + static_cast<std::size_t>(a)] = static_cast<float>(d_(a));
    return f;
  }

 private:
  Point3 d_;
};

class BrokenBackend : public DeformableBackend {
 public:
  DisplacementField refine(const RegisteredPair& pair) const override {
    return DisplacementField(pair.fixed.geometry, 2, false);
  }
};

}  // namespace

TEST_CASE("self alignment recovers the crop offset") {
  const Phantom p = gen_phantom(suite_spec(), 2);
  const ProjectionModel m = ProjectionModel::random(16, 32, false, 4);
  Box3 box;
  box.min = {8, 10, 12};
  box.max = {55, 53, 51};
  const ScalarVolume moving = crop(p.volume, box);
  const EmbeddingSet ef = embed(p.volume, m);
  Box3 half;
  for (int a = 0; a < 3; ++a) {
    half.min[static_cast<std::size_t>(a)] = box.min[static_cast<std::size_t>(a)] / 2;
    half.max[static_cast<std::size_t>(a)] = box.max[static_cast<std::size_t>(a)] / 2;
  }
  EmbeddingSet em;
  em.coarse = crop(ef.coarse, half);
  em.fine = crop(ef.fine, half);
  AdaRegConfig cfg;
  cfg.grid_spacing = 4;
  const RegisteredPair r = adareg_once(p.volume, ef, moving, em, cfg, 2);
  CHECK((r.moving_to_fixed.rotation - Eigen::Matrix3d::Identity()).norm() < 1e-9);
  CHECK(r.moving_to_fixed.translation.norm() < 1e-9);
  CHECK(r.provenance.inliers >= 3);
  CHECK(r.provenance.mean_residual_mm < 1.0);
  CHECK(r.provenance.margin == 2);
  CHECK(r.fixed_crop.geometry.dims[0] <= 64);
  CHECK(std::count(r.overlap.data.begin(), r.overlap.data.end(), 1) > 0);
}

TEST_CASE("moved phantom is recovered") {
  // The filter bank has axis-aligned channels, so small rotations are
  // underestimated; translation at the moving center is recovered closely.
  const PhantomPair pp = gen_pair(suite_spec(), generator(), ModalityRemap::identity, small_fov(), {}, 2);
  const ProjectionModel m = ProjectionModel::random(16, 32, false, 4);
  AdaRegConfig cfg;
  cfg.grid_spacing = 2;
  const RegisteredPair r = adareg_once(pp.a.volume, embed(pp.a.volume, m), pp.b.volume, embed(pp.b.volume, m), cfg, 5);
  const AffineTransform truth = generator().inverse();
  CHECK(angle_deg(r.moving_to_fixed.rotation.transpose() * truth.linear) < 2.0);
  const Point3 c = pp.b.volume.geometry.to_physical(Point3(20, 20, 16));
  CHECK((r.moving_to_fixed.apply(c) - truth.apply(c)).norm() < 1.0);

  // Every inlier transforms into the crop.
  const Box3& b = r.crop_box;
  const Point3 lo = pp.a.volume.geometry.to_physical(Point3(b.min[0], b.min[1], b.min[2]));
  const Point3 hi = pp.a.volume.geometry.to_physical(Point3(b.max[0], b.max[1], b.max[2]));
  const Point3 mc = r.moving_to_fixed.apply(c);
  CHECK((mc.array() >= lo.array()).all());
  CHECK((mc.array() <= hi.array()).all());

  // A smaller margin gives a crop that is no larger.
  const RegisteredPair tight = adareg_once(pp.a.volume, embed(pp.a.volume, m), pp.b.volume, embed(pp.b.volume, m), cfg, 1);
  CHECK(tight.crop_box.voxel_count() <= r.crop_box.voxel_count());
}

TEST_CASE("impossible similarity floor") {
  const Phantom p = gen_phantom(suite_spec(), 2);
  const ProjectionModel m = ProjectionModel::random(16, 16, false, 4);
  const EmbeddingSet e = embed(p.volume, m);
  AdaRegConfig cfg;
  cfg.similarity_floor = 1.1;
  try {
    adareg_once(p.volume, e, p.volume, e, cfg, 1);
    FAIL("accepted");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::TooFewMatches);
  }
}

TEST_CASE("config validation") {
  AdaRegConfig c;
  c.margins = {5, 10};
  CHECK_THROWS_AS(c.validate(), Error);
  c = AdaRegConfig{};
  c.grid_spacing = 1;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK(parse_matcher("fixpoint") == MatcherKind::fixpoint);
  CHECK_THROWS_AS(parse_matcher("icp"), Error);
}

TEST_CASE("deformable backends") {
  const Phantom p = gen_phantom(suite_spec(), 2);
  const ProjectionModel m = ProjectionModel::random(16, 16, false, 4);
  const EmbeddingSet e = embed(p.volume, m);
  AdaRegConfig cfg;
  cfg.grid_spacing = 4;
  const RegisteredPair r = adareg_once(p.volume, e, p.volume, e, cfg, 1);

  const DisplacementField zero = register_deformable(r, IdentityBackend{});
  CHECK(zero.geometry.dims == r.fixed_crop.geometry.dims);
  CHECK(std::all_of(zero.data.begin(), zero.data.end(), [](float v) { return v == 0.0f; }));

  CrossModalityCase c;
  c.fixed = p.volume;
  c.moving = p.volume;
  for (const Landmark& l : p.landmarks) {
    c.fixed_landmarks.push_back(l.position + Point3(1.5, 0.0, 0.0));
    c.moving_landmarks.push_back(l.position);
  }
  const double before = case_med(c, &r, &zero);
  const DisplacementField shift = register_deformable(r, ShiftBackend(Point3(1.5, 0.0, 0.0)));
  CHECK(std::abs(before - 1.5) < 1e-6);
  CHECK(case_med(c, &r, &shift) < 1e-6);

  try {
    register_deformable(r, BrokenBackend{});
    FAIL("accepted");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::BackendFailure);
  }
}

TEST_CASE("an empty margin schedule returns only the first model") {
  const PhantomPair pp = gen_pair(suite_spec(), generator(), ModalityRemap::inverted, small_fov(), {}, 2);
  CrossModalityCase c;
  c.id = "p0";
  c.fixed = pp.a.volume;
  c.moving = pp.b.volume;
  TrainConfig tc;
  tc.steps = 2;
  tc.head_dim = 16;
  tc.n_pos_fine = 10;
  tc.n_neg_fine = 20;
  tc.n_fov_fine = 0;
  tc.n_pos_coarse = 5;
  tc.n_neg_coarse = 10;
  tc.min_dist_fine = 4.0;
  tc.min_dist_coarse = 8.0;
  tc.augment.aggressive = true;
  tc.augment.patch_size = {24, 24, 20};
  AdaRegConfig cfg;
  cfg.margins = {};
  const UaemResult res = uaem_iterate({c}, tc, cfg);
  CHECK(res.models.size() == 1);
  CHECK(res.mean_med.size() == 1);
  CHECK(std::isnan(res.initial_med));

  cfg.margins = {4};
  const UaemResult a = uaem_iterate({c}, tc, cfg);
  const UaemResult b = uaem_iterate({c}, tc, cfg);
  REQUIRE(a.models.size() == 2);
  for (std::size_t k = 0; k < 2; ++k) CHECK(encode_model(a.models[k]) == encode_model(b.models[k]));
  CHECK(a.models[1].iteration == 1);
  CHECK_THROWS_AS(uaem_iterate({}, tc, cfg), Error);
}

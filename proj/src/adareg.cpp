#include "uae/adareg.hpp"

#include "uae/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>

namespace uae {

std::string_view to_string(MatcherKind m) { return m == MatcherKind::nn ? "nn" : "fixpoint"; }

MatcherKind parse_matcher(std::string_view s) {
  if (s == "nn") return MatcherKind::nn;
  if (s == "fixpoint") return MatcherKind::fixpoint;
  throw Error(ErrorCode::InvalidArgument, "unknown matcher '" + std::string(s) + "'");
}

void AdaRegConfig::validate() const {
  if (grid_spacing < 2) throw Error(ErrorCode::InvalidArgument, "grid spacing must be >= 2");
  if (trim_fraction < 0.0 || trim_fraction > 0.5) {
    throw Error(ErrorCode::InvalidArgument, "trim_fraction must lie in [0, 0.5]");
  }
  for (std::size_t i = 0; i < margins.size(); ++i) {
    if (margins[i] < 0) throw Error(ErrorCode::InvalidArgument, "margins must be >= 0");
    if (i > 0 && margins[i] > margins[i - 1]) {
      throw Error(ErrorCode::InvalidArgument, "margin schedule must be non-increasing");
    }
  }
  if (body_threshold < 0.0 || body_threshold >= 1.0) {
    throw Error(ErrorCode::InvalidArgument, "body_threshold must lie in [0,1)");
  }
  fixpoint.validate();
}

namespace {

LabelVolume moving_body(const ScalarVolume& vol, double fraction) {
  const auto [lo, hi] = std::minmax_element(vol.data.begin(), vol.data.end());
  return body_mask(vol, static_cast<float>(*lo + fraction * (static_cast<double>(*hi) - *lo)));
}

}  // namespace

RegisteredPair adareg_once(const ScalarVolume& fixed, const EmbeddingSet& fixed_emb,
                           const ScalarVolume& moving, const EmbeddingSet& moving_emb,
                           const AdaRegConfig& cfg, int margin, int iteration) {
  cfg.validate();
  const LabelVolume mask = moving_body(moving, cfg.body_threshold);

  // Grid on the moving embedding grid, kept where the body mask is set.
  std::vector<Point3> grid;
  const auto& hd = moving_emb.geometry().dims;
  const int s = cfg.grid_spacing;
  for (int z = s / 2; z < hd[2]; z += s) {
    for (int y = s / 2; y < hd[1]; y += s) {
      for (int x = s / 2; x < hd[0]; x += s) {
        if (mask.at(2 * x, 2 * y, 2 * z) != 0) grid.emplace_back(2.0 * x, 2.0 * y, 2.0 * z);
      }
    }
  }

  SimilarityWeights w;
  if (moving_emb.semantic && fixed_emb.semantic) w = SimilarityWeights::defaults_for(moving_emb);
  const std::optional<FixpointConfig> fp =
      cfg.matcher == MatcherKind::fixpoint ? std::optional<FixpointConfig>(cfg.fixpoint) : std::nullopt;
  const std::vector<MatchResult> matches = grid_match(grid, moving_emb, fixed_emb, w, fp);

  std::vector<Point3> src, dst;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const MatchResult& m = matches[i];
    if (!m.ok || m.similarity < cfg.similarity_floor) continue;
    src.push_back(moving.geometry.to_physical(grid[i]));
    dst.push_back(fixed.geometry.to_physical(m.point));
  }
  if (src.size() < 3) {
    throw Error(ErrorCode::TooFewMatches, std::to_string(src.size()) + " matches above the similarity floor");
  }
  auto [rigid, report] = fit_rigid_trimmed(src, dst, cfg.trim_fraction);

  RegisteredPair out;
  out.fixed = fixed;
  out.moving = moving;
  out.moving_to_fixed = rigid;

  const Box3 mb = mask_bbox(mask);
  std::vector<Point3> corners;
  for (int c = 0; c < 8; ++c) {
    const Point3 v((c & 1) ? mb.max[0] : mb.min[0], (c & 2) ? mb.max[1] : mb.min[1],
                   (c & 4) ? mb.max[2] : mb.min[2]);
    corners.push_back(fixed.geometry.to_voxel(rigid.apply(moving.geometry.to_physical(v))));
  }
  const Box3 box = bounding_box(corners, fixed.geometry.dims);
  if (!box.valid()) throw Error(ErrorCode::EmptyBox, "moving body maps outside the fixed scan");
  out.crop_box = dilate_box(box, margin, fixed.geometry.dims);
  out.fixed_crop = crop(fixed, out.crop_box);

  out.overlap = LabelVolume(out.fixed_crop.geometry);
  const RigidTransform inv = rigid.inverse();
  const auto& cd = out.fixed_crop.geometry.dims;
  for (int z = 0; z < cd[2]; ++z) {
    for (int y = 0; y < cd[1]; ++y) {
      for (int x = 0; x < cd[0]; ++x) {
        const Point3 m = moving.geometry.to_voxel(inv.apply(out.fixed_crop.geometry.to_physical(Point3(x, y, z))));
        if (moving.geometry.contains(m)) out.overlap.at(x, y, z) = 1;
      }
    }
  }

  double res = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (!report.inlier_mask[i]) continue;
    res += (rigid.apply(src[i]) - dst[i]).norm();
    ++n;
  }
  out.provenance.iteration = iteration;
  out.provenance.margin = margin;
  out.provenance.matches = grid.size();
  out.provenance.inliers = n;
  out.provenance.mean_residual_mm = n ? res / static_cast<double>(n) : 0.0;
  return out;
}

DisplacementField IdentityBackend::refine(const RegisteredPair& pair) const {
  return DisplacementField(pair.fixed_crop.geometry, 3, false);
}

DisplacementField register_deformable(const RegisteredPair& pair, const DeformableBackend& backend) {
  DisplacementField f;
  try {
    f = backend.refine(pair);
  } catch (const Error& e) {
    throw Error(ErrorCode::BackendFailure, e.what());
  }
  if (f.geometry.dims != pair.fixed_crop.geometry.dims || f.channels != 3) {
    throw Error(ErrorCode::BackendFailure, "field does not live on the fixed crop grid");
  }
  if (!std::all_of(f.data.begin(), f.data.end(), [](float v) { return std::isfinite(v); })) {
    throw Error(ErrorCode::BackendFailure, "field has non-finite values");
  }
  return f;
}

Point3 map_moving_point(const RegisteredPair& pair, const DisplacementField* field, const Point3& moving_mm) {
  const Point3 p = pair.moving_to_fixed.apply(moving_mm);
  if (field == nullptr) return p;
  const Point3 v = field->geometry.to_voxel(p);
  if (!field->geometry.contains(v)) return p;
  std::array<float, 3> d{};
  trilinear_blend_clamped(*field, v, d);
  return p + Point3(d[0], d[1], d[2]);
}

double case_med(const CrossModalityCase& c, const RegisteredPair* pair, const DisplacementField* field) {
  if (c.fixed_landmarks.empty() || c.fixed_landmarks.size() != c.moving_landmarks.size()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < c.fixed_landmarks.size(); ++i) {
    const Point3 p = pair ? map_moving_point(*pair, field, c.moving_landmarks[i]) : c.moving_landmarks[i];
    sum += (p - c.fixed_landmarks[i]).norm();
  }
  return sum / static_cast<double>(c.fixed_landmarks.size());
}

UaemResult uaem_iterate(const std::vector<CrossModalityCase>& cases, const TrainConfig& base,
                        const AdaRegConfig& cfg, const DeformableBackend* backend, bool verbose) {
  if (cases.empty()) throw Error(ErrorCode::EmptyDataset, "no cross-modality cases");
  cfg.validate();
  const IdentityBackend identity;
  const DeformableBackend& deform = backend ? *backend : identity;

  std::vector<TrainingSample> volumes;
  for (const auto& c : cases) {
    volumes.push_back({c.fixed, std::nullopt});
    volumes.push_back({c.moving, std::nullopt});
  }

  UaemResult res;
  {
    double sum = 0.0;
    for (const auto& c : cases) sum += case_med(c, nullptr, nullptr);
    res.initial_med = sum / static_cast<double>(cases.size());
  }

  const int rounds = static_cast<int>(cfg.margins.size());
  TrainConfig tc = base;
  // The evaluation pass of model k uses margins[k], which is exactly what
  // round k+1 trains on, so its pairs are carried over.
  std::vector<RegisteredPair> pairs;
  for (int k = 0; k <= rounds; ++k) {
    if (k == 0) {
      res.models.push_back(train(volumes, tc, TrainMode::uae_m_selfsup).model);
    } else {
      tc.seed = derive_seed(base.seed, static_cast<std::uint64_t>(k));
      const TrainMode mode = pairs.empty() ? TrainMode::uae_m_selfsup : TrainMode::uae_m_paired;
      ProjectionModel next = train(volumes, tc, mode, pairs, &res.models.back()).model;
      next.iteration = static_cast<std::uint32_t>(k);
      res.models.push_back(std::move(next));
    }

    const ProjectionModel& m = res.models.back();
    const int margin = cfg.margins.empty() ? 0 : cfg.margins[static_cast<std::size_t>(std::min(k, rounds - 1))];
    pairs.clear();
    double sum = 0.0;
    for (const auto& c : cases) {
      IterationMetrics row;
      row.k = k;
      row.pair_id = c.id;
      try {
        RegisteredPair p = adareg_once(c.fixed, embed(c.fixed, m), c.moving, embed(c.moving, m), cfg, margin, k);
        const DisplacementField f = register_deformable(p, deform);
        row.ok = true;
        row.inliers = p.provenance.inliers;
        row.residual_mm = p.provenance.mean_residual_mm;
        row.med_mm = case_med(c, &p, &f);
        pairs.push_back(std::move(p));
      } catch (const Error& e) {
        std::cerr << "warning: skipping pair " << c.id << " at k=" << k << ": " << e.what() << '\n';
        row.med_mm = case_med(c, nullptr, nullptr);
      }
      sum += row.med_mm;
      res.table.push_back(row);
    }
    res.mean_med.push_back(sum / static_cast<double>(cases.size()));
    if (verbose) std::cerr << "k=" << k << " mean MED " << res.mean_med.back() << " mm\n";
  }
  return res;
}

std::string format_iteration_table(const std::vector<IterationMetrics>& rows) {
  std::string s = "k pair inliers residual_mm med_mm\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d %s %zu %.4f %.4f%s\n", r.k, r.pair_id.c_str(), r.inliers, r.residual_mm,
                  r.med_mm, r.ok ? "" : " failed");
    s += buf;
  }
  return s;
}

}  // namespace uae

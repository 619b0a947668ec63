#include "uae/matching.hpp"

#include "uae/error.hpp"
#include "uae/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace uae {

namespace {

struct WeightedHead {
  const EmbeddingVolume* volume;
  double weight;
};

std::vector<WeightedHead> heads_of(const EmbeddingSet& set, const SimilarityWeights& w) {
  std::vector<WeightedHead> h{{&set.coarse, w.coarse}, {&set.fine, w.fine}};
  if (set.semantic) h.push_back({&*set.semantic, w.semantic});
  return h;
}

bool is_grid_point(const EmbeddingSet& set, const Point3& image_point, std::size_t& index) {
  const Point3 e = image_point / 2.0;
  const Point3 r = e.array().round().matrix();
  if ((e - r).cwiseAbs().maxCoeff() != 0.0) return false;
  const int x = static_cast<int>(r(0)), y = static_cast<int>(r(1)), z = static_cast<int>(r(2));
  if (!set.geometry().contains_index(x, y, z)) return false;
  index = set.geometry().linear_index(x, y, z);
  return true;
}

Point3 image_point_of(const EmbeddingSet& set, std::size_t index) {
  const auto p = set.geometry().index_of(index);
  return {2.0 * p[0], 2.0 * p[1], 2.0 * p[2]};
}

}  // namespace

Point3 EmbeddingSet::image_extent() const {
  const auto& d = geometry().dims;
  return {2.0 * (d[0] - 1), 2.0 * (d[1] - 1), 2.0 * (d[2] - 1)};
}

bool EmbeddingSet::contains_image_point(const Point3& p) const {
  return geometry().contains(p / 2.0);
}

void EmbeddingSet::validate() const {
  if (!(coarse.geometry == fine.geometry) || (semantic && !(semantic->geometry == fine.geometry))) {
    throw Error(ErrorCode::GeometryMismatch, "embedding heads must share geometry");
  }
  if (!coarse.normalized || !fine.normalized || (semantic && !semantic->normalized)) {
    throw Error(ErrorCode::InvalidArgument, "embedding heads must be normalized");
  }
}

SimilarityWeights SimilarityWeights::defaults_for(const EmbeddingSet& set) {
  if (set.semantic) return {0.4, 0.4, 0.2};
  return {0.5, 0.5, 0.0};
}

void SimilarityWeights::validate(bool has_semantic) const {
  if (coarse < 0.0 || fine < 0.0 || semantic < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "similarity weights must be >= 0");
  }
  if (std::abs(coarse + fine + semantic - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidArgument, "similarity weights must sum to 1");
  }
  if (!has_semantic && semantic != 0.0) {
    throw Error(ErrorCode::InvalidArgument, "semantic weight set without a semantic head");
  }
}

void FixpointConfig::validate() const {
  if (L < 3 || L % 2 == 0) throw Error(ErrorCode::InvalidArgument, "L must be odd and >= 3");
  if (!(tau_dis > 0.0)) throw Error(ErrorCode::InvalidArgument, "tau_dis must be > 0");
  if (max_iter < 1) throw Error(ErrorCode::InvalidArgument, "max_iter must be >= 1");
  if (min_points < 4) throw Error(ErrorCode::InvalidArgument, "min_points must be >= 4");
}

std::string_view to_string(MatchMethod m) {
  switch (m) {
    case MatchMethod::nn: return "nn";
    case MatchMethod::fixpoint: return "fixpoint";
    case MatchMethod::fixpoint_fallback_nn: return "fixpoint_fallback_nn";
  }
  return "unknown";
}

std::string_view to_string(FixpointStatus s) {
  switch (s) {
    case FixpointStatus::converged: return "converged";
    case FixpointStatus::cycled: return "cycled";
    case FixpointStatus::exhausted: return "exhausted";
  }
  return "unknown";
}

IndexIteration iterate_indices(std::size_t start, const std::function<std::size_t(std::size_t)>& step,
                               const std::function<double(std::size_t)>& score, int max_iter) {
  IndexIteration it;
  it.trace.push_back(start);
  std::set<std::size_t> seen{start};
  std::size_t cur = start;
  auto best_of_trace = [&] {
    std::size_t best = it.trace.front();
    double best_score = score(best);
    for (std::size_t k = 1; k < it.trace.size(); ++k) {
      const double s = score(it.trace[k]);
      if (s > best_score) {
        best_score = s;
        best = it.trace[k];
      }
    }
    return best;
  };
  for (int i = 0; i < max_iter; ++i) {
    const std::size_t next = step(cur);
    if (next == cur) {
      it.status = FixpointStatus::converged;
      it.fixed_point = cur;
      it.n_fix = i;
      return it;
    }
    if (seen.count(next) != 0) {
      it.status = FixpointStatus::cycled;
      it.fixed_point = best_of_trace();
      return it;
    }
    seen.insert(next);
    it.trace.push_back(next);
    cur = next;
  }
  it.status = FixpointStatus::exhausted;
  it.fixed_point = best_of_trace();
  return it;
}

PairMatcher::PairMatcher(const EmbeddingSet& a, const EmbeddingSet& b, SimilarityWeights w)
    : a_(a), b_(b), w_(w) {
  a_.validate();
  b_.validate();
  if (a_.coarse.channels != b_.coarse.channels || a_.fine.channels != b_.fine.channels ||
      a_.semantic.has_value() != b_.semantic.has_value() ||
      (a_.semantic && a_.semantic->channels != b_.semantic->channels)) {
    throw Error(ErrorCode::DimensionMismatch, "template and query heads differ");
  }
  w_.validate(a_.semantic.has_value());
}

std::vector<std::vector<float>> PairMatcher::template_vectors(const EmbeddingSet& set,
                                                              const Point3& p) const {
  if (!set.contains_image_point(p)) {
    throw Error(ErrorCode::OutOfBounds, "point outside the embedding volume");
  }
  std::vector<std::vector<float>> out;
  for (const auto& h : heads_of(set, w_)) out.push_back(trilinear_sample(*h.volume, p / 2.0));
  return out;
}

PairMatcher::Lookup PairMatcher::nn_of_vectors(const EmbeddingSet& target,
                                               std::span<const std::vector<float>> vecs) const {
  const auto heads = heads_of(target, w_);
  std::vector<kernels::HeadQuery> q;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    q.push_back({heads[h].volume->data.data(), vecs[h].data(), heads[h].volume->channels, heads[h].weight});
  }
  std::vector<double> sim(target.geometry().voxel_count());
  kernels::similarity_parallel(q, sim.size(), sim);
  const std::size_t best = kernels::argmax_first(sim);
  return {best, sim[best]};
}

PairMatcher::Lookup PairMatcher::nn_of_voxel(const EmbeddingSet& source, std::size_t index,
                                             const EmbeddingSet& target) const {
  std::vector<std::vector<float>> vecs;
  for (const auto& h : heads_of(source, w_)) {
    const auto v = h.volume->voxel(index);
    vecs.emplace_back(v.begin(), v.end());
  }
  return nn_of_vectors(target, vecs);
}

std::size_t PairMatcher::forward_index(std::size_t a_index) {
  auto it = forward_cache_.find(a_index);
  if (it == forward_cache_.end()) it = forward_cache_.emplace(a_index, nn_of_voxel(a_, a_index, b_)).first;
  return it->second.index;
}

double PairMatcher::forward_similarity(std::size_t a_index) {
  forward_index(a_index);
  return forward_cache_.at(a_index).value;
}

std::size_t PairMatcher::backward_index(std::size_t b_index) {
  auto it = backward_cache_.find(b_index);
  if (it == backward_cache_.end()) it = backward_cache_.emplace(b_index, nn_of_voxel(b_, b_index, a_)).first;
  return it->second.index;
}

double PairMatcher::similarity_at(const std::vector<std::vector<float>>& tmpl, const Point3& q) const {
  const auto heads = heads_of(b_, w_);
  double s = 0.0;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const auto v = trilinear_sample(*heads[h].volume, q / 2.0);
    double dot = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) dot += static_cast<double>(v[k]) * tmpl[h][k];
    s += heads[h].weight * dot;
  }
  return s;
}

ScalarVolume PairMatcher::similarity_map(const Point3& t) const {
  const auto tmpl = template_vectors(a_, t);
  const auto heads = heads_of(b_, w_);
  std::vector<kernels::HeadQuery> q;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    q.push_back({heads[h].volume->data.data(), tmpl[h].data(), heads[h].volume->channels, heads[h].weight});
  }
  std::vector<double> sim(b_.geometry().voxel_count());
  kernels::similarity_parallel(q, sim.size(), sim);
  ScalarVolume out(b_.geometry());
  std::transform(sim.begin(), sim.end(), out.data.begin(), [](double v) { return static_cast<float>(v); });
  return out;
}

MatchResult PairMatcher::nn_match(const Point3& t) {
  std::size_t grid = 0;
  Lookup hit{};
  if (is_grid_point(a_, t, grid)) {
    forward_index(grid);
    hit = forward_cache_.at(grid);
  } else {
    hit = nn_of_vectors(b_, template_vectors(a_, t));
  }
  MatchResult r;
  r.point = image_point_of(b_, hit.index);
  r.similarity = hit.value;
  r.method = MatchMethod::nn;
  return r;
}

Point3 PairMatcher::forward_backward(const Point3& t) {
  const MatchResult q = nn_match(t);
  std::size_t qi = 0;
  is_grid_point(b_, q.point, qi);
  return image_point_of(a_, backward_index(qi));
}

FixpointTrace PairMatcher::fixed_point_iterate(const Point3& t0, int max_iter) {
  if (max_iter < 1) throw Error(ErrorCode::InvalidArgument, "max_iter must be >= 1");
  auto step = [this](std::size_t i) { return backward_index(forward_index(i)); };
  auto score = [this](std::size_t i) { return forward_similarity(i); };

  FixpointTrace out;
  std::size_t start = 0;
  int offset = 0;
  if (!is_grid_point(a_, t0, start)) {
    // First map from an off-grid point goes through the interpolated template.
    out.trace.push_back(t0);
    const MatchResult q = nn_match(t0);
    std::size_t qi = 0;
    is_grid_point(b_, q.point, qi);
    start = backward_index(qi);
    offset = 1;
    if (max_iter == 1) {
      out.trace.push_back(image_point_of(a_, start));
      out.status = FixpointStatus::exhausted;
      out.fixed_point = out.trace.back();
      return out;
    }
  }
  const IndexIteration it = iterate_indices(start, step, score, max_iter - offset);
  for (std::size_t idx : it.trace) out.trace.push_back(image_point_of(a_, idx));
  out.status = it.status;
  out.fixed_point = image_point_of(a_, it.fixed_point);
  out.n_fix = it.status == FixpointStatus::converged ? it.n_fix + offset : -1;
  return out;
}

MatchResult PairMatcher::fixpoint_match(const Point3& t, const FixpointConfig& cfg) {
  cfg.validate();
  if (!a_.contains_image_point(t)) throw Error(ErrorCode::OutOfBounds, "template point outside A");
  const auto& ga = a_.geometry();
  const Point3 te = t / 2.0;
  const int half = cfg.L / 2;
  std::array<int, 3> lo{}, hi{};
  for (std::size_t ax = 0; ax < 3; ++ax) {
    const int c = static_cast<int>(std::lround(te(static_cast<Eigen::Index>(ax))));
    lo[ax] = std::max(0, c - half);
    hi[ax] = std::min(ga.dims[ax] - 1, c + half);
  }
  const long cube = static_cast<long>(hi[0] - lo[0] + 1) * (hi[1] - lo[1] + 1) * (hi[2] - lo[2] + 1);
  if (cube < cfg.min_points) {
    throw Error(ErrorCode::OutOfBounds, "seed cube clamped to bounds holds too few voxels");
  }

  auto step = [this](std::size_t i) { return backward_index(forward_index(i)); };
  auto score = [this](std::size_t i) { return forward_similarity(i); };

  std::set<std::size_t> kept;
  for (int z = lo[2]; z <= hi[2]; ++z) {
    for (int y = lo[1]; y <= hi[1]; ++y) {
      for (int x = lo[0]; x <= hi[0]; ++x) {
        const IndexIteration it = iterate_indices(ga.linear_index(x, y, z), step, score, cfg.max_iter);
        if (it.status != FixpointStatus::converged) continue;
        const auto p = ga.index_of(it.fixed_point);
        const Point3 pe(p[0], p[1], p[2]);
        if ((pe - te).norm() <= cfg.tau_dis) kept.insert(it.fixed_point);
      }
    }
  }

  const FixpointTrace seed = fixed_point_iterate(t, cfg.max_iter);
  const auto tmpl = template_vectors(a_, t);

  std::vector<Point3> src, dst;
  for (std::size_t idx : kept) {
    src.push_back(image_point_of(a_, idx));
    dst.push_back(image_point_of(b_, forward_index(idx)));
  }

  MatchResult r;
  if (static_cast<int>(src.size()) >= cfg.min_points && spans_rank(src, 3)) {
    const auto [affine, report] = fit_affine(src, dst);
    Point3 q = affine.apply(t);
    q = q.cwiseMax(Point3::Zero()).cwiseMin(b_.image_extent());
    r.point = q;
    r.similarity = similarity_at(tmpl, q);
    r.method = MatchMethod::fixpoint;
    r.n_fixed_points_used = static_cast<int>(src.size());
  } else {
    r = nn_match(t);
    r.method = MatchMethod::fixpoint_fallback_nn;
    r.n_fixed_points_used = static_cast<int>(src.size());
  }
  r.n_fix = seed.n_fix;
  return r;
}

ScalarVolume similarity_map(const EmbeddingSet& templ, const Point3& t, const EmbeddingSet& query,
                            const SimilarityWeights& w) {
  return PairMatcher(templ, query, w).similarity_map(t);
}

MatchResult nn_match(const EmbeddingSet& templ, const Point3& t, const EmbeddingSet& query,
                     const SimilarityWeights& w) {
  return PairMatcher(templ, query, w).nn_match(t);
}

Point3 forward_backward(const Point3& t, const EmbeddingSet& a, const EmbeddingSet& b,
                        const SimilarityWeights& w) {
  return PairMatcher(a, b, w).forward_backward(t);
}

FixpointTrace fixed_point_iterate(const Point3& t0, const EmbeddingSet& a, const EmbeddingSet& b,
                                  const SimilarityWeights& w, int max_iter) {
  return PairMatcher(a, b, w).fixed_point_iterate(t0, max_iter);
}

MatchResult fixpoint_match(const Point3& t, const EmbeddingSet& a, const EmbeddingSet& b,
                           const SimilarityWeights& w, const FixpointConfig& cfg) {
  return PairMatcher(a, b, w).fixpoint_match(t, cfg);
}

std::vector<MatchResult> grid_match(std::span<const Point3> points, const EmbeddingSet& a,
                                    const EmbeddingSet& b, const SimilarityWeights& w,
                                    const std::optional<FixpointConfig>& cfg) {
  PairMatcher matcher(a, b, w);
  std::vector<MatchResult> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    try {
      out.push_back(cfg ? matcher.fixpoint_match(p, *cfg) : matcher.nn_match(p));
    } catch (const Error& e) {
      MatchResult failed;
      failed.ok = false;
      failed.error = e.what();
      failed.method = cfg ? MatchMethod::fixpoint : MatchMethod::nn;
      out.push_back(std::move(failed));
    }
  }
  return out;
}

}  // namespace uae

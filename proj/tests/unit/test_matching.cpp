#include "doctest.h"

#include "uae/error.hpp"
#include "uae/kernels.hpp"
#include "uae/matching.hpp"

#include <cmath>
#include <map>
#include <random>

using namespace uae;

namespace {

VolumeGeometry grid(int nx, int ny, int nz) {
  VolumeGeometry g;
  g.dims = {nx, ny, nz};
  g.spacing = Eigen::Vector3d::Constant(4.0);
  return g;
}

EmbeddingVolume random_head(const VolumeGeometry& g, int d, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  EmbeddingVolume e(g, d);
  for (auto& v : e.data) v = n(rng);
  return l2_normalize(e).volume;
}

EmbeddingSet random_set(const VolumeGeometry& g, std::uint64_t seed, bool semantic = false, int d = 8) {
  std::mt19937_64 rng(seed);
  EmbeddingSet s;
  s.coarse = random_head(g, d, rng);
  s.fine = random_head(g, d, rng);
  if (semantic) s.semantic = random_head(g, d, rng);
  return s;
}

// Copies `a` shifted by `d` embedding voxels; voxels with no source keep
// their own random vectors.
EmbeddingSet shifted_copy(const EmbeddingSet& a, const std::array<int, 3>& d, std::uint64_t seed) {
  EmbeddingSet b = random_set(a.geometry(), seed, a.semantic.has_value(), a.fine.channels);
  const auto& dims = a.geometry().dims;
  auto copy = [&](const EmbeddingVolume& src, EmbeddingVolume& dst) {
    for (int z = 0; z < dims[2]; ++z)
      for (int y = 0; y < dims[1]; ++y)
        for (int x = 0; x < dims[0]; ++x) {
          const int sx = x - d[0], sy = y - d[1], sz = z - d[2];
          if (!a.geometry().contains_index(sx, sy, sz)) continue;
          for (int c = 0; c < src.channels; ++c) dst.at(x, y, z, c) = src.at(sx, sy, sz, c);
        }
  };
  copy(a.coarse, b.coarse);
  copy(a.fine, b.fine);
  if (a.semantic) copy(*a.semantic, *b.semantic);
  return b;
}

double dot_at(const EmbeddingVolume& v, std::size_t i, const std::vector<float>& t) {
  double s = 0.0;
  for (int c = 0; c < v.channels; ++c) s += double(v.voxel(i)[static_cast<std::size_t>(c)]) * t[static_cast<std::size_t>(c)];
  return s;
}

// Naive oracle: triple loop over the query grid.
std::vector<double> brute_similarity(const EmbeddingSet& a, const Point3& t, const EmbeddingSet& b,
                                     const SimilarityWeights& w) {
  const auto tc = trilinear_sample(a.coarse, t / 2.0);
  const auto tf = trilinear_sample(a.fine, t / 2.0);
  std::vector<float> ts;
  if (a.semantic) ts = trilinear_sample(*a.semantic, t / 2.0);
  const auto& g = b.geometry();
  std::vector<double> out(g.voxel_count());
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x) {
        const std::size_t i = g.linear_index(x, y, z);
        double s = w.coarse * dot_at(b.coarse, i, tc) + w.fine * dot_at(b.fine, i, tf);
        if (b.semantic) s += w.semantic * dot_at(*b.semantic, i, ts);
        out[i] = s;
      }
  return out;
}

Point3 brute_argmax(const std::vector<double>& s, const VolumeGeometry& g) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i] > s[best]) best = i;
  const auto p = g.index_of(best);
  return {2.0 * p[0], 2.0 * p[1], 2.0 * p[2]};
}

}  // namespace

TEST_CASE("similarity map equals the naive oracle") {
  const auto g = grid(7, 6, 5);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const EmbeddingSet a = random_set(g, seed, true), b = random_set(g, seed + 100, true);
    const SimilarityWeights w{0.4, 0.4, 0.2};
    const Point3 t(3.3, 5.0, 2.7);
    const ScalarVolume m = similarity_map(a, t, b, w);
    const auto o = brute_similarity(a, t, b, w);
    for (std::size_t i = 0; i < o.size(); ++i) {
      CHECK(std::abs(m.data[i] - o[i]) < 1e-6);
      CHECK(std::abs(m.data[i]) <= 1.0 + 1e-6);
    }
  }
}

TEST_CASE("self similarity peaks at the template") {
  const auto g = grid(6, 6, 6);
  const EmbeddingSet a = random_set(g, 4);
  const SimilarityWeights w{0.0, 1.0, 0.0};
  const Point3 t(4, 6, 2);
  const ScalarVolume m = similarity_map(a, t, a, w);
  const std::size_t ti = g.linear_index(2, 3, 1);
  CHECK(m.data[ti] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(*std::max_element(m.data.begin(), m.data.end()) == m.data[ti]);
  const MatchResult r = nn_match(a, t, a, w);
  CHECK(r.point == t);
  CHECK(r.similarity == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("constant embeddings give a constant map") {
  const auto g = grid(4, 4, 4);
  EmbeddingSet s;
  s.coarse = EmbeddingVolume(g, 3, true);
  s.fine = EmbeddingVolume(g, 3, true);
  for (std::size_t i = 0; i < g.voxel_count(); ++i) {
    s.coarse.data[i * 3] = 1.0f;
    s.fine.data[i * 3 + 1] = 1.0f;
  }
  const ScalarVolume m = similarity_map(s, Point3(2, 2, 2), s, SimilarityWeights{});
  for (float v : m.data) CHECK(v == m.data[0]);
  // all ties: the lowest index wins
  CHECK(nn_match(s, Point3(4, 4, 4), s, SimilarityWeights{}).point == Point3::Zero());
}

TEST_CASE("nn_match finds a planted vector and equals the brute-force argmax") {
  const auto g = grid(8, 7, 6);
  const EmbeddingSet a = random_set(g, 8);
  EmbeddingSet b = random_set(g, 9);
  const Point3 t(6, 4, 8);
  const std::size_t ai = g.linear_index(3, 2, 4), bi = g.linear_index(5, 1, 2);
  for (int c = 0; c < 8; ++c) {
    b.coarse.voxel(bi)[static_cast<std::size_t>(c)] = a.coarse.voxel(ai)[static_cast<std::size_t>(c)];
    b.fine.voxel(bi)[static_cast<std::size_t>(c)] = a.fine.voxel(ai)[static_cast<std::size_t>(c)];
  }
  const MatchResult r = nn_match(a, t, b, SimilarityWeights{});
  CHECK(r.point == Point3(10, 2, 4));
  CHECK(r.similarity == doctest::Approx(1.0).epsilon(1e-5));

  for (std::uint64_t seed = 20; seed < 30; ++seed) {
    const EmbeddingSet p = random_set(g, seed), q = random_set(g, seed + 50);
    const Point3 tp(1.0 + seed % 5, 3.5, 7.25);
    const MatchResult m = nn_match(p, tp, q, SimilarityWeights{});
    CHECK(m.point == brute_argmax(brute_similarity(p, tp, q, SimilarityWeights{}), g));
  }
}

TEST_CASE("nn_match is independent of the thread count") {
  const auto g = grid(9, 9, 9);
  const EmbeddingSet a = random_set(g, 31), b = random_set(g, 32);
  std::vector<Point3> ref;
  for (int threads : {1, 3}) {
    kernels::set_thread_count(threads);
    std::vector<Point3> got;
    for (int k = 0; k < 20; ++k) got.push_back(nn_match(a, Point3(k % 17, (3 * k) % 17, (7 * k) % 17), b, {}).point);
    if (ref.empty()) ref = got;
    CHECK(got == ref);
  }
  kernels::set_thread_count(0);
}

TEST_CASE("forward_backward") {
  const auto g = grid(8, 8, 8);
  const EmbeddingSet a = random_set(g, 40);
  CHECK(forward_backward(Point3(6, 8, 10), a, a, {}) == Point3(6, 8, 10));

  const EmbeddingSet b = shifted_copy(a, {2, -1, 1}, 41);
  CHECK(forward_backward(Point3(6, 8, 10), a, b, {}) == Point3(6, 8, 10));

  const EmbeddingSet c = random_set(g, 42);
  const Point3 t(2, 12, 4);
  const Point3 q = brute_argmax(brute_similarity(a, t, c, {}), g);
  const Point3 back = brute_argmax(brute_similarity(c, q, a, {}), g);
  CHECK(forward_backward(t, a, c, {}) == back);
}

TEST_CASE("fixed_point_iterate") {
  const auto g = grid(6, 6, 6);
  const EmbeddingSet a = random_set(g, 50);
  const EmbeddingSet b = shifted_copy(a, {1, 1, 0}, 51);
  const FixpointTrace tr = fixed_point_iterate(Point3(4, 4, 4), a, b, {}, 20);
  CHECK(tr.status == FixpointStatus::converged);
  CHECK(tr.n_fix == 0);
  CHECK(tr.fixed_point == Point3(4, 4, 4));

  SUBCASE("random pairs: self similarity never drops along the trace") {
    for (std::uint64_t seed = 60; seed < 75; ++seed) {
      const EmbeddingSet p = random_set(grid(7, 6, 5), seed, false, 3);
      const EmbeddingSet q = random_set(grid(6, 7, 5), seed + 500, false, 3);
      PairMatcher m(p, q, {});
      for (int k = 0; k < 10; ++k) {
        const Point3 t0(2.0 * (k % 7), 2.0 * ((k * 3) % 6), 2.0 * ((k * 5) % 5));
        const FixpointTrace f = m.fixed_point_iterate(t0, 30);
        double prev = -2.0;
        for (const auto& p_i : f.trace) {
          const double s = m.nn_match(p_i).similarity;
          CHECK(s >= prev - 1e-6);
          prev = s;
        }
        if (f.status == FixpointStatus::converged) CHECK(m.forward_backward(f.fixed_point) == f.fixed_point);
      }
    }
  }
}

TEST_CASE("iterate_indices handles convergence, cycles and exhaustion") {
  const auto run = [](std::map<std::size_t, std::size_t> next, std::map<std::size_t, double> score,
                      std::size_t start, int max_iter) {
    return iterate_indices(
        start, [&](std::size_t i) { return next.at(i); }, [&](std::size_t i) { return score.at(i); }, max_iter);
  };
  SUBCASE("immediate fixed point") {
    const auto it = run({{0, 0}}, {{0, 0.5}}, 0, 5);
    CHECK(it.status == FixpointStatus::converged);
    CHECK(it.n_fix == 0);
    CHECK(it.fixed_point == 0);
  }
  SUBCASE("converges after two steps") {
    const auto it = run({{0, 1}, {1, 2}, {2, 2}}, {{0, 0.1}, {1, 0.2}, {2, 0.3}}, 0, 5);
    CHECK(it.status == FixpointStatus::converged);
    CHECK(it.n_fix == 2);
    CHECK(it.fixed_point == 2);
    CHECK(it.trace == std::vector<std::size_t>{0, 1, 2});
  }
  SUBCASE("two-cycle resolves to the best scored trace point") {
    const auto it = run({{0, 1}, {1, 2}, {2, 1}}, {{0, 0.1}, {1, 0.7}, {2, 0.4}}, 0, 10);
    CHECK(it.status == FixpointStatus::cycled);
    CHECK(it.fixed_point == 1);
    CHECK(it.n_fix == -1);
  }
  SUBCASE("exhausted") {
    const auto it = run({{0, 1}, {1, 2}, {2, 3}, {3, 4}}, {{0, 0.1}, {1, 0.9}, {2, 0.3}, {3, 0.2}}, 0, 3);
    CHECK(it.status == FixpointStatus::exhausted);
    CHECK(it.fixed_point == 1);
  }
}

TEST_CASE("fixpoint_match on a translated pair") {
  const auto g = grid(10, 10, 10);
  const EmbeddingSet a = random_set(g, 70);
  const std::array<int, 3> d{2, -1, 1};
  const EmbeddingSet b = shifted_copy(a, d, 71);
  const Point3 shift(2.0 * d[0], 2.0 * d[1], 2.0 * d[2]);
  FixpointConfig cfg;
  for (const Point3 t : {Point3(8, 10, 8), Point3(9.0, 11.0, 7.0), Point3(10, 12, 10)}) {
    const MatchResult r = fixpoint_match(t, a, b, {}, cfg);
    CHECK(r.method == MatchMethod::fixpoint);
    CHECK((r.point - (t + shift)).norm() < 1e-9);
    CHECK(r.n_fixed_points_used >= cfg.min_points);
  }
  const Point3 t(8, 10, 8);
  CHECK(fixpoint_match(t, a, b, {}, cfg).point == nn_match(a, t, b, {}).point);
}

TEST_CASE("fixpoint_match falls back to NN") {
  const auto g = grid(8, 8, 8);
  const EmbeddingSet a = random_set(g, 80), b = random_set(g, 81);
  FixpointConfig cfg;
  cfg.tau_dis = 1e-6;
  const Point3 t(6, 6, 6);
  const MatchResult r = fixpoint_match(t, a, b, {}, cfg);
  CHECK(r.method == MatchMethod::fixpoint_fallback_nn);
  CHECK(r.point == nn_match(a, t, b, {}).point);
  CHECK_THROWS_AS(fixpoint_match(Point3(40, 0, 0), a, b, {}, cfg), Error);
}

TEST_CASE("fixpoint config validation") {
  FixpointConfig c;
  c.L = 4;
  CHECK_THROWS_AS(c.validate(), Error);
  c.L = 1;
  CHECK_THROWS_AS(c.validate(), Error);
  c.L = 3;
  c.tau_dis = 0.0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("grid_match") {
  const auto g = grid(12, 12, 12);
  const EmbeddingSet a = random_set(g, 90);
  const std::array<int, 3> d{1, 2, -1};
  const EmbeddingSet b = shifted_copy(a, d, 91);
  CHECK(grid_match({}, a, b, {}, std::nullopt).empty());

  const std::vector<Point3> one{Point3(5, 7, 9)};
  const auto single = grid_match(one, a, b, {}, std::nullopt);
  CHECK(single[0].point == nn_match(a, one[0], b, {}).point);

  std::vector<Point3> pts;
  for (int z = 2; z < 7; ++z)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 4; ++x) pts.emplace_back(2.0 * (x + 2), 2.0 * (y + 2), 2.0 * (z + 2));
  REQUIRE(pts.size() == 100);
  const Point3 shift(2.0 * d[0], 2.0 * d[1], 2.0 * d[2]);
  for (const auto& cfg : {std::optional<FixpointConfig>{}, std::optional<FixpointConfig>(FixpointConfig{})}) {
    const auto rs = grid_match(pts, a, b, {}, cfg);
    REQUIRE(rs.size() == pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      CHECK(rs[i].ok);
      CHECK((rs[i].point - pts[i] - shift).norm() < 1e-9);
    }
  }

  const std::vector<Point3> mixed{Point3(4, 4, 4), Point3(100, 0, 0)};
  const auto rs = grid_match(mixed, a, b, {}, std::nullopt);
  CHECK(rs[0].ok);
  CHECK_FALSE(rs[1].ok);
}

TEST_CASE("weights validation") {
  const auto g = grid(3, 3, 3);
  const EmbeddingSet a = random_set(g, 1);
  CHECK_THROWS_AS(PairMatcher(a, a, SimilarityWeights{0.5, 0.4, 0.1}), Error);
  CHECK_THROWS_AS(PairMatcher(a, a, SimilarityWeights{0.6, 0.6, 0.0}), Error);
  CHECK(SimilarityWeights::defaults_for(random_set(g, 2, true)).semantic == 0.2);
}

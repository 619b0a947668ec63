#include "doctest.h"

#include "support/loss_oracles.hpp"
#include "uae/error.hpp"
#include "uae/model.hpp"
#include "uae/phantom.hpp"

#include <cmath>
#include <random>

using namespace uae;
using K = DescriptorBank::Kernel;

namespace {

ScalarVolume blob_volume(int n, const Point3& c, double sigma) {
  VolumeGeometry g;
  g.dims = {n, n, n};
  ScalarVolume v(g);
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        v.at(x, y, z) = static_cast<float>(std::exp(-0.5 * (Point3(x, y, z) - c).squaredNorm() / (sigma * sigma)));
  return v;
}

ScalarVolume random_volume(int n, std::uint64_t seed) {
  VolumeGeometry g;
  g.dims = {n, n - 2, n - 4};
  ScalarVolume v(g);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 3.0f);
  for (auto& x : v.data) x = u(rng);
  return v;
}

// Direct 3D correlation with clamped borders, one separable factor per axis.
double direct_filter(const ScalarVolume& v, const std::array<std::vector<double>, 3>& k, int x, int y, int z) {
  const auto [lo, hi] = std::minmax_element(v.data.begin(), v.data.end());
  const auto& d = v.geometry.dims;
  const int r0 = static_cast<int>(k[0].size() / 2), r1 = static_cast<int>(k[1].size() / 2),
            r2 = static_cast<int>(k[2].size() / 2);
  double s = 0.0;
  for (int c = -r2; c <= r2; ++c)
    for (int b = -r1; b <= r1; ++b)
      for (int a = -r0; a <= r0; ++a) {
        const int px = std::clamp(x + a, 0, d[0] - 1), py = std::clamp(y + b, 0, d[1] - 1),
                  pz = std::clamp(z + c, 0, d[2] - 1);
        const double val = (v.at(px, py, pz) - *lo) / double(*hi - *lo);
        s += k[0][static_cast<std::size_t>(a + r0)] * k[1][static_cast<std::size_t>(b + r1)] *
             k[2][static_cast<std::size_t>(c + r2)] * val;
      }
  return s;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.steps = 3;
  c.head_dim = 16;
  c.n_pos_fine = 20;
  c.n_neg_fine = 30;
  c.n_fov_fine = 0;
  c.n_pos_coarse = 10;
  c.n_neg_coarse = 20;
  c.n_sem_per_class = 5;
  c.min_dist_fine = 4.0;
  c.min_dist_coarse = 8.0;
  c.seed = 17;
  c.augment.patch_size = {24, 24, 20};
  return c;
}

std::vector<TrainingSample> tiny_dataset() {
  PhantomSpec s;
  s.dims = {48, 48, 48};
  s.num_organs = 3;
  s.organ_axis_min = 4.0;
  s.organ_axis_max = 6.0;
  s.texture_blobs = 80;
  std::vector<TrainingSample> data;
  for (std::uint64_t seed : {1, 2}) {
    Phantom p = gen_phantom(s, seed);
    data.push_back({std::move(p.volume), std::move(p.labels)});
  }
  return data;
}

}  // namespace

TEST_CASE("filter taps") {
  for (double sigma : {1.0, 2.0, 4.0}) {
    const auto g = DescriptorBank::kernel(K::smooth, sigma);
    const auto d = DescriptorBank::kernel(K::first_derivative, sigma);
    const auto dd = DescriptorBank::kernel(K::second_derivative, sigma);
    CHECK(g.size() == static_cast<std::size_t>(2 * std::ceil(3 * sigma) + 1));
    const int r = static_cast<int>(g.size() / 2);
    double s0 = 0, d0 = 0, d1 = 0, e0 = 0, e1 = 0, e2 = 0;
    for (int i = -r; i <= r; ++i) {
      const auto k = static_cast<std::size_t>(i + r);
      s0 += g[k];
      d0 += d[k];
      d1 += i * d[k];
      e0 += dd[k];
      e1 += i * dd[k];
      e2 += i * i * dd[k];
      CHECK(g[k] == g[static_cast<std::size_t>(r - i)]);
    }
    CHECK(std::abs(s0 - 1.0) < 1e-12);
    CHECK(std::abs(d0) < 1e-12);
    CHECK(std::abs(d1 - 1.0) < 1e-12);
    CHECK(std::abs(e0) < 1e-12);
    CHECK(std::abs(e1) < 1e-12);
    CHECK(std::abs(e2 - 2.0) < 1e-12);
  }
}

TEST_CASE("descriptors agree with direct filtering") {
  const ScalarVolume v = random_volume(20, 4);
  const EmbeddingVolume f = compute_descriptors(v);
  CHECK(f.geometry == v.geometry.half_resolution());
  CHECK(f.channels == DescriptorBank::kFeatureDim);
  const auto g1 = DescriptorBank::kernel(K::smooth, 1.0);
  const auto g2 = DescriptorBank::kernel(K::smooth, 2.0);
  const auto d2 = DescriptorBank::kernel(K::first_derivative, 2.0);
  const auto dd4 = DescriptorBank::kernel(K::second_derivative, 4.0);
  const auto g4 = DescriptorBank::kernel(K::smooth, 4.0);
  const std::array<int, 3> probes[] = {{0, 0, 0}, {3, 4, 2}, {9, 8, 7}, {5, 0, 3}};
  for (const auto& p : probes) {
    const int x = 2 * p[0], y = 2 * p[1], z = 2 * p[2];
    CHECK(std::abs(f.at(p[0], p[1], p[2], 1) - direct_filter(v, {g1, g1, g1}, x, y, z)) < 1e-5);
    CHECK(std::abs(f.at(p[0], p[1], p[2], 6) - 2.0 * direct_filter(v, {g2, d2, g2}, x, y, z)) < 1e-5);
    const double lap = direct_filter(v, {dd4, g4, g4}, x, y, z) + direct_filter(v, {g4, dd4, g4}, x, y, z) +
                       direct_filter(v, {g4, g4, dd4}, x, y, z);
    CHECK(std::abs(f.at(p[0], p[1], p[2], 15) - 16.0 * lap) < 1e-4);
  }
}

TEST_CASE("constant volumes give zero structure channels and e1 embeddings") {
  VolumeGeometry g;
  g.dims = {12, 12, 12};
  const ScalarVolume flat(g, 2.5f);
  const EmbeddingVolume f = compute_descriptors(flat);
  for (float x : f.data) CHECK(x == 0.0f);
  const ProjectionModel m = ProjectionModel::random(DescriptorBank::kFeatureDim, 8, false, 1);
  const EmbeddingSet e = embed(flat, m);
  CHECK(last_embed_stats().zero_fine == f.voxel_count());
  CHECK(last_embed_stats().zero_coarse == f.voxel_count());
  CHECK(e.fine.at(0, 0, 0, 0) == 1.0f);
  CHECK(e.fine.at(0, 0, 0, 1) == 0.0f);
}

TEST_CASE("descriptors follow even shifts of the input") {
  const ScalarVolume a = blob_volume(56, Point3(26, 27, 28), 3.0);
  const ScalarVolume b = blob_volume(56, Point3(28, 31, 28), 3.0);
  const EmbeddingVolume fa = compute_descriptors(a), fb = compute_descriptors(b);
  for (int c = 0; c < fa.channels; ++c)
    for (int z = 8; z < 18; ++z)
      for (int y = 8; y < 18; ++y)
        for (int x = 8; x < 18; ++x) CHECK(std::abs(fb.at(x + 1, y + 2, z, c) - fa.at(x, y, z, c)) < 1e-5);
}

TEST_CASE("embedding is the normalized projection of the features") {
  const ScalarVolume v = random_volume(16, 5);
  const ProjectionModel m = ProjectionModel::random(DescriptorBank::kFeatureDim, 12, true, 3);
  const FeatureSet fs = compute_features(v);
  const EmbeddingSet e = embed_features(fs, m);
  REQUIRE(e.semantic.has_value());
  for (std::size_t i = 0; i < fs.fine.voxel_count(); i += 37) {
    Eigen::RowVectorXd f(m.feature_dim), c(m.feature_dim);
    for (int k = 0; k < m.feature_dim; ++k) {
      f(k) = fs.fine.data[i * 16 + static_cast<std::size_t>(k)];
      c(k) = fs.coarse.data[i * 16 + static_cast<std::size_t>(k)];
    }
    const Eigen::RowVectorXd ef = (f * m.w_fine).normalized(), ec = (c * m.w_coarse).normalized();
    const Eigen::RowVectorXd es = (f * *m.w_semantic).normalized();
    for (int k = 0; k < 12; ++k) {
      CHECK(std::abs(e.fine.data[i * 12 + static_cast<std::size_t>(k)] - ef(k)) < 1e-5);
      CHECK(std::abs(e.coarse.data[i * 12 + static_cast<std::size_t>(k)] - ec(k)) < 1e-5);
      CHECK(std::abs(e.semantic->data[i * 12 + static_cast<std::size_t>(k)] - es(k)) < 1e-5);
    }
  }
  ProjectionModel wrong = ProjectionModel::random(20, 12, false, 3);
  CHECK_THROWS_AS(embed_features(fs, wrong), Error);
}

TEST_CASE("head gradients through the projection match finite differences") {
  std::mt19937_64 rng(19);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 6; ++trial) {
    const bool cross = trial % 2 == 1;
    HeadBatch hb;
    hb.batch = uae::testing::random_pair_batch(rng, 3, 4, cross ? 2 : 0, 6, 0.5);
    hb.features.resize(hb.batch.vectors.rows(), 5);
    for (Eigen::Index i = 0; i < hb.features.size(); ++i) hb.features.data()[i] = n(rng);
    WeightMatrix w(5, 6);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = n(rng);
    const HeadGradient hg = head_loss(w, hb, cross);
    const auto check = uae::testing::check_gradient(
        Eigen::MatrixXd(w), Eigen::MatrixXd(hg.grad), [&](const Eigen::MatrixXd& x) {
          PairBatch b = hb.batch;
          b.vectors = hb.features * x;
          b.vectors.rowwise().normalize();
          return uae::testing::naive_infonce(b, cross);
        });
    CHECK(check.max_relative_error < 1e-4);
  }

  LabeledHeadBatch lb;
  lb.batch = uae::testing::random_labeled_batch(rng, 15, 3, 6, 0.5);
  lb.features.resize(15, 5);
  for (Eigen::Index i = 0; i < lb.features.size(); ++i) lb.features.data()[i] = n(rng);
  WeightMatrix w(5, 6);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = n(rng);
  const HeadGradient sg = semantic_loss(w, lb);
  const auto check = uae::testing::check_gradient(Eigen::MatrixXd(w), Eigen::MatrixXd(sg.grad), [&](const Eigen::MatrixXd& x) {
    LabeledBatch b = lb.batch;
    b.vectors = lb.features * x;
    b.vectors.rowwise().normalize();
    return uae::testing::naive_proto_supcon(b);
  });
  CHECK(check.max_relative_error < 1e-4);
}

TEST_CASE("model files") {
  for (bool semantic : {false, true}) {
    ProjectionModel m = ProjectionModel::random(16, 10, semantic, 8);
    m.iteration = 2;
    m.config_hash = 0x1234567890abcdefULL;
    const auto bytes = encode_model(m);
    const ProjectionModel back = decode_model(bytes);
    CHECK(encode_model(back) == bytes);
    CHECK(back.w_fine == m.w_fine);
    CHECK(back.w_semantic.has_value() == semantic);
    CHECK(back.iteration == 2);

    for (std::size_t byte = bytes.size() - 40; byte < bytes.size(); ++byte) {
      auto bad = bytes;
      bad[byte] ^= 0x10;
      try {
        decode_model(bad);
        FAIL("accepted");
      } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ChecksumMismatch);
      }
    }
    auto bad = bytes;
    bad.push_back(0);
    CHECK_THROWS_AS(decode_model(bad), Error);
    CHECK_THROWS_AS(decode_model(std::span(bytes).first(bytes.size() - 3)), Error);
    bad = bytes;
    bad[1] = 'X';
    try {
      decode_model(bad);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::BadMagic);
    }
  }
}

TEST_CASE("training") {
  const auto data = tiny_dataset();
  const TrainConfig cfg = tiny_config();
  const TrainResult a = train(data, cfg, TrainMode::uae_s);
  const TrainResult b = train(data, cfg, TrainMode::uae_s);
  CHECK(encode_model(a.model) == encode_model(b.model));
  CHECK(a.log.size() == 3);
  CHECK(a.model.w_semantic.has_value());
  for (const auto& r : a.log) {
    CHECK(std::isfinite(r.fine));
    CHECK(r.fine > 0.0);
  }
  CHECK(a.model.config_hash == config_hash(cfg));

  TrainConfig other = cfg;
  other.seed = 18;
  CHECK(encode_model(train(data, other, TrainMode::uae_s).model) != encode_model(a.model));

  TrainConfig none = cfg;
  none.steps = 0;
  const ProjectionModel init = ProjectionModel::random(16, 16, true, 99);
  const TrainResult z = train(data, none, TrainMode::uae_s, {}, &init);
  CHECK(z.model.w_fine == init.w_fine);
  CHECK(z.model.w_coarse == init.w_coarse);
  CHECK(z.log.empty());

  try {
    train({}, cfg, TrainMode::uae_s);
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyDataset);
  }
  TrainConfig bad = cfg;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(train(data, bad, TrainMode::uae_s), Error);
}

TEST_CASE("training batches respect the negative distance floor") {
  const auto data = tiny_dataset();
  TrainConfig cfg = tiny_config();
  cfg.min_dist_fine = 1e6;
  try {
    train(data, cfg, TrainMode::uae_s);
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InsufficientOverlap);
  }
}

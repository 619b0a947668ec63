#include "uae/model.hpp"

#include "bytes.hpp"
#include "uae/error.hpp"
#include "uae/evf.hpp"
#include "uae/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace uae {

namespace {

using detail::ByteReader;
using detail::ByteWriter;

thread_local EmbedStats g_last_stats;

using Field = std::vector<float>;

Field convolve(const Field& in, const std::array<int, 3>& dims, int axis,
               const std::vector<double>& k) {
  Field out(in.size());
  kernels::convolve_axis_parallel(in.data(), out.data(), dims, axis, k);
  return out;
}

struct ScaleResponses {
  Field smooth, gx, gy, gz, gxx, gyy, gzz;
};

ScaleResponses scale_responses(const Field& img, const std::array<int, 3>& dims, double sigma) {
  using K = DescriptorBank::Kernel;
  const auto g = DescriptorBank::kernel(K::smooth, sigma);
  const auto d = DescriptorBank::kernel(K::first_derivative, sigma);
  const auto dd = DescriptorBank::kernel(K::second_derivative, sigma);
  const Field xg = convolve(img, dims, 0, g);
  const Field xd = convolve(img, dims, 0, d);
  const Field xdd = convolve(img, dims, 0, dd);
  const Field xg_yg = convolve(xg, dims, 1, g);
  const Field xg_yd = convolve(xg, dims, 1, d);
  const Field xg_ydd = convolve(xg, dims, 1, dd);
  const Field xd_yg = convolve(xd, dims, 1, g);
  const Field xdd_yg = convolve(xdd, dims, 1, g);
  ScaleResponses r;
  r.smooth = convolve(xg_yg, dims, 2, g);
  r.gz = convolve(xg_yg, dims, 2, d);
  r.gzz = convolve(xg_yg, dims, 2, dd);
  r.gy = convolve(xg_yd, dims, 2, g);
  r.gyy = convolve(xg_ydd, dims, 2, g);
  r.gx = convolve(xd_yg, dims, 2, g);
  r.gxx = convolve(xdd_yg, dims, 2, g);
  return r;
}

Eigen::RowVectorXd feature_row(const EmbeddingVolume& f, std::size_t idx) {
  const auto v = f.voxel(idx);
  Eigen::RowVectorXd r(f.channels);
  for (int c = 0; c < f.channels; ++c) r(c) = v[static_cast<std::size_t>(c)];
  return r;
}

Eigen::RowVectorXd feature_row_at(const EmbeddingVolume& f, const Point3& p) {
  std::vector<float> tmp(static_cast<std::size_t>(f.channels));
  trilinear_blend_clamped(f, p, tmp);
  Eigen::RowVectorXd r(f.channels);
  for (int c = 0; c < f.channels; ++c) r(c) = tmp[static_cast<std::size_t>(c)];
  return r;
}

// Row-wise unit normalization with the zero-vector rule.
Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& v, Eigen::VectorXd* norms = nullptr) {
  const Eigen::VectorXd n = v.rowwise().norm();
  const Eigen::VectorXd inv = (n.array() > 0.0).select(n.cwiseInverse(), 0.0);
  Eigen::MatrixXd e = inv.asDiagonal() * v;
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    if (n(r) == 0.0) e(r, 0) = 1.0;
  }
  if (norms) *norms = n;
  return e;
}

Eigen::MatrixXd feature_matrix(const EmbeddingVolume& f, std::span<const std::size_t> idx) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(idx.size()), f.channels);
  for (std::size_t i = 0; i < idx.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = feature_row(f, idx[i]);
  return m;
}

// Builds pool rows incrementally, deduplicating grid voxels.
class PoolBuilder {
 public:
  explicit PoolBuilder(int f_dim) : f_dim_(f_dim) {}
  int add(const Eigen::RowVectorXd& f) {
    rows_.push_back(f);
    return static_cast<int>(rows_.size()) - 1;
  }
  int add_voxel(const EmbeddingVolume& f, std::size_t idx) {
    const auto it = voxel_rows_.find(idx);
    if (it != voxel_rows_.end()) return it->second;
    const int r = add(feature_row(f, idx));
    voxel_rows_.emplace(idx, r);
    return r;
  }
  Eigen::MatrixXd matrix() const {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows_.size()), f_dim_);
    for (std::size_t i = 0; i < rows_.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows_[i];
    return m;
  }

 private:
  int f_dim_;
  std::vector<Eigen::RowVectorXd> rows_;
  std::map<std::size_t, int> voxel_rows_;
};

// Draws k distinct elements (or all of them when k >= size).
std::vector<std::size_t> sample_distinct(std::span<const std::size_t> from, std::size_t k,
                                         std::mt19937_64& rng) {
  std::vector<std::size_t> v(from.begin(), from.end());
  k = std::min(k, v.size());
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, v.size() - 1)(rng);
    std::swap(v[i], v[j]);
  }
  v.resize(k);
  return v;
}

struct AnchorSpec {
  Eigen::RowVectorXd anchor_feature;
  Eigen::RowVectorXd positive_feature;
  Point3 correspondent;  // query-grid working voxel coordinates
};

// Fills a head batch given anchors with known correspondents on a query grid.
// `candidates` are query half-res voxels eligible as negatives.
HeadBatch assemble_head(std::span<const AnchorSpec> anchors, const EmbeddingVolume& query,
                        std::span<const std::size_t> candidates, const WeightMatrix& w,
                        int n_neg, double min_dist, double hard_fraction, double tau,
                        std::mt19937_64& rng) {
  const VolumeGeometry& qg = query.geometry;
  // Cosine similarity through the Gram matrix W W^T, so mining costs F, not D,
  // per pair. Zero projections score 0.
  const Eigen::MatrixXd gram = w * w.transpose();
  const Eigen::MatrixXd cand_f = feature_matrix(query, candidates);
  const Eigen::MatrixXd cand_g = cand_f * gram;
  const Eigen::VectorXd cand_n = cand_g.cwiseProduct(cand_f).rowwise().sum().cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd anchor_f(static_cast<Eigen::Index>(anchors.size()), query.channels);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    anchor_f.row(static_cast<Eigen::Index>(i)) = anchors[i].anchor_feature;
  }
  const Eigen::VectorXd anchor_n = (anchor_f * gram).cwiseProduct(anchor_f).rowwise().sum().cwiseMax(0.0).cwiseSqrt();
  const auto inv = [](const Eigen::VectorXd& n) {
    return Eigen::VectorXd((n.array() > 0.0).select(n.cwiseInverse(), 0.0));
  };
  const Eigen::MatrixXd sim = inv(anchor_n).asDiagonal() * (anchor_f * cand_g.transpose()) * inv(cand_n).asDiagonal();

  std::vector<Point3> cand_pos(candidates.size());
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    const auto v = qg.index_of(candidates[j]);
    cand_pos[j] = Point3(2.0 * v[0], 2.0 * v[1], 2.0 * v[2]);
  }

  PoolBuilder pool(query.channels);
  HeadBatch hb;
  hb.batch.temperature = tau;
  const int n_hard = static_cast<int>(std::lround(hard_fraction * n_neg));
  std::vector<std::size_t> valid;
  std::vector<std::size_t> drawn;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    valid.clear();
    for (std::size_t j = 0; j < candidates.size(); ++j) {
      if ((cand_pos[j] - anchors[i].correspondent).norm() > min_dist) valid.push_back(j);
    }
    if (valid.empty()) {
      throw Error(ErrorCode::InsufficientOverlap, "no negative candidate beyond the minimum distance");
    }
    std::uniform_int_distribution<std::size_t> pick(0, valid.size() - 1);
    drawn.clear();
    for (int c = 0; c < 4 * n_hard; ++c) drawn.push_back(valid[pick(rng)]);
    std::sort(drawn.begin(), drawn.end());
    drawn.erase(std::unique(drawn.begin(), drawn.end()), drawn.end());
    const auto row = static_cast<Eigen::Index>(i);
    std::stable_sort(drawn.begin(), drawn.end(),
                     [&](std::size_t a, std::size_t b) {
                       return sim(row, static_cast<Eigen::Index>(a)) > sim(row, static_cast<Eigen::Index>(b));
                     });
    if (static_cast<int>(drawn.size()) > n_hard) drawn.resize(static_cast<std::size_t>(n_hard));
    while (static_cast<int>(drawn.size()) < n_neg) drawn.push_back(valid[pick(rng)]);

    hb.batch.anchors.push_back(pool.add(anchors[i].anchor_feature));
    hb.batch.positives.push_back(pool.add(anchors[i].positive_feature));
    std::vector<int> neg;
    neg.reserve(drawn.size());
    for (std::size_t j : drawn) neg.push_back(pool.add_voxel(query, candidates[j]));
    hb.batch.negatives.push_back(std::move(neg));
  }
  hb.features = pool.matrix();
  hb.batch.vectors = normalize_rows(hb.features * w);
  return hb;
}

std::optional<LabeledHeadBatch> assemble_semantic(const PatchPair& pair, const FeatureSet& fa,
                                                  const FeatureSet& fb, const WeightMatrix& w,
                                                  int per_class, double tau, std::mt19937_64& rng) {
  if (!pair.labels_a || !pair.labels_b) return std::nullopt;
  // class id -> (patch, half-res voxel) entries
  std::map<std::uint16_t, std::vector<std::size_t>> members;
  const auto collect = [&](const LabelVolume& labels, const EmbeddingVolume& f, std::size_t tag) {
    const auto& g = f.geometry;
    for (std::size_t i = 0; i < g.voxel_count(); ++i) {
      const auto v = g.index_of(i);
      const std::uint16_t l = labels.at(2 * v[0], 2 * v[1], 2 * v[2]);
      if (l != 0) members[l].push_back(i * 2 + tag);
    }
  };
  collect(*pair.labels_a, fa.fine, 0);
  collect(*pair.labels_b, fb.fine, 1);
  if (members.size() < 2) return std::nullopt;

  LabeledHeadBatch out;
  out.batch.temperature = tau;
  out.batch.num_classes = static_cast<int>(members.size());
  std::vector<Eigen::RowVectorXd> rows;
  int cls = 0;
  for (const auto& [id, list] : members) {
    for (std::size_t e : sample_distinct(list, static_cast<std::size_t>(per_class), rng)) {
      const EmbeddingVolume& f = (e % 2 == 0) ? fa.fine : fb.fine;
      rows.push_back(feature_row(f, e / 2));
      out.batch.labels.push_back(cls);
    }
    ++cls;
  }
  out.features.resize(static_cast<Eigen::Index>(rows.size()), fa.fine.channels);
  for (std::size_t i = 0; i < rows.size(); ++i) out.features.row(static_cast<Eigen::Index>(i)) = rows[i];
  out.batch.vectors = normalize_rows(out.features * w);
  return out;
}

// Chain rule through v = W^T f and e = v / |v|.
WeightMatrix backprop(const WeightMatrix& w, const Eigen::MatrixXd& features,
                      const Eigen::MatrixXd& grad_e) {
  Eigen::VectorXd norms;
  const Eigen::MatrixXd e = normalize_rows(features * w, &norms);
  const Eigen::VectorXd proj = e.cwiseProduct(grad_e).rowwise().sum();
  const Eigen::VectorXd inv = (norms.array() > 0.0).select(norms.cwiseInverse(), 0.0);
  const Eigen::MatrixXd grad_v = inv.asDiagonal() * (grad_e - proj.asDiagonal() * e);
  return features.transpose() * grad_v;
}

bool finite(const WeightMatrix& m) { return m.allFinite(); }

double body_threshold(const ScalarVolume& vol) {
  const auto [lo, hi] = std::minmax_element(vol.data.begin(), vol.data.end());
  return *lo + 0.1 * (static_cast<double>(*hi) - *lo);
}

}  // namespace

std::vector<double> DescriptorBank::kernel(Kernel kind, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  const std::size_t n = static_cast<std::size_t>(2 * radius + 1);
  std::vector<double> g(n);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    g[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += g[static_cast<std::size_t>(i + radius)];
  }
  for (double& v : g) v /= sum;
  if (kind == Kernel::smooth) return g;

  std::vector<double> k(n);
  if (kind == Kernel::first_derivative) {
    // exact on linear ramps: sum_i i * k_i = 1
    double m = 0.0;
    for (int i = -radius; i <= radius; ++i) m += i * i * g[static_cast<std::size_t>(i + radius)];
    for (int i = -radius; i <= radius; ++i) {
      k[static_cast<std::size_t>(i + radius)] = i * g[static_cast<std::size_t>(i + radius)] / m;
    }
    return k;
  }
  // exact on quadratics: sum k_i = 0, sum i^2 k_i = 2
  double m2 = 0.0, m4 = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double gi = g[static_cast<std::size_t>(i + radius)];
    m2 += i * i * gi;
    m4 += static_cast<double>(i) * i * i * i * gi;
  }
  const double a = 2.0 / (m4 - m2 * m2);
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = a * (i * i - m2) * g[static_cast<std::size_t>(i + radius)];
  }
  return k;
}

EmbeddingVolume compute_descriptors(const ScalarVolume& vol) {
  const auto& dims = vol.geometry.dims;
  const std::size_t n = vol.voxel_count();
  Field img(vol.data.begin(), vol.data.end());
  const auto [lo, hi] = std::minmax_element(img.begin(), img.end());
  const float vmin = *lo, vmax = *hi;
  for (float& v : img) v = vmax > vmin ? (v - vmin) / (vmax - vmin) : 0.0f;

  const VolumeGeometry half = vol.geometry.half_resolution();
  EmbeddingVolume out(half, DescriptorBank::kFeatureDim, false);
  const auto store = [&](int channel, auto&& value_at) {
    const auto& hd = half.dims;
#pragma omp parallel for schedule(static)
    for (int z = 0; z < hd[2]; ++z) {
      for (int y = 0; y < hd[1]; ++y) {
        for (int x = 0; x < hd[0]; ++x) {
          const std::size_t src = vol.geometry.linear_index(2 * x, 2 * y, 2 * z);
          out.at(x, y, z, channel) = static_cast<float>(value_at(src));
        }
      }
    }
  };
  store(0, [&](std::size_t i) { return img[i]; });

  {
    const ScaleResponses r = scale_responses(img, dims, 1.0);
    store(1, [&](std::size_t i) { return r.smooth[i]; });
    store(11, [&](std::size_t i) {
      return std::sqrt(double(r.gx[i]) * r.gx[i] + double(r.gy[i]) * r.gy[i] + double(r.gz[i]) * r.gz[i]);
    });
    store(13, [&](std::size_t i) { return double(r.gxx[i]) + r.gyy[i] + r.gzz[i]; });
  }
  {
    const double s = 2.0;
    const ScaleResponses r = scale_responses(img, dims, s);
    Field sq(n);
    for (std::size_t i = 0; i < n; ++i) sq[i] = img[i] * img[i];
    const auto g = DescriptorBank::kernel(DescriptorBank::Kernel::smooth, s);
    const Field m2 = convolve(convolve(convolve(sq, dims, 0, g), dims, 1, g), dims, 2, g);
    store(2, [&](std::size_t i) { return r.smooth[i]; });
    store(4, [&](std::size_t i) {
      return std::sqrt(std::max(0.0, double(m2[i]) - double(r.smooth[i]) * r.smooth[i]));
    });
    store(5, [&](std::size_t i) { return s * r.gx[i]; });
    store(6, [&](std::size_t i) { return s * r.gy[i]; });
    store(7, [&](std::size_t i) { return s * r.gz[i]; });
    store(12, [&](std::size_t i) {
      return s * std::sqrt(double(r.gx[i]) * r.gx[i] + double(r.gy[i]) * r.gy[i] + double(r.gz[i]) * r.gz[i]);
    });
    store(14, [&](std::size_t i) { return s * s * (double(r.gxx[i]) + r.gyy[i] + r.gzz[i]); });
  }
  {
    const double s = 4.0;
    const ScaleResponses r = scale_responses(img, dims, s);
    store(3, [&](std::size_t i) { return r.smooth[i]; });
    store(8, [&](std::size_t i) { return s * std::abs(r.gx[i]); });
    store(9, [&](std::size_t i) { return s * std::abs(r.gy[i]); });
    store(10, [&](std::size_t i) { return s * std::abs(r.gz[i]); });
    store(15, [&](std::size_t i) { return s * s * (double(r.gxx[i]) + r.gyy[i] + r.gzz[i]); });
  }
  return out;
}

FeatureSet compute_features(const ScalarVolume& vol) {
  FeatureSet fs;
  fs.fine = compute_descriptors(vol);
  fs.coarse = fs.fine;
  const auto& g = fs.fine.geometry;
  const std::size_t n = g.voxel_count();
  const int f = fs.fine.channels;
  const auto k = DescriptorBank::kernel(DescriptorBank::Kernel::smooth, DescriptorBank::kCoarseSigma);
  Field ch(n);
  for (int c = 0; c < f; ++c) {
    for (std::size_t i = 0; i < n; ++i) ch[i] = fs.fine.data[i * static_cast<std::size_t>(f) + static_cast<std::size_t>(c)];
    const Field s = convolve(convolve(convolve(ch, g.dims, 0, k), g.dims, 1, k), g.dims, 2, k);
    for (std::size_t i = 0; i < n; ++i) fs.coarse.data[i * static_cast<std::size_t>(f) + static_cast<std::size_t>(c)] = s[i];
  }
  return fs;
}

ProjectionModel ProjectionModel::random(int feature_dim, int head_dim, bool semantic,
                                        std::uint64_t seed) {
  if (feature_dim < 4 || head_dim < 1) {
    throw Error(ErrorCode::InvalidArgument, "feature dim must be >= 4 and head dim >= 1");
  }
  ProjectionModel m;
  m.feature_dim = feature_dim;
  m.head_dim = head_dim;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(static_cast<double>(feature_dim)));
  const auto fill = [&](WeightMatrix& w) {
    w.resize(feature_dim, head_dim);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = nd(rng);
  };
  fill(m.w_coarse);
  fill(m.w_fine);
  if (semantic) {
    m.w_semantic.emplace();
    fill(*m.w_semantic);
  }
  return m;
}

void ProjectionModel::validate() const {
  const auto check = [&](const WeightMatrix& w, const char* name) {
    if (w.rows() != feature_dim || w.cols() != head_dim) {
      throw Error(ErrorCode::DimensionMismatch, std::string(name) + " head has the wrong shape");
    }
    if (!w.allFinite()) throw Error(ErrorCode::InvalidArgument, std::string(name) + " head is not finite");
  };
  if (feature_dim < 4) throw Error(ErrorCode::InvalidArgument, "feature dim must be >= 4");
  check(w_coarse, "coarse");
  check(w_fine, "fine");
  if (w_semantic) check(*w_semantic, "semantic");
  if (!(tau_a > 0.0 && tau_s > 0.0 && tau_c > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "temperatures must be > 0");
  }
}

// "UAEM" | u16 version | u8 head mask (1 coarse, 2 fine, 4 semantic) | u8 0
// | u32 F | u32 D coarse, fine, semantic | f32 tau_a, tau_s, tau_c | u32 k
// | u64 config hash | W coarse, fine[, semantic] row-major f64 | u32 CRC32
std::vector<std::uint8_t> encode_model(const ProjectionModel& m) {
  m.validate();
  std::vector<std::uint8_t> out;
  ByteWriter w(out);
  for (char c : {'U', 'A', 'E', 'M'}) w.u8(static_cast<std::uint8_t>(c));
  w.u16(1);
  w.u8(static_cast<std::uint8_t>(3 | (m.w_semantic ? 4 : 0)));
  w.u8(0);
  w.u32(static_cast<std::uint32_t>(m.feature_dim));
  w.u32(static_cast<std::uint32_t>(m.head_dim));
  w.u32(static_cast<std::uint32_t>(m.head_dim));
  w.u32(m.w_semantic ? static_cast<std::uint32_t>(m.head_dim) : 0u);
  w.f32(static_cast<float>(m.tau_a));
  w.f32(static_cast<float>(m.tau_s));
  w.f32(static_cast<float>(m.tau_c));
  w.u32(m.iteration);
  w.u64(m.config_hash);
  const auto put = [&](const WeightMatrix& mat) {
    for (Eigen::Index i = 0; i < mat.size(); ++i) w.f64(mat.data()[i]);
  };
  put(m.w_coarse);
  put(m.w_fine);
  if (m.w_semantic) put(*m.w_semantic);
  w.u32(crc32(out));
  return out;
}

ProjectionModel decode_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "UAEM", 4) != 0) {
    throw Error(ErrorCode::BadMagic, "not a model file");
  }
  ByteReader r(bytes, "model");
  r.skip(4);
  if (r.u16() != 1) throw Error(ErrorCode::UnsupportedVersion, "unknown model format version");
  const std::uint8_t mask = r.u8();
  if (r.u8() != 0 || (mask & 3) != 3 || (mask & ~7) != 0) {
    throw Error(ErrorCode::UnsupportedVersion, "bad head mask");
  }
  ProjectionModel m;
  m.feature_dim = static_cast<int>(r.u32());
  const std::uint32_t dc = r.u32(), df = r.u32(), ds = r.u32();
  const bool semantic = (mask & 4) != 0;
  if (m.feature_dim < 4 || m.feature_dim > 4096 || dc == 0 || dc > 4096 || df != dc ||
      (semantic ? ds != dc : ds != 0)) {
    throw Error(ErrorCode::DimensionMismatch, "inconsistent model dimensions");
  }
  m.head_dim = static_cast<int>(dc);
  m.tau_a = r.f32();
  m.tau_s = r.f32();
  m.tau_c = r.f32();
  m.iteration = r.u32();
  m.config_hash = r.u64();
  const auto get = [&](WeightMatrix& mat) {
    mat.resize(m.feature_dim, m.head_dim);
    for (Eigen::Index i = 0; i < mat.size(); ++i) mat.data()[i] = r.f64();
  };
  get(m.w_coarse);
  get(m.w_fine);
  if (semantic) {
    m.w_semantic.emplace();
    get(*m.w_semantic);
  }
  const std::size_t body = r.pos();
  const std::uint32_t stored = r.u32();
  if (r.pos() != bytes.size()) throw Error(ErrorCode::UnsupportedVersion, "trailing bytes after model");
  if (stored != crc32(bytes.first(body))) throw Error(ErrorCode::ChecksumMismatch, "model CRC mismatch");
  m.validate();
  return m;
}

void save_model(const ProjectionModel& m, const std::filesystem::path& path) {
  write_file_bytes(path, encode_model(m));
}

ProjectionModel load_model(const std::filesystem::path& path) {
  return decode_model(read_file_bytes(path));
}

EmbeddingSet embed_features(const FeatureSet& features, const ProjectionModel& model) {
  if (features.fine.channels != model.feature_dim || features.coarse.channels != model.feature_dim) {
    throw Error(ErrorCode::DimensionMismatch, "feature dimension does not match the model");
  }
  model.validate();
  const auto project = [&](const EmbeddingVolume& f, const WeightMatrix& w, std::size_t& zeros) {
    EmbeddingVolume e(f.geometry, model.head_dim, true);
    zeros = kernels::project_parallel(f.data.data(), f.voxel_count(), model.feature_dim, w.data(),
                                      model.head_dim, e.data.data(), true);
    return e;
  };
  EmbedStats stats;
  EmbeddingSet set;
  set.coarse = project(features.coarse, model.w_coarse, stats.zero_coarse);
  set.fine = project(features.fine, model.w_fine, stats.zero_fine);
  if (model.w_semantic) set.semantic = project(features.fine, *model.w_semantic, stats.zero_semantic);
  g_last_stats = stats;
  return set;
}

EmbeddingSet embed(const ScalarVolume& vol, const ProjectionModel& model) {
  return embed_features(compute_features(vol), model);
}

EmbedStats last_embed_stats() { return g_last_stats; }

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || momentum < 0.0 || momentum >= 1.0) {
    throw Error(ErrorCode::InvalidArgument, "learning rate must be > 0 and momentum in [0,1)");
  }
  if (steps < 0 || head_dim < 1) throw Error(ErrorCode::InvalidArgument, "steps >= 0 and head_dim >= 1 required");
  if (!(tau_a > 0.0 && tau_s > 0.0 && tau_c > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "temperatures must be > 0");
  }
  if (n_pos_fine < 1 || n_pos_coarse < 1 || n_sem_per_class < 1) {
    throw Error(ErrorCode::InvalidArgument, "positive counts must be >= 1");
  }
  if (n_neg_fine < 1 || n_neg_coarse < 1 || n_fov_fine < 0) {
    throw Error(ErrorCode::InvalidArgument, "negative counts must be >= 1");
  }
  if (min_dist_fine < 0.0 || min_dist_coarse < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "negative distances must be >= 0");
  }
  if (hard_fraction < 0.0 || hard_fraction > 1.0) {
    throw Error(ErrorCode::InvalidArgument, "hard_fraction must lie in [0,1]");
  }
  augment.validate();
}

std::uint64_t config_hash(const TrainConfig& c) {
  std::ostringstream s;
  s.precision(17);
  s << c.learning_rate << ' ' << c.momentum << ' ' << c.steps << ' ' << c.head_dim << ' ' << c.tau_a
    << ' ' << c.tau_s << ' ' << c.tau_c << ' ' << c.n_pos_fine << ' ' << c.n_neg_fine << ' '
    << c.n_fov_fine << ' ' << c.n_pos_coarse << ' ' << c.n_neg_coarse << ' ' << c.n_sem_per_class
    << ' ' << c.min_dist_fine << ' ' << c.min_dist_coarse << ' ' << c.hard_fraction << ' ' << c.seed;
  const auto& a = c.augment;
  s << ' ' << a.seed << ' ' << a.bezier_control_points[0] << ' ' << a.bezier_control_points[1] << ' '
    << a.bezier_control_points[2] << ' ' << a.bezier_control_points[3] << ' ' << a.reverse_probability
    << ' ' << a.rotation_deg << ' ' << a.scale_min << ' ' << a.scale_max << ' ' << a.blur_sigma_min
    << ' ' << a.blur_sigma_max << ' ' << a.noise_sigma_min << ' ' << a.noise_sigma_max << ' '
    << a.aggressive << ' ' << a.patch_size[0] << ' ' << a.patch_size[1] << ' ' << a.patch_size[2]
    << ' ' << a.min_overlap << ' ' << a.max_shift_fraction;
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : s.str()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

TrainingBatch sample_training_batch(const PatchPair& pair, const FeatureSet& fa,
                                    const FeatureSet& fb, const ProjectionModel& model,
                                    const TrainConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const VolumeGeometry& ga = fa.fine.geometry;
  std::vector<std::size_t> overlap;
  for (std::size_t i = 0; i < ga.voxel_count(); ++i) {
    const auto v = ga.index_of(i);
    if (pair.overlap.at(2 * v[0], 2 * v[1], 2 * v[2]) != 0) overlap.push_back(i);
  }
  const int need = std::max(cfg.n_pos_fine, cfg.n_pos_coarse);
  if (static_cast<int>(overlap.size()) < need) {
    throw Error(ErrorCode::InsufficientOverlap, "overlap has " + std::to_string(overlap.size()) +
                                                   " voxels, " + std::to_string(need) + " requested");
  }
  std::vector<std::size_t> all_b(fb.fine.geometry.voxel_count());
  std::iota(all_b.begin(), all_b.end(), std::size_t{0});

  const auto head = [&](const EmbeddingVolume& a_f, const EmbeddingVolume& b_f, const WeightMatrix& w,
                        int n_pos, int n_neg, double min_dist, double tau) {
    std::vector<AnchorSpec> anchors;
    for (std::size_t i : sample_distinct(overlap, static_cast<std::size_t>(n_pos), rng)) {
      const auto v = ga.index_of(i);
      const Point3 q = pair.a_to_b.apply(Point3(2.0 * v[0], 2.0 * v[1], 2.0 * v[2]));
      anchors.push_back({feature_row(a_f, i), feature_row_at(b_f, q / 2.0), q});
    }
    return assemble_head(anchors, b_f, all_b, w, n_neg, min_dist, cfg.hard_fraction, tau, rng);
  };
  TrainingBatch tb;
  tb.fine = head(fa.fine, fb.fine, model.w_fine, cfg.n_pos_fine, cfg.n_neg_fine, cfg.min_dist_fine,
                 cfg.tau_a);
  tb.coarse = head(fa.coarse, fb.coarse, model.w_coarse, cfg.n_pos_coarse, cfg.n_neg_coarse,
                   cfg.min_dist_coarse, cfg.tau_c);
  if (model.w_semantic) {
    tb.semantic = assemble_semantic(pair, fa, fb, *model.w_semantic, cfg.n_sem_per_class, cfg.tau_s, rng);
  }
  return tb;
}

namespace {

Point3 moving_to_fixed_voxel(const RegisteredPair& p, const Point3& moving_voxel) {
  return p.fixed.geometry.to_voxel(
      p.moving_to_fixed.apply(p.moving.geometry.to_physical(moving_voxel)));
}

bool in_box(const Box3& b, const Point3& p) {
  for (int a = 0; a < 3; ++a) {
    if (p(a) < b.min[static_cast<std::size_t>(a)] || p(a) > b.max[static_cast<std::size_t>(a)]) return false;
  }
  return true;
}

}  // namespace

PairFeatures prepare_pair_features(const RegisteredPair& pair) {
  PairFeatures pf;
  pf.moving = compute_features(pair.moving);
  pf.fixed = compute_features(pair.fixed);
  const LabelVolume mbody = body_mask(pair.moving, static_cast<float>(body_threshold(pair.moving)));
  const LabelVolume fbody = body_mask(pair.fixed, static_cast<float>(body_threshold(pair.fixed)));

  const VolumeGeometry& mg = pf.moving.fine.geometry;
  for (std::size_t i = 0; i < mg.voxel_count(); ++i) {
    const auto v = mg.index_of(i);
    if (mbody.at(2 * v[0], 2 * v[1], 2 * v[2]) == 0) continue;
    const Point3 q = moving_to_fixed_voxel(pair, Point3(2.0 * v[0], 2.0 * v[1], 2.0 * v[2]));
    if (pair.fixed.geometry.contains(q) && in_box(pair.crop_box, q)) pf.anchor_candidates.push_back(i);
  }
  const RigidTransform fixed_to_moving = pair.moving_to_fixed.inverse();
  const VolumeGeometry& fg = pf.fixed.fine.geometry;
  for (std::size_t j = 0; j < fg.voxel_count(); ++j) {
    const auto v = fg.index_of(j);
    const Point3 w(2.0 * v[0], 2.0 * v[1], 2.0 * v[2]);
    if (in_box(pair.crop_box, w)) pf.negative_candidates.push_back(j);
    if (fbody.at(2 * v[0], 2 * v[1], 2 * v[2]) == 0) continue;
    const Point3 m = pair.moving.geometry.to_voxel(
        fixed_to_moving.apply(pair.fixed.geometry.to_physical(w)));
    if (!pair.moving.geometry.contains(m)) pf.fov_candidates.push_back(j);
  }
  return pf;
}

TrainingBatch sample_paired_batch(const RegisteredPair& pair, const PairFeatures& pf,
                                  const ProjectionModel& model, const TrainConfig& cfg,
                                  std::uint64_t seed) {
  const int need = std::max(cfg.n_pos_fine, cfg.n_pos_coarse);
  if (static_cast<int>(pf.anchor_candidates.size()) < need || pf.negative_candidates.empty()) {
    throw Error(ErrorCode::InsufficientOverlap, "registered pair overlap too small for the batch");
  }
  std::mt19937_64 rng(seed);
  const VolumeGeometry& mg = pf.moving.fine.geometry;
  const auto head = [&](const EmbeddingVolume& m_f, const EmbeddingVolume& f_f, const WeightMatrix& w,
                        int n_pos, int n_neg, double min_dist, double tau) {
    std::vector<AnchorSpec> anchors;
    for (std::size_t i : sample_distinct(pf.anchor_candidates, static_cast<std::size_t>(n_pos), rng)) {
      const auto v = mg.index_of(i);
      const Point3 q = moving_to_fixed_voxel(pair, Point3(2.0 * v[0], 2.0 * v[1], 2.0 * v[2]));
      anchors.push_back({feature_row(m_f, i), feature_row_at(f_f, q / 2.0), q});
    }
    return assemble_head(anchors, f_f, pf.negative_candidates, w, n_neg, min_dist, cfg.hard_fraction,
                         tau, rng);
  };
  TrainingBatch tb;
  tb.cross_modality = true;
  tb.fine = head(pf.moving.fine, pf.fixed.fine, model.w_fine, cfg.n_pos_fine, cfg.n_neg_fine,
                 cfg.min_dist_fine, cfg.tau_a);
  tb.coarse = head(pf.moving.coarse, pf.fixed.coarse, model.w_coarse, cfg.n_pos_coarse,
                   cfg.n_neg_coarse, cfg.min_dist_coarse, cfg.tau_c);

  if (cfg.n_fov_fine > 0 && !pf.fov_candidates.empty()) {
    // FOV rows are appended to the fine pool; vectors are rebuilt below.
    PairBatch& b = tb.fine.batch;
    std::uniform_int_distribution<std::size_t> pick(0, pf.fov_candidates.size() - 1);
    std::map<std::size_t, int> rows;
    std::vector<Eigen::RowVectorXd> extra;
    const int base = static_cast<int>(tb.fine.features.rows());
    b.fov_negatives.resize(b.anchors.size());
    for (auto& list : b.fov_negatives) {
      for (int k = 0; k < cfg.n_fov_fine; ++k) {
        const std::size_t j = pf.fov_candidates[pick(rng)];
        auto it = rows.find(j);
        if (it == rows.end()) {
          it = rows.emplace(j, base + static_cast<int>(extra.size())).first;
          extra.push_back(feature_row(pf.fixed.fine, j));
        }
        list.push_back(it->second);
      }
    }
    Eigen::MatrixXd f(base + static_cast<Eigen::Index>(extra.size()), tb.fine.features.cols());
    f.topRows(base) = tb.fine.features;
    for (std::size_t i = 0; i < extra.size(); ++i) f.row(base + static_cast<Eigen::Index>(i)) = extra[i];
    tb.fine.features = std::move(f);
    b.vectors = normalize_rows(tb.fine.features * model.w_fine);
  }
  return tb;
}

HeadGradient head_loss(const WeightMatrix& w, const HeadBatch& hb, bool cross_modality) {
  PairBatch b = hb.batch;
  b.vectors = normalize_rows(hb.features * w);
  const LossOutput lo = cross_modality ? crossmod_infonce(b) : appearance_infonce(b);
  return {lo.value, backprop(w, hb.features, lo.gradients)};
}

HeadGradient semantic_loss(const WeightMatrix& w, const LabeledHeadBatch& hb) {
  LabeledBatch b = hb.batch;
  b.vectors = normalize_rows(hb.features * w);
  const LossOutput lo = proto_supcon(b);
  return {lo.value, backprop(w, hb.features, lo.gradients)};
}

std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::uae_s: return "uae_s";
    case TrainMode::uae_m_selfsup: return "uae_m_selfsup";
    case TrainMode::uae_m_paired: return "uae_m_paired";
  }
  return "?";
}

TrainResult train(std::span<const TrainingSample> data, const TrainConfig& cfg, TrainMode mode,
                  std::span<const RegisteredPair> pairs, const ProjectionModel* init) {
  cfg.validate();
  if (data.empty()) throw Error(ErrorCode::EmptyDataset, "no training volumes");
  const bool labeled = mode == TrainMode::uae_s &&
                       std::any_of(data.begin(), data.end(), [](const auto& s) { return s.labels.has_value(); });

  TrainResult res;
  res.model = init ? *init
                   : ProjectionModel::random(DescriptorBank::kFeatureDim, cfg.head_dim, labeled, cfg.seed);
  ProjectionModel& m = res.model;
  if (labeled && !m.w_semantic) {
    m.w_semantic = ProjectionModel::random(m.feature_dim, m.head_dim, true, derive_seed(cfg.seed, 7)).w_semantic;
  }
  m.tau_a = cfg.tau_a;
  m.tau_s = cfg.tau_s;
  m.tau_c = cfg.tau_c;
  m.config_hash = config_hash(cfg);

  std::vector<PairFeatures> pair_features;
  if (mode == TrainMode::uae_m_paired) {
    for (const auto& p : pairs) pair_features.push_back(prepare_pair_features(p));
  }

  WeightMatrix v_fine = WeightMatrix::Zero(m.feature_dim, m.head_dim);
  WeightMatrix v_coarse = v_fine;
  WeightMatrix v_sem = v_fine;
  const auto sgd = [&](WeightMatrix& w, WeightMatrix& vel, const WeightMatrix& g) {
    vel = cfg.momentum * vel + g;
    w -= cfg.learning_rate * vel;
  };

  for (int step = 0; step < cfg.steps; ++step) {
    const std::uint64_t s = derive_seed(cfg.seed, static_cast<std::uint64_t>(step));
    std::mt19937_64 rng(s);
    const bool paired = !pair_features.empty() && step % 2 == 1;
    TrainingBatch tb;
    if (paired) {
      const std::size_t k = std::uniform_int_distribution<std::size_t>(0, pairs.size() - 1)(rng);
      tb = sample_paired_batch(pairs[k], pair_features[k], m, cfg, derive_seed(s, 2));
    } else {
      const std::size_t k = std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng);
      const auto& sample = data[k];
      const LabelVolume* labels = (m.w_semantic && sample.labels) ? &*sample.labels : nullptr;
      AugmentSpec aug = cfg.augment;
      const PatchPair pp = sample_patch_pair(sample.volume, labels, aug, derive_seed(s ^ aug.seed, 1));
      const FeatureSet fa = compute_features(pp.patch_a);
      const FeatureSet fb = compute_features(pp.patch_b);
      tb = sample_training_batch(pp, fa, fb, m, cfg, derive_seed(s, 2));
    }

    HeadGradient hf = head_loss(m.w_fine, tb.fine, tb.cross_modality);
    HeadGradient hc = head_loss(m.w_coarse, tb.coarse, tb.cross_modality);
    const double nf = static_cast<double>(tb.fine.batch.anchors.size());
    const double nc = static_cast<double>(tb.coarse.batch.anchors.size());
    LossRecord rec;
    rec.step = step;
    rec.paired = paired;
    rec.fine = hf.loss / nf;
    rec.coarse = hc.loss / nc;
    hf.grad /= nf;
    hc.grad /= nc;
    std::optional<HeadGradient> hs;
    if (tb.semantic && m.w_semantic) {
      hs = semantic_loss(*m.w_semantic, *tb.semantic);
      const double k = tb.semantic->batch.num_classes;
      rec.semantic = hs->loss / k;
      hs->grad /= k;
    }
    if (!std::isfinite(rec.fine) || !std::isfinite(rec.coarse) || !std::isfinite(rec.semantic) ||
        !finite(hf.grad) || !finite(hc.grad) || (hs && !finite(hs->grad))) {
      throw Error(ErrorCode::DivergedLoss, "non-finite loss at step " + std::to_string(step));
    }
    sgd(m.w_fine, v_fine, hf.grad);
    sgd(m.w_coarse, v_coarse, hc.grad);
    if (hs) sgd(*m.w_semantic, v_sem, hs->grad);
    res.log.push_back(rec);
  }
  return res;
}

}  // namespace uae

#include "uae/volume.hpp"

#include "uae/error.hpp"
#include "uae/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace uae {

std::array<int, 3> VolumeGeometry::index_of(std::size_t linear) const {
  const auto nx = static_cast<std::size_t>(dims[0]);
  const auto ny = static_cast<std::size_t>(dims[1]);
  return {static_cast<int>(linear % nx), static_cast<int>((linear / nx) % ny),
          static_cast<int>(linear / (nx * ny))};
}

bool VolumeGeometry::contains(const Point3& voxel) const {
  constexpr double slack = 1e-9;
  for (int a = 0; a < 3; ++a) {
    if (!(voxel(a) >= -slack && voxel(a) <= dims[static_cast<std::size_t>(a)] - 1 + slack)) {
      return false;
    }
  }
  return true;
}

VolumeGeometry VolumeGeometry::half_resolution() const {
  VolumeGeometry g;
  for (std::size_t a = 0; a < 3; ++a) g.dims[a] = (dims[a] + 1) / 2;
  g.spacing = spacing * 2.0;
  g.origin = origin;
  return g;
}

void VolumeGeometry::validate() const {
  for (std::size_t a = 0; a < 3; ++a) {
    if (dims[a] < 1) throw Error(ErrorCode::InvalidArgument, "volume dims must be >= 1");
    if (!(spacing(static_cast<Eigen::Index>(a)) > 0.0)) {
      throw Error(ErrorCode::InvalidArgument, "volume spacing must be > 0");
    }
  }
}

std::size_t Box3::voxel_count() const {
  if (!valid()) return 0;
  const auto e = extent();
  return static_cast<std::size_t>(e[0]) * static_cast<std::size_t>(e[1]) *
         static_cast<std::size_t>(e[2]);
}

ScalarVolume resample(const ScalarVolume& vol, const Eigen::Vector3d& new_spacing) {
  if (!(new_spacing.minCoeff() > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "new spacing must be > 0");
  }
  VolumeGeometry g;
  g.spacing = new_spacing;
  g.origin = vol.geometry.origin;
  std::array<double, 3> step{};
  for (int a = 0; a < 3; ++a) {
    const double extent = vol.geometry.dims[static_cast<std::size_t>(a)] * vol.geometry.spacing(a);
    g.dims[static_cast<std::size_t>(a)] = std::max(1, static_cast<int>(std::lround(extent / new_spacing(a))));
    step[static_cast<std::size_t>(a)] = new_spacing(a) / vol.geometry.spacing(a);
  }
  ScalarVolume out(g);
  kernels::resample_parallel(vol.data.data(), vol.geometry.dims, out.data.data(), g.dims, step);
  return out;
}

float sample_clamped(const ScalarVolume& vol, const Point3& voxel) {
  const auto& d = vol.geometry.dims;
  double p[3];
  int b[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    p[a] = std::clamp(voxel(a), 0.0, static_cast<double>(d[static_cast<std::size_t>(a)] - 1));
    b[a] = std::min(static_cast<int>(std::floor(p[a])), d[static_cast<std::size_t>(a)] - 1);
    f[a] = p[a] - b[a];
  }
  double s = 0.0;
  for (int c = 0; c < 8; ++c) {
    const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
    const double w = (dx ? f[0] : 1.0 - f[0]) * (dy ? f[1] : 1.0 - f[1]) * (dz ? f[2] : 1.0 - f[2]);
    if (w == 0.0) continue;
    const int x = std::min(b[0] + dx, d[0] - 1);
    const int y = std::min(b[1] + dy, d[1] - 1);
    const int z = std::min(b[2] + dz, d[2] - 1);
    s += w * vol.at(x, y, z);
  }
  return static_cast<float>(s);
}

void trilinear_blend_clamped(const EmbeddingVolume& emb, const Point3& voxel, std::span<float> out) {
  const auto& d = emb.geometry.dims;
  double p[3];
  int b[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    p[a] = std::clamp(voxel(a), 0.0, static_cast<double>(d[static_cast<std::size_t>(a)] - 1));
    b[a] = std::min(static_cast<int>(std::floor(p[a])), d[static_cast<std::size_t>(a)] - 1);
    f[a] = p[a] - b[a];
  }
  const auto channels = static_cast<std::size_t>(emb.channels);
  std::vector<double> acc(channels, 0.0);
  for (int c = 0; c < 8; ++c) {
    const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
    const double w = (dx ? f[0] : 1.0 - f[0]) * (dy ? f[1] : 1.0 - f[1]) * (dz ? f[2] : 1.0 - f[2]);
    if (w == 0.0) continue;
    const int x = std::min(b[0] + dx, d[0] - 1);
    const int y = std::min(b[1] + dy, d[1] - 1);
    const int z = std::min(b[2] + dz, d[2] - 1);
    const auto v = emb.voxel(emb.geometry.linear_index(x, y, z));
    for (std::size_t k = 0; k < channels; ++k) acc[k] += w * v[k];
  }
  for (std::size_t k = 0; k < channels; ++k) out[k] = static_cast<float>(acc[k]);
}

std::vector<float> trilinear_sample(const EmbeddingVolume& emb, const Point3& voxel) {
  if (!emb.geometry.contains(voxel)) {
    throw Error(ErrorCode::OutOfBounds, "trilinear sample outside embedding grid");
  }
  const auto channels = static_cast<std::size_t>(emb.channels);
  const Point3 r = voxel.array().round().matrix();
  if ((voxel - r).cwiseAbs().maxCoeff() == 0.0) {
    const auto v = emb.voxel(emb.geometry.linear_index(static_cast<int>(r(0)), static_cast<int>(r(1)),
                                                       static_cast<int>(r(2))));
    return {v.begin(), v.end()};
  }
  std::vector<float> out(channels);
  trilinear_blend_clamped(emb, voxel, out);
  if (emb.normalized) {
    double sq = 0.0;
    for (float v : out) sq += static_cast<double>(v) * v;
    if (sq > 0.0) {
      const double inv = 1.0 / std::sqrt(sq);
      for (auto& v : out) v = static_cast<float>(v * inv);
    } else {
      std::fill(out.begin(), out.end(), 0.0f);
      out[0] = 1.0f;
    }
  }
  return out;
}

NormalizeResult l2_normalize(EmbeddingVolume emb) {
  NormalizeResult r;
  const auto n = emb.voxel_count();
  const auto d = static_cast<std::size_t>(emb.channels);
  for (std::size_t i = 0; i < n; ++i) {
    float* v = emb.data.data() + i * d;
    double sq = 0.0;
    for (std::size_t k = 0; k < d; ++k) sq += static_cast<double>(v[k]) * v[k];
    if (sq > 0.0) {
      const double norm = std::sqrt(sq);
      for (std::size_t k = 0; k < d; ++k) v[k] = static_cast<float>(v[k] / norm);
    } else {
      std::fill(v, v + d, 0.0f);
      v[0] = 1.0f;
      ++r.zero_vectors;
    }
  }
  emb.normalized = true;
  r.volume = std::move(emb);
  return r;
}

EmbeddingVolume concat_embeddings(const EmbeddingVolume& a, const EmbeddingVolume& b) {
  if (!(a.geometry == b.geometry)) {
    throw Error(ErrorCode::GeometryMismatch, "embedding volumes differ in geometry");
  }
  EmbeddingVolume out(a.geometry, a.channels + b.channels, false);
  const auto n = a.voxel_count();
  const auto da = static_cast<std::size_t>(a.channels);
  const auto db = static_cast<std::size_t>(b.channels);
  for (std::size_t i = 0; i < n; ++i) {
    auto dst = out.voxel(i);
    std::copy_n(a.data.begin() + static_cast<std::ptrdiff_t>(i * da), da, dst.begin());
    std::copy_n(b.data.begin() + static_cast<std::ptrdiff_t>(i * db), db,
                dst.begin() + static_cast<std::ptrdiff_t>(da));
  }
  return out;
}

LabelVolume body_mask(const ScalarVolume& vol, float threshold) {
  const auto& g = vol.geometry;
  const std::size_t n = g.voxel_count();
  std::vector<int> component(n, -1);
  std::vector<std::size_t> sizes;
  const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];

  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < n; ++start) {
    if (component[start] >= 0 || !(vol.data[start] > threshold)) continue;
    const int id = static_cast<int>(sizes.size());
    std::size_t count = 0;
    stack.push_back(start);
    component[start] = id;
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      ++count;
      const auto [x, y, z] = g.index_of(cur);
      const int nb[6][3] = {{x - 1, y, z}, {x + 1, y, z}, {x, y - 1, z},
                            {x, y + 1, z}, {x, y, z - 1}, {x, y, z + 1}};
      for (const auto& q : nb) {
        if (!g.contains_index(q[0], q[1], q[2])) continue;
        const std::size_t li = g.linear_index(q[0], q[1], q[2]);
        if (component[li] < 0 && vol.data[li] > threshold) {
          component[li] = id;
          stack.push_back(li);
        }
      }
    }
    sizes.push_back(count);
  }
  if (sizes.empty()) throw Error(ErrorCode::EmptyMask, "no voxel exceeds the threshold");
  const int keep = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());

  LabelVolume mask(g);
  for (std::size_t i = 0; i < n; ++i) mask.data[i] = component[i] == keep ? 1 : 0;

  // Per-slice hole fill: background not 4-connected to the slice border.
  std::vector<char> outside(static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny));
  std::queue<std::pair<int, int>> q;
  for (int z = 0; z < nz; ++z) {
    std::fill(outside.begin(), outside.end(), 0);
    auto seed = [&](int x, int y) {
      const std::size_t p = static_cast<std::size_t>(y) * nx + x;
      if (!outside[p] && mask.at(x, y, z) == 0) {
        outside[p] = 1;
        q.emplace(x, y);
      }
    };
    for (int x = 0; x < nx; ++x) {
      seed(x, 0);
      seed(x, ny - 1);
    }
    for (int y = 0; y < ny; ++y) {
      seed(0, y);
      seed(nx - 1, y);
    }
    while (!q.empty()) {
      const auto [x, y] = q.front();
      q.pop();
      if (x > 0) seed(x - 1, y);
      if (x + 1 < nx) seed(x + 1, y);
      if (y > 0) seed(x, y - 1);
      if (y + 1 < ny) seed(x, y + 1);
    }
    for (int y = 0; y < ny; ++y) {
      for (int x = 0; x < nx; ++x) {
        if (!outside[static_cast<std::size_t>(y) * nx + x]) mask.at(x, y, z) = 1;
      }
    }
  }
  return mask;
}

Box3 mask_bbox(const LabelVolume& mask) {
  Box3 box{{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(),
            std::numeric_limits<int>::max()},
           {-1, -1, -1}};
  bool any = false;
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    if (mask.data[i] == 0) continue;
    any = true;
    const auto p = mask.geometry.index_of(i);
    for (std::size_t a = 0; a < 3; ++a) {
      box.min[a] = std::min(box.min[a], p[a]);
      box.max[a] = std::max(box.max[a], p[a]);
    }
  }
  if (!any) throw Error(ErrorCode::EmptyBox, "mask has no foreground voxel");
  return box;
}

Box3 dilate_box(const Box3& box, int margin, const std::array<int, 3>& dims) {
  if (!box.valid()) throw Error(ErrorCode::EmptyBox, "box min exceeds max");
  Box3 out;
  for (std::size_t a = 0; a < 3; ++a) {
    out.min[a] = std::clamp(box.min[a] - margin, 0, dims[a] - 1);
    out.max[a] = std::clamp(box.max[a] + margin, 0, dims[a] - 1);
  }
  if (!out.valid()) throw Error(ErrorCode::EmptyBox, "dilated box is empty");
  return out;
}

Box3 bounding_box(std::span<const Point3> voxels, const std::array<int, 3>& dims) {
  if (voxels.empty()) throw Error(ErrorCode::EmptyBox, "no points to bound");
  Box3 box;
  for (std::size_t a = 0; a < 3; ++a) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& p : voxels) {
      lo = std::min(lo, p(static_cast<Eigen::Index>(a)));
      hi = std::max(hi, p(static_cast<Eigen::Index>(a)));
    }
    const int lo_i = static_cast<int>(std::floor(lo));
    const int hi_i = static_cast<int>(std::ceil(hi));
    if (hi_i < 0 || lo_i > dims[a] - 1) throw Error(ErrorCode::EmptyBox, "points lie outside the grid");
    box.min[a] = std::clamp(lo_i, 0, dims[a] - 1);
    box.max[a] = std::clamp(hi_i, 0, dims[a] - 1);
  }
  return box;
}

template <typename Vol>
Vol crop(const Vol& vol, const Box3& box) {
  if (!box.valid()) throw Error(ErrorCode::EmptyBox, "crop box is empty");
  const auto& g = vol.geometry;
  for (std::size_t a = 0; a < 3; ++a) {
    if (box.min[a] < 0 || box.max[a] >= g.dims[a]) {
      throw Error(ErrorCode::OutOfBounds, "crop box exceeds volume bounds");
    }
  }
  Vol out = vol;
  out.geometry.dims = box.extent();
  out.geometry.origin =
      g.origin + Eigen::Vector3d(box.min[0], box.min[1], box.min[2]).cwiseProduct(g.spacing);
  out.data.assign(out.geometry.voxel_count() * static_cast<std::size_t>(vol.channels), {});
  const auto c = static_cast<std::size_t>(vol.channels);
  const auto row = static_cast<std::size_t>(out.geometry.dims[0]) * c;
  for (int z = 0; z < out.geometry.dims[2]; ++z) {
    for (int y = 0; y < out.geometry.dims[1]; ++y) {
      const auto src = g.linear_index(box.min[0], box.min[1] + y, box.min[2] + z) * c;
      const auto dst = out.geometry.linear_index(0, y, z) * c;
      std::copy_n(vol.data.begin() + static_cast<std::ptrdiff_t>(src), row,
                  out.data.begin() + static_cast<std::ptrdiff_t>(dst));
    }
  }
  return out;
}

template ScalarVolume crop(const ScalarVolume&, const Box3&);
template LabelVolume crop(const LabelVolume&, const Box3&);
template EmbeddingVolume crop(const EmbeddingVolume&, const Box3&);

}  // namespace uae

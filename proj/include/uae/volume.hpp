#pragma once

#include "uae/geometry.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace uae {

/// Grid geometry. Voxel (0,0,0) is centered at `origin`; axes are aligned
/// with the physical axes.
struct VolumeGeometry {
  std::array<int, 3> dims{1, 1, 1};
  Eigen::Vector3d spacing{1.0, 1.0, 1.0};
  Eigen::Vector3d origin{0.0, 0.0, 0.0};

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }
  std::size_t linear_index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * static_cast<std::size_t>(dims[1]) +
            static_cast<std::size_t>(y)) *
               static_cast<std::size_t>(dims[0]) +
           static_cast<std::size_t>(x);
  }
  std::array<int, 3> index_of(std::size_t linear) const;
  bool contains_index(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims[0] && y < dims[1] && z < dims[2];
  }
  /// Continuous voxel coordinate inside [0, dims-1] per axis (1e-9 slack).
  bool contains(const Point3& voxel) const;

  Point3 to_physical(const Point3& voxel) const { return origin + voxel.cwiseProduct(spacing); }
  Point3 to_voxel(const Point3& physical) const {
    return (physical - origin).cwiseQuotient(spacing);
  }
  /// Geometry of the stride-2 subsampled grid (voxel i <- source voxel 2i).
  VolumeGeometry half_resolution() const;

  void validate() const;

  bool operator==(const VolumeGeometry&) const = default;
};

template <typename T>
struct VoxelGrid {
  VolumeGeometry geometry;
  int channels = 1;
  std::vector<T> data;

  VoxelGrid() = default;
  VoxelGrid(const VolumeGeometry& g, int c, T fill = T{})
      : geometry(g), channels(c), data(g.voxel_count() * static_cast<std::size_t>(c), fill) {}

  std::size_t voxel_count() const { return geometry.voxel_count(); }
  T& at(int x, int y, int z, int c = 0) {
    return data[geometry.linear_index(x, y, z) * static_cast<std::size_t>(channels) +
                static_cast<std::size_t>(c)];
  }
  const T& at(int x, int y, int z, int c = 0) const {
    return data[geometry.linear_index(x, y, z) * static_cast<std::size_t>(channels) +
                static_cast<std::size_t>(c)];
  }
  std::span<T> voxel(std::size_t linear) {
    return {data.data() + linear * static_cast<std::size_t>(channels),
            static_cast<std::size_t>(channels)};
  }
  std::span<const T> voxel(std::size_t linear) const {
    return {data.data() + linear * static_cast<std::size_t>(channels),
            static_cast<std::size_t>(channels)};
  }
};

struct ScalarVolume : VoxelGrid<float> {
  ScalarVolume() = default;
  explicit ScalarVolume(const VolumeGeometry& g, float fill = 0.0f) : VoxelGrid(g, 1, fill) {}
};

struct LabelVolume : VoxelGrid<std::uint16_t> {
  LabelVolume() = default;
  explicit LabelVolume(const VolumeGeometry& g, std::uint16_t fill = 0) : VoxelGrid(g, 1, fill) {}
};

/// D unit (or raw) vectors per voxel, stored (z, y, x, channel) with the
/// channel index fastest.
struct EmbeddingVolume : VoxelGrid<float> {
  bool normalized = false;

  EmbeddingVolume() = default;
  EmbeddingVolume(const VolumeGeometry& g, int d, bool is_normalized = false)
      : VoxelGrid(g, d, 0.0f), normalized(is_normalized) {}
};

/// Inclusive voxel index box.
struct Box3 {
  std::array<int, 3> min{0, 0, 0};
  std::array<int, 3> max{0, 0, 0};

  bool valid() const { return min[0] <= max[0] && min[1] <= max[1] && min[2] <= max[2]; }
  std::array<int, 3> extent() const {
    return {max[0] - min[0] + 1, max[1] - min[1] + 1, max[2] - min[2] + 1};
  }
  std::size_t voxel_count() const;
  bool operator==(const Box3&) const = default;
};

/// Trilinear resampling onto an isotropic-or-not grid with `new_spacing`,
/// same origin; dims = round(dims * spacing / new_spacing), at least 1.
ScalarVolume resample(const ScalarVolume& vol, const Eigen::Vector3d& new_spacing);
inline ScalarVolume resample(const ScalarVolume& vol, double iso_spacing) {
  return resample(vol, Eigen::Vector3d::Constant(iso_spacing));
}

/// Scalar trilinear sample with clamp-to-edge outside the grid.
float sample_clamped(const ScalarVolume& vol, const Point3& voxel);

/// D-vector at a continuous voxel coordinate; re-normalized when the volume is.
/// Throws OutOfBounds outside [0, dims-1].
std::vector<float> trilinear_sample(const EmbeddingVolume& emb, const Point3& voxel);

/// Raw (never re-normalized) trilinear blend written into `out`, clamping
/// coordinates to the grid.
void trilinear_blend_clamped(const EmbeddingVolume& emb, const Point3& voxel,
                             std::span<float> out);

struct NormalizeResult {
  EmbeddingVolume volume;
  std::size_t zero_vectors = 0;
};

/// Unit-normalizes every voxel vector; zero vectors become e1 and are counted.
NormalizeResult l2_normalize(EmbeddingVolume emb);

EmbeddingVolume concat_embeddings(const EmbeddingVolume& a, const EmbeddingVolume& b);

/// Voxels above `threshold`, largest 6-connected component, then per-z-slice
/// hole filling. Throws EmptyMask if nothing exceeds the threshold.
LabelVolume body_mask(const ScalarVolume& vol, float threshold);

Box3 mask_bbox(const LabelVolume& mask);
Box3 dilate_box(const Box3& box, int margin, const std::array<int, 3>& dims);
/// Smallest box containing the given continuous voxel points, clamped to dims.
Box3 bounding_box(std::span<const Point3> voxels, const std::array<int, 3>& dims);

template <typename Vol>
Vol crop(const Vol& vol, const Box3& box);

}  // namespace uae

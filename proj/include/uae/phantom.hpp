#pragma once

#include "uae/geometry.hpp"
#include "uae/volume.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace uae {

struct PhantomSpec {
  std::array<int, 3> dims{96, 96, 96};
  double spacing = 1.0;  // mm, isotropic
  int num_organs = 6;
  double organ_axis_min = 6.0;  // mm, ellipsoid semi-axes
  double organ_axis_max = 12.0;
  double organ_gap = 3.0;         // mm between bounding spheres
  double organ_intensity_min = 0.4;  // organ i gets a band inside [min, max]
  double organ_intensity_max = 0.95;
  double body_intensity = 0.25;
  double texture_amplitude = 0.06;
  double texture_scale = 3.0;  // mm, blob sigma
  int texture_blobs = 400;

  void validate() const;
  VolumeGeometry geometry() const;
};

struct Landmark {
  int id = 0;
  Point3 position = Point3::Zero();  // mm
  double radius = 0.0;               // mm, smallest semi-axis of its organ
};

struct Ellipsoid {
  Point3 center = Point3::Zero();
  Eigen::Matrix3d axes = Eigen::Matrix3d::Identity();  // columns are unit principal axes
  Eigen::Vector3d semi_axes = Eigen::Vector3d::Ones();
  bool contains(const Point3& p) const;
  double volume() const;
};

/// Analytic phantom: body ellipsoid, organ ellipsoids and Gaussian-blob
/// texture, evaluated at any physical point.
class PhantomField {
 public:
  PhantomField(const PhantomSpec& spec, std::uint64_t seed);

  double intensity(const Point3& mm) const;
  std::uint16_t label(const Point3& mm) const;
  const std::vector<Ellipsoid>& organs() const { return organs_; }
  const Ellipsoid& body() const { return body_; }
  std::vector<Landmark> landmarks() const;
  const PhantomSpec& spec() const { return spec_; }

 private:
  struct Blob {
    Point3 center;
    double amplitude;
  };
  PhantomSpec spec_;
  Ellipsoid body_;
  std::vector<Ellipsoid> organs_;
  std::vector<double> organ_intensity_;
  std::vector<Blob> blobs_;
  // uniform bucket grid over the blobs, cell size 3 sigma
  Point3 grid_origin_;
  double cell_ = 1.0;
  std::array<int, 3> grid_dims_{1, 1, 1};
  std::vector<std::vector<int>> cells_;
};

struct Phantom {
  ScalarVolume volume;
  LabelVolume labels;
  std::vector<Landmark> landmarks;
};

/// Rasterizes the field; throws PlacementFailure when the organs cannot be
/// placed without overlap.
Phantom gen_phantom(const PhantomSpec& spec, std::uint64_t seed);

enum class ModalityRemap { identity, inverted, mri };
std::string_view to_string(ModalityRemap r);
ModalityRemap parse_remap(std::string_view s);
/// Fixed intensity lookup; every remap keeps 0 (air) at 0.
double remap_intensity(ModalityRemap r, double v);

enum class CorruptionKind { contrast_inversion, occlusion };
struct Corruption {
  Point3 center = Point3::Zero();  // mm, in B
  double radius = 5.0;             // mm
  CorruptionKind kind = CorruptionKind::contrast_inversion;
  double value = 0.5;  // occlusion intensity
};

struct PhantomPair {
  Phantom a;
  Phantom b;
  AffineTransform transform;  // A -> B, physical mm
  ModalityRemap remap = ModalityRemap::identity;
  std::optional<Box3> fov;  // crop of B, voxel box on the uncropped B grid
  std::vector<Corruption> corruptions;

  Point3 correspond(const Point3& a_mm) const { return transform.apply(a_mm); }
};

PhantomPair gen_pair(const PhantomSpec& spec, const AffineTransform& transform, ModalityRemap remap,
                     const std::optional<Box3>& fov, const std::vector<Corruption>& corruptions,
                     std::uint64_t seed);

/// Landmark text file: one `id x y z` line per landmark, mm. An optional
/// fifth column carries the radius.
void write_landmarks(const std::vector<Landmark>& lms, const std::filesystem::path& path,
                     bool with_radius = false);
std::vector<Landmark> read_landmarks(const std::filesystem::path& path);

std::uint64_t spec_hash(const PhantomSpec& spec);

}  // namespace uae

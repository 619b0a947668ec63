#pragma once

#include "uae/geometry.hpp"
#include "uae/volume.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <utility>

namespace uae {

/// Augmentation parameters. Ranges are sampled uniformly per patch.
struct AugmentSpec {
  std::uint64_t seed = 0;
  /// Interior Bezier control points (x1, y1, x2, y2); the default is the
  /// identity curve. Aggressive mode draws fresh controls for every patch.
  std::array<double, 4> bezier_control_points{1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0};
  double reverse_probability = 0.5;  // aggressive mode only
  double rotation_deg = 10.0;        // max |angle| per axis
  double scale_min = 0.8;
  double scale_max = 1.2;
  double blur_sigma_min = 0.0;  // voxels
  double blur_sigma_max = 0.75;
  double noise_sigma_min = 0.0;  // in units of the intensity range
  double noise_sigma_max = 0.02;
  bool aggressive = false;
  std::array<int, 3> patch_size{32, 32, 24};
  double min_overlap = 0.25;
  /// Crop window b is offset from window a by up to this fraction of the
  /// patch size per axis; 0 gives identical windows.
  double max_shift_fraction = 0.5;

  /// No geometric or intensity perturbation at all.
  static AugmentSpec none();
  void validate() const;
};

/// Cubic Bezier curve through (0,0), (x1,y1), (x2,y2), (1,1) evaluated as
/// y(x). Control x coordinates in [0,1] keep x(s) monotone.
double bezier_map(const std::array<double, 4>& control, double x);

/// Min-max rescales to [0,1], maps through the curve and scales back. A
/// constant volume is returned unchanged.
ScalarVolume bezier_intensity(const ScalarVolume& vol, const std::array<double, 4>& control);

/// v -> (max + min) - v.
ScalarVolume intensity_reverse(const ScalarVolume& vol);

/// Draws four control values in [0,1] (unsorted, so the curve may be non-monotone).
std::array<double, 4> random_bezier_controls(std::mt19937_64& rng);

/// out(y) = in(T^-1 y) in voxel coordinates, trilinear, clamp-to-edge.
ScalarVolume warp_affine(const ScalarVolume& vol, const AffineTransform& voxel_transform,
                         const VolumeGeometry& out_geometry);
LabelVolume warp_affine_nearest(const LabelVolume& vol, const AffineTransform& voxel_transform,
                                const VolumeGeometry& out_geometry);

ScalarVolume gaussian_blur(const ScalarVolume& vol, double sigma_voxels);

/// Random rotation/scale about the volume center, then blur and additive
/// noise. Returns the output and the voxel transform input -> output.
std::pair<ScalarVolume, AffineTransform> geometric_augment(const ScalarVolume& vol,
                                                           const AugmentSpec& spec,
                                                           std::uint64_t seed);

/// Two overlapping, independently augmented crops with exact correspondence.
struct PatchPair {
  ScalarVolume patch_a;
  ScalarVolume patch_b;
  AffineTransform a_to_b;       // patch-a voxel -> patch-b voxel
  AffineTransform source_to_a;  // source voxel -> patch-a voxel
  AffineTransform source_to_b;
  LabelVolume overlap;  // on patch a: 1 where the correspondent lies inside b
  std::optional<LabelVolume> labels_a;
  std::optional<LabelVolume> labels_b;

  double overlap_fraction() const;
};

PatchPair sample_patch_pair(const ScalarVolume& vol, const LabelVolume* labels,
                            const AugmentSpec& spec, std::uint64_t seed);

/// seed mixed with an item index, for independent per-item streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace uae

#pragma once

#include "uae/geometry.hpp"
#include "uae/volume.hpp"

#include <cstddef>

namespace uae {

struct PairProvenance {
  int iteration = 0;
  int margin = 0;
  std::size_t matches = 0;  // grid points matched before filtering
  std::size_t inliers = 0;
  double mean_residual_mm = 0.0;
};

/// A moving (small field of view) scan aligned to a fixed (large field of
/// view) scan. `fixed` is kept whole so that training can draw negatives
/// outside the moving footprint; `crop_box` selects the dilated crop.
struct RegisteredPair {
  ScalarVolume fixed;
  ScalarVolume fixed_crop;
  Box3 crop_box;
  ScalarVolume moving;
  RigidTransform moving_to_fixed;  // physical mm
  LabelVolume overlap;             // on the fixed crop grid
  PairProvenance provenance;
};

}  // namespace uae

#pragma once

#include "uae/matching.hpp"
#include "uae/model.hpp"
#include "uae/registered_pair.hpp"

#include <string>
#include <vector>

namespace uae {

enum class MatcherKind { nn, fixpoint };
std::string_view to_string(MatcherKind m);
MatcherKind parse_matcher(std::string_view s);

struct AdaRegConfig {
  int grid_spacing = 8;  // half-res voxels
  double similarity_floor = 0.5;
  double trim_fraction = 0.2;
  std::vector<int> margins{10, 5, 1};  // working voxels, one per retraining round
  MatcherKind matcher = MatcherKind::nn;
  FixpointConfig fixpoint;
  double body_threshold = 0.1;  // fraction of the intensity range

  void validate() const;
};

/// Aligns the moving (small FOV) scan to the fixed (large FOV) scan and crops
/// the fixed scan around the moving body, dilated by `margin` voxels.
RegisteredPair adareg_once(const ScalarVolume& fixed, const EmbeddingSet& fixed_emb,
                           const ScalarVolume& moving, const EmbeddingSet& moving_emb,
                           const AdaRegConfig& cfg, int margin, int iteration = 0);

/// Displacement field (3 channels, mm) on the fixed crop grid.
using DisplacementField = EmbeddingVolume;

class DeformableBackend {
 public:
  virtual ~DeformableBackend() = default;
  virtual DisplacementField refine(const RegisteredPair& pair) const = 0;
};

class IdentityBackend : public DeformableBackend {
 public:
  DisplacementField refine(const RegisteredPair& pair) const override;
};

/// Runs the backend and checks its contract (crop grid, finite values).
DisplacementField register_deformable(const RegisteredPair& pair, const DeformableBackend& backend);

/// Maps a moving-space point (mm) into fixed space: rigid, then the field
/// sampled at the rigid image (zero outside the crop).
Point3 map_moving_point(const RegisteredPair& pair, const DisplacementField* field, const Point3& moving_mm);

struct CrossModalityCase {
  std::string id;
  ScalarVolume fixed;   // large FOV
  ScalarVolume moving;  // small FOV, other modality
  std::vector<Point3> fixed_landmarks;   // mm, optional ground truth
  std::vector<Point3> moving_landmarks;  // same anatomy as fixed_landmarks
};

struct IterationMetrics {
  int k = 0;
  std::string pair_id;
  bool ok = false;
  std::size_t inliers = 0;
  double residual_mm = 0.0;
  double med_mm = 0.0;  // NaN without landmarks
};

struct UaemResult {
  std::vector<ProjectionModel> models;  // k = 0..K
  std::vector<IterationMetrics> table;
  std::vector<double> mean_med;  // per k, after AdaReg with model k
  double initial_med = 0.0;      // landmarks before any alignment
};

/// Landmark MED of a case under a moving->fixed mapping (identity when
/// `pair` is null).
double case_med(const CrossModalityCase& c, const RegisteredPair* pair, const DisplacementField* field);

/// UAE-M_0 is trained self-supervised on every volume with the given config;
/// round k >= 1 registers all cases with M_{k-1} at margins[k-1] and retrains
/// from M_{k-1} on alternating self-supervised and registered-pair batches.
/// Each model is evaluated by one more AdaReg pass. A failed registration is
/// logged and scored with the unaligned landmarks.
UaemResult uaem_iterate(const std::vector<CrossModalityCase>& cases, const TrainConfig& base,
                        const AdaRegConfig& cfg, const DeformableBackend* backend = nullptr,
                        bool verbose = false);

/// Line-oriented table: k pair inliers residual_mm med_mm.
std::string format_iteration_table(const std::vector<IterationMetrics>& rows);

}  // namespace uae

#pragma once

#include "uae/geometry.hpp"
#include "uae/volume.hpp"

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace uae {

/// Per-head voxel embeddings of one image, all on the same (half-resolution)
/// grid and unit-normalized.
///
/// Points handed to the matching functions are in image voxel units: the
/// embedding grid index of an image point p is p / 2.
struct EmbeddingSet {
  EmbeddingVolume coarse;
  EmbeddingVolume fine;
  std::optional<EmbeddingVolume> semantic;

  const VolumeGeometry& geometry() const { return fine.geometry; }
  /// Image-voxel bounds: [0, 2 * (dims - 1)] per axis.
  Point3 image_extent() const;
  bool contains_image_point(const Point3& p) const;
  void validate() const;
};

struct SimilarityWeights {
  double coarse = 0.5;
  double fine = 0.5;
  double semantic = 0.0;

  /// (0.5, 0.5, 0) without a semantic head, (0.4, 0.4, 0.2) with one.
  static SimilarityWeights defaults_for(const EmbeddingSet& set);
  void validate(bool has_semantic) const;
};

struct FixpointConfig {
  int L = 5;             // seed cube side, embedding-grid voxels, odd
  double tau_dis = 5.0;  // fixed-point distance cutoff, embedding-grid voxels
  int max_iter = 20;
  int min_points = 4;

  void validate() const;
};

enum class MatchMethod { nn, fixpoint, fixpoint_fallback_nn };
std::string_view to_string(MatchMethod m);

struct MatchResult {
  Point3 point = Point3::Zero();  // query image voxel coordinates
  double similarity = 0.0;
  MatchMethod method = MatchMethod::nn;
  int n_fix = 0;  // iterations until the template seed converged, -1 if it did not
  int n_fixed_points_used = 0;
  bool ok = true;
  std::string error;
};

enum class FixpointStatus { converged, cycled, exhausted };
std::string_view to_string(FixpointStatus s);

/// Fixed-point iteration over grid indices. `step` is the forward-backward map
/// and `score` the forward similarity s(t -> q(t)) used to resolve cycles.
struct IndexIteration {
  FixpointStatus status = FixpointStatus::exhausted;
  std::size_t fixed_point = 0;
  std::vector<std::size_t> trace;
  int n_fix = -1;
};
IndexIteration iterate_indices(std::size_t start, const std::function<std::size_t(std::size_t)>& step,
                               const std::function<double(std::size_t)>& score, int max_iter);

struct FixpointTrace {
  FixpointStatus status = FixpointStatus::exhausted;
  Point3 fixed_point = Point3::Zero();
  std::vector<Point3> trace;
  int n_fix = -1;
};

/// Matching between a template image A and a query image B. Nearest-neighbour
/// lookups of grid voxels are memoized, so one matcher should be reused for
/// many points on the same pair. Not thread-safe.
class PairMatcher {
 public:
  PairMatcher(const EmbeddingSet& a, const EmbeddingSet& b, SimilarityWeights w);

  const EmbeddingSet& template_set() const { return a_; }
  const EmbeddingSet& query_set() const { return b_; }
  const SimilarityWeights& weights() const { return w_; }

  /// Weighted similarity of the template at image point t against every
  /// query voxel (query embedding grid).
  ScalarVolume similarity_map(const Point3& t) const;

  MatchResult nn_match(const Point3& t);
  /// t -> q (into B) -> t' (back into A); returns t'.
  Point3 forward_backward(const Point3& t);
  FixpointTrace fixed_point_iterate(const Point3& t0, int max_iter);
  MatchResult fixpoint_match(const Point3& t, const FixpointConfig& cfg);

  /// NN of A grid voxel in B and of B grid voxel in A (embedding indices).
  std::size_t forward_index(std::size_t a_index);
  std::size_t backward_index(std::size_t b_index);
  double forward_similarity(std::size_t a_index);

 private:
  struct Lookup {
    std::size_t index;
    double value;
  };
  Lookup nn_of_vectors(const EmbeddingSet& target, std::span<const std::vector<float>> heads) const;
  Lookup nn_of_voxel(const EmbeddingSet& source, std::size_t index, const EmbeddingSet& target) const;
  std::vector<std::vector<float>> template_vectors(const EmbeddingSet& set, const Point3& p) const;
  double similarity_at(const std::vector<std::vector<float>>& tmpl, const Point3& q) const;

  const EmbeddingSet& a_;
  const EmbeddingSet& b_;
  SimilarityWeights w_;
  std::unordered_map<std::size_t, Lookup> forward_cache_;
  std::unordered_map<std::size_t, Lookup> backward_cache_;
};

ScalarVolume similarity_map(const EmbeddingSet& templ, const Point3& t, const EmbeddingSet& query,
                            const SimilarityWeights& w);
MatchResult nn_match(const EmbeddingSet& templ, const Point3& t, const EmbeddingSet& query,
                     const SimilarityWeights& w);
Point3 forward_backward(const Point3& t, const EmbeddingSet& a, const EmbeddingSet& b,
                        const SimilarityWeights& w);
FixpointTrace fixed_point_iterate(const Point3& t0, const EmbeddingSet& a, const EmbeddingSet& b,
                                  const SimilarityWeights& w, int max_iter);
MatchResult fixpoint_match(const Point3& t, const EmbeddingSet& a, const EmbeddingSet& b,
                           const SimilarityWeights& w, const FixpointConfig& cfg);

/// Element-wise matching; failures are reported per element. `cfg` empty
/// selects plain NN matching.
std::vector<MatchResult> grid_match(std::span<const Point3> points, const EmbeddingSet& a,
                                    const EmbeddingSet& b, const SimilarityWeights& w,
                                    const std::optional<FixpointConfig>& cfg);

}  // namespace uae

#pragma once

#include "uae/augment.hpp"
#include "uae/losses.hpp"
#include "uae/matching.hpp"
#include "uae/registered_pair.hpp"
#include "uae/volume.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace uae {

using WeightMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Fixed multi-scale filter bank evaluated at working resolution and sampled
/// at stride 2. Channels:
///   0      normalized intensity
///   1-3    Gaussian smoothed value, sigma 1, 2, 4
///   4      local standard deviation, sigma 2
///   5-7    gradient x, y, z at sigma 2
///   8-10   |gradient x|, |y|, |z| at sigma 4
///   11-12  gradient magnitude at sigma 1, 2
///   13-15  Laplacian at sigma 1, 2, 4
/// Derivatives are scale-normalized (times sigma per order). The input is
/// min-max rescaled to [0,1] first.
struct DescriptorBank {
  static constexpr int kFeatureDim = 16;
  static constexpr double kCoarseSigma = 2.0;  // extra smoothing for the coarse head, half-res voxels

  enum class Kernel { smooth, first_derivative, second_derivative };
  /// Correlation taps (index -radius..radius) of one separable factor.
  static std::vector<double> kernel(Kernel kind, double sigma);
};

EmbeddingVolume compute_descriptors(const ScalarVolume& vol);

/// Descriptor volumes feeding the fine and coarse heads.
struct FeatureSet {
  EmbeddingVolume fine;
  EmbeddingVolume coarse;
};
FeatureSet compute_features(const ScalarVolume& vol);

struct ProjectionModel {
  int feature_dim = DescriptorBank::kFeatureDim;
  int head_dim = 128;
  WeightMatrix w_coarse;
  WeightMatrix w_fine;
  std::optional<WeightMatrix> w_semantic;
  double tau_a = 0.5;
  double tau_s = 0.5;
  double tau_c = 0.5;
  std::uint32_t iteration = 0;
  std::uint64_t config_hash = 0;

  /// Gaussian entries with variance 1/F, reproducible from `seed`.
  static ProjectionModel random(int feature_dim, int head_dim, bool semantic, std::uint64_t seed);
  void validate() const;
};

std::vector<std::uint8_t> encode_model(const ProjectionModel& m);
ProjectionModel decode_model(std::span<const std::uint8_t> bytes);
void save_model(const ProjectionModel& m, const std::filesystem::path& path);
ProjectionModel load_model(const std::filesystem::path& path);

/// Per-head embeddings on the half-resolution grid.
EmbeddingSet embed(const ScalarVolume& vol, const ProjectionModel& model);
EmbeddingSet embed_features(const FeatureSet& features, const ProjectionModel& model);

/// Zero projections replaced by e1 in the last embed call on this thread.
struct EmbedStats {
  std::size_t zero_coarse = 0;
  std::size_t zero_fine = 0;
  std::size_t zero_semantic = 0;
};
EmbedStats last_embed_stats();

struct TrainConfig {
  double learning_rate = 0.02;
  double momentum = 0.9;
  int steps = 500;
  int head_dim = 128;
  double tau_a = 0.5;
  double tau_s = 0.5;
  double tau_c = 0.5;
  int n_pos_fine = 200;
  int n_neg_fine = 500;
  int n_fov_fine = 100;
  int n_pos_coarse = 100;
  int n_neg_coarse = 200;
  int n_sem_per_class = 20;
  double min_dist_fine = 8.0;  // working voxels
  double min_dist_coarse = 16.0;
  double hard_fraction = 0.5;
  std::uint64_t seed = 0;
  AugmentSpec augment;

  void validate() const;
};

std::uint64_t config_hash(const TrainConfig& cfg);

/// A pool-based contrastive batch plus the descriptor vector behind every
/// pool row, so loss gradients can be carried back to the weights.
struct HeadBatch {
  PairBatch batch;
  Eigen::MatrixXd features;  // pool rows x F
};
struct LabeledHeadBatch {
  LabeledBatch batch;
  Eigen::MatrixXd features;
};
struct TrainingBatch {
  HeadBatch fine;
  HeadBatch coarse;
  std::optional<LabeledHeadBatch> semantic;
  bool cross_modality = false;
};

/// Self-supervised batch from an augmented patch pair. Embeddings of the
/// candidates are taken from the current model for hard-negative mining.
TrainingBatch sample_training_batch(const PatchPair& pair, const FeatureSet& fa,
                                    const FeatureSet& fb, const ProjectionModel& model,
                                    const TrainConfig& cfg, std::uint64_t seed);

/// Cross-modality batch from a registered pair: anchors in the moving scan,
/// positives and negatives in the fixed crop, FOV negatives in the part of the
/// fixed scan the moving scan does not cover.
struct PairFeatures {
  FeatureSet moving;
  FeatureSet fixed;
  std::vector<std::size_t> anchor_candidates;    // moving half-res voxels in the body, mapping into the crop
  std::vector<std::size_t> negative_candidates;  // fixed half-res voxels inside the crop
  std::vector<std::size_t> fov_candidates;       // fixed body voxels outside the moving footprint
};
PairFeatures prepare_pair_features(const RegisteredPair& pair);
TrainingBatch sample_paired_batch(const RegisteredPair& pair, const PairFeatures& pf,
                                  const ProjectionModel& model, const TrainConfig& cfg,
                                  std::uint64_t seed);

struct HeadGradient {
  double loss = 0.0;
  WeightMatrix grad;  // F x D
};
/// Loss of one head and its gradient with respect to W, chained through the
/// projection and the unit normalization.
HeadGradient head_loss(const WeightMatrix& w, const HeadBatch& hb, bool cross_modality);
HeadGradient semantic_loss(const WeightMatrix& w, const LabeledHeadBatch& hb);

enum class TrainMode { uae_s, uae_m_selfsup, uae_m_paired };
std::string_view to_string(TrainMode m);

struct TrainingSample {
  ScalarVolume volume;  // working resolution
  std::optional<LabelVolume> labels;
};

struct LossRecord {
  int step = 0;
  double fine = 0.0;
  double coarse = 0.0;
  double semantic = 0.0;  // 0 when the step had no semantic batch
  bool paired = false;
};

struct TrainResult {
  ProjectionModel model;
  std::vector<LossRecord> log;
};

/// SGD with momentum on the head weights. Per step the fine and coarse
/// losses are divided by their anchor counts and the semantic loss by its
/// class count before summing. `uae_m_paired` alternates self-supervised and
/// registered-pair batches 1:1. Augmentation is taken from cfg.augment as is;
/// callers training UAE-M models set `aggressive`.
TrainResult train(std::span<const TrainingSample> data, const TrainConfig& cfg, TrainMode mode,
                  std::span<const RegisteredPair> pairs = {},
                  const ProjectionModel* init = nullptr);

}  // namespace uae

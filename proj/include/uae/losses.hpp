#pragma once

#include <Eigen/Dense>

#include <vector>

namespace uae {

/// Contrastive pair batch. Embeddings live in a shared pool (one row per
/// distinct vector) and the anchors/positives/negatives index into it, so a
/// vector used by several anchors accumulates a single gradient row.
struct PairBatch {
  Eigen::MatrixXd vectors;
  std::vector<int> anchors;
  std::vector<int> positives;
  std::vector<std::vector<int>> negatives;      // one list per anchor
  std::vector<std::vector<int>> fov_negatives;  // empty, or one list per anchor
  double temperature = 0.5;
};

/// Embeddings with class ids in [0, num_classes).
struct LabeledBatch {
  Eigen::MatrixXd vectors;
  std::vector<int> labels;
  int num_classes = 0;
  double temperature = 0.5;
};

struct LossOutput {
  double value = 0.0;
  Eigen::MatrixXd gradients;  // same shape as the input pool
};

/// Voxel-wise InfoNCE over (anchor, positive) pairs against spatial negatives.
/// Rejects batches that carry FOV negatives.
LossOutput appearance_infonce(const PairBatch& batch);

/// Same functional form with the negative pool extended by the FOV negatives.
LossOutput crossmod_infonce(const PairBatch& batch);

/// Prototype-to-voxel supervised contrastive loss; prototypes are plain class
/// means. Cost is O(n K D).
LossOutput proto_supcon(const LabeledBatch& batch);

}  // namespace uae

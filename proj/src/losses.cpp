#include "uae/losses.hpp"

#include "uae/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace uae {

namespace {

constexpr double kUnitTolerance = 1e-3;

void check_unit(const Eigen::MatrixXd& pool, int row) {
  if (row < 0 || row >= pool.rows()) {
    throw Error(ErrorCode::InvalidArgument, "batch index outside the vector pool");
  }
  if (std::abs(pool.row(row).norm() - 1.0) > kUnitTolerance) {
    throw Error(ErrorCode::NonUnitInput, "embedding row " + std::to_string(row) + " is not unit norm");
  }
}

LossOutput infonce(const PairBatch& b, bool use_fov) {
  const std::size_t n = b.anchors.size();
  if (n == 0) throw Error(ErrorCode::EmptyBatch, "no anchors");
  if (b.positives.size() != n || b.negatives.size() != n) {
    throw Error(ErrorCode::MismatchedLengths, "anchors, positives and negatives differ in count");
  }
  if (!b.fov_negatives.empty() && b.fov_negatives.size() != n) {
    throw Error(ErrorCode::MismatchedLengths, "fov negative lists must match anchors");
  }
  if (!(b.temperature > 0.0)) throw Error(ErrorCode::InvalidArgument, "temperature must be > 0");

  const auto& pool = b.vectors;
  std::vector<char> checked(static_cast<std::size_t>(pool.rows()), 0);
  const auto check = [&](int row) {
    if (row >= 0 && row < pool.rows() && checked[static_cast<std::size_t>(row)]) return;
    check_unit(pool, row);
    checked[static_cast<std::size_t>(row)] = 1;
  };
  for (std::size_t i = 0; i < n; ++i) {
    check(b.anchors[i]);
    check(b.positives[i]);
    for (int j : b.negatives[i]) check(j);
    if (use_fov && !b.fov_negatives.empty()) {
      for (int j : b.fov_negatives[i]) check(j);
    }
  }

  // Columns are contiguous: one vector per column.
  const Eigen::MatrixXd vt = pool.transpose();
  Eigen::MatrixXd gt = Eigen::MatrixXd::Zero(vt.rows(), vt.cols());
  const double inv_t = 1.0 / b.temperature;
  LossOutput out;
  std::vector<int> pool_idx;
  std::vector<double> logits;

  for (std::size_t i = 0; i < n; ++i) {
    const int a = b.anchors[i];
    const int p = b.positives[i];
    pool_idx.assign(b.negatives[i].begin(), b.negatives[i].end());
    if (use_fov && !b.fov_negatives.empty()) {
      pool_idx.insert(pool_idx.end(), b.fov_negatives[i].begin(), b.fov_negatives[i].end());
    }
    const auto va = vt.col(a);

    logits.resize(pool_idx.size() + 1);
    logits[0] = va.dot(vt.col(p)) * inv_t;
    for (std::size_t j = 0; j < pool_idx.size(); ++j) logits[j + 1] = va.dot(vt.col(pool_idx[j])) * inv_t;
    const double pos_logit = logits[0];
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double& l : logits) {
      l = std::exp(l - m);
      z += l;
    }
    out.value += -(pos_logit - m) + std::log(z);

    // softmax weights; d loss / d logit_k = s_k - [k == 0]
    const double s0 = logits[0] / z;
    gt.col(a) += inv_t * (s0 - 1.0) * vt.col(p);
    gt.col(p) += inv_t * (s0 - 1.0) * va;
    for (std::size_t j = 0; j < pool_idx.size(); ++j) {
      const double s = inv_t * logits[j + 1] / z;
      gt.col(a) += s * vt.col(pool_idx[j]);
      gt.col(pool_idx[j]) += s * va;
    }
  }
  out.gradients = gt.transpose();
  return out;
}

}  // namespace

LossOutput appearance_infonce(const PairBatch& batch) {
  for (const auto& f : batch.fov_negatives) {
    if (!f.empty()) {
      throw Error(ErrorCode::InvalidArgument, "appearance loss takes no FOV negatives");
    }
  }
  return infonce(batch, false);
}

LossOutput crossmod_infonce(const PairBatch& batch) { return infonce(batch, true); }

LossOutput proto_supcon(const LabeledBatch& batch) {
  const Eigen::Index n = batch.vectors.rows();
  const int k = batch.num_classes;
  if (n == 0 || k < 1) throw Error(ErrorCode::SingleEmptyBatch, "labeled batch is empty");
  if (static_cast<Eigen::Index>(batch.labels.size()) != n) {
    throw Error(ErrorCode::MismatchedLengths, "one label per embedding required");
  }
  if (!(batch.temperature > 0.0)) throw Error(ErrorCode::InvalidArgument, "temperature must be > 0");
  for (Eigen::Index i = 0; i < n; ++i) check_unit(batch.vectors, static_cast<int>(i));

  const Eigen::Index d = batch.vectors.cols();
  Eigen::MatrixXd proto = Eigen::MatrixXd::Zero(k, d);
  std::vector<double> count(static_cast<std::size_t>(k), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = batch.labels[static_cast<std::size_t>(i)];
    if (c < 0 || c >= k) throw Error(ErrorCode::InvalidArgument, "label outside [0, K)");
    proto.row(c) += batch.vectors.row(i);
    count[static_cast<std::size_t>(c)] += 1.0;
  }
  for (int c = 0; c < k; ++c) {
    if (count[static_cast<std::size_t>(c)] == 0.0) {
      throw Error(ErrorCode::EmptyClass, "class " + std::to_string(c) + " has no embedding");
    }
    proto.row(c) /= count[static_cast<std::size_t>(c)];
  }

  const double inv_t = 1.0 / batch.temperature;
  // logits(p, j) = c_p . x_j / tau, K x n
  Eigen::MatrixXd logits = (proto * batch.vectors.transpose()) * inv_t;

  LossOutput out;
  Eigen::MatrixXd weight(k, n);  // d loss / d logits
  for (int p = 0; p < k; ++p) {
    const double m = logits.row(p).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(p).array() - m).exp().matrix();
    const double z = e.sum();
    const double lse = m + std::log(z);
    double own = 0.0;
    const double inv_np = 1.0 / count[static_cast<std::size_t>(p)];
    for (Eigen::Index j = 0; j < n; ++j) {
      weight(p, j) = e(j) / z;
      if (batch.labels[static_cast<std::size_t>(j)] == p) {
        own += logits(p, j);
        weight(p, j) -= inv_np;
      }
    }
    out.value += lse - own * inv_np;
  }

  // Direct dependence through x_j, then through the prototypes c_p.
  out.gradients = inv_t * (weight.transpose() * proto);
  const Eigen::MatrixXd grad_proto = inv_t * (weight * batch.vectors);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = batch.labels[static_cast<std::size_t>(i)];
    out.gradients.row(i) += grad_proto.row(c) / count[static_cast<std::size_t>(c)];
  }
  return out;
}

}  // namespace uae

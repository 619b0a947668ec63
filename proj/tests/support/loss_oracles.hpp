#pragma once

// Independent reference implementations of the contrastive losses and a
// finite-difference gradient checker, shared by unit and acceptance tests.

#include "uae/losses.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace uae::testing {

inline Eigen::MatrixXd random_unit_rows(int n, int d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd m(n, d);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < d; ++k) m(i, k) = g(rng);
    m.row(i).normalize();
  }
  return m;
}

/// Direct summation of the InfoNCE value, no max subtraction, no gradients.
inline double naive_infonce(const PairBatch& b, bool with_fov) {
  double total = 0.0;
  for (std::size_t i = 0; i < b.anchors.size(); ++i) {
    const auto a = b.vectors.row(b.anchors[i]);
    const double pos = std::exp(a.dot(b.vectors.row(b.positives[i])) / b.temperature);
    double den = pos;
    for (int j : b.negatives[i]) den += std::exp(a.dot(b.vectors.row(j)) / b.temperature);
    if (with_fov && !b.fov_negatives.empty()) {
      for (int j : b.fov_negatives[i]) den += std::exp(a.dot(b.vectors.row(j)) / b.temperature);
    }
    total += -std::log(pos / den);
  }
  return total;
}

/// Prototype SupCon by nested loops: prototypes recomputed per term and the
/// denominator summed afresh for every voxel.
inline double naive_proto_supcon(const LabeledBatch& b) {
  const Eigen::Index n = b.vectors.rows();
  double total = 0.0;
  for (int p = 0; p < b.num_classes; ++p) {
    Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(b.vectors.cols());
    int np = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (b.labels[static_cast<std::size_t>(i)] == p) {
        c += b.vectors.row(i);
        ++np;
      }
    }
    c /= np;
    double term = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (b.labels[static_cast<std::size_t>(i)] != p) continue;
      double den = 0.0;
      for (int q = 0; q < b.num_classes; ++q) {
        for (Eigen::Index j = 0; j < n; ++j) {
          if (b.labels[static_cast<std::size_t>(j)] == q) den += std::exp(c.dot(b.vectors.row(j)) / b.temperature);
        }
      }
      term += std::log(std::exp(c.dot(b.vectors.row(i)) / b.temperature) / den);
    }
    total += -term / np;
  }
  return total;
}

/// Original pairwise SupCon value, O(n^2): every voxel is an anchor against
/// every other voxel. Used only as a scaling reference.
inline double pairwise_supcon(const LabeledBatch& b) {
  const Eigen::Index n = b.vectors.rows();
  const Eigen::MatrixXd& v = b.vectors;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double den = 0.0, pos = 0.0;
    int np = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double s = v.row(i).dot(v.row(j)) / b.temperature;
      den += std::exp(s);
      if (b.labels[static_cast<std::size_t>(j)] == b.labels[static_cast<std::size_t>(i)]) {
        pos += s;
        ++np;
      }
    }
    if (np > 0) total += -(pos / np - std::log(den));
  }
  return total;
}

struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t entries = 0;
};

/// Compares `analytic` with central differences of `value` over every entry of
/// `x`. Relative error is |a - n| / max(|a|, |n|), with entries where both
/// are below `zero_floor` compared absolutely.
inline GradientCheck check_gradient(Eigen::MatrixXd x, const Eigen::MatrixXd& analytic,
                                    const std::function<double(const Eigen::MatrixXd&)>& value,
                                    double step = 1e-4, double zero_floor = 1e-7) {
  GradientCheck out;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
      const double keep = x(i, k);
      x(i, k) = keep + step;
      const double up = value(x);
      x(i, k) = keep - step;
      const double down = value(x);
      x(i, k) = keep;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic(i, k);
      const double scale = std::max(std::abs(a), std::abs(numeric));
      const double err = scale < zero_floor ? std::abs(a - numeric) : std::abs(a - numeric) / scale;
      out.max_relative_error = std::max(out.max_relative_error, err);
      ++out.entries;
    }
  }
  return out;
}

/// Random pool-based batch: every anchor, positive and negative is its own
/// pool row, plus a few rows shared between anchors.
inline PairBatch random_pair_batch(std::mt19937_64& rng, int n_pos, int n_neg, int n_fov, int d,
                                   double tau) {
  const int shared = 4;
  const int rows = n_pos * (2 + n_neg + n_fov) + shared;
  PairBatch b;
  b.vectors = random_unit_rows(rows, d, rng);
  b.temperature = tau;
  int next = shared;
  std::uniform_int_distribution<int> pick_shared(0, shared - 1);
  for (int i = 0; i < n_pos; ++i) {
    b.anchors.push_back(next++);
    b.positives.push_back(next++);
    std::vector<int> neg, fov;
    for (int j = 0; j < n_neg; ++j) neg.push_back(j % 5 == 0 ? pick_shared(rng) : next++);
    for (int j = 0; j < n_fov; ++j) fov.push_back(next++);
    b.negatives.push_back(neg);
    if (n_fov > 0) b.fov_negatives.push_back(fov);
  }
  return b;
}

inline LabeledBatch random_labeled_batch(std::mt19937_64& rng, int n, int k, int d, double tau) {
  LabeledBatch b;
  b.vectors = random_unit_rows(n, d, rng);
  b.num_classes = k;
  b.temperature = tau;
  std::uniform_int_distribution<int> cls(0, k - 1);
  for (int i = 0; i < n; ++i) b.labels.push_back(i < k ? i : cls(rng));
  return b;
}

}  // namespace uae::testing

#include "doctest.h"

#include "support/loss_oracles.hpp"
#include "uae/error.hpp"
#include "uae/losses.hpp"

#include <ctime>
#include <cmath>
#include <random>

using namespace uae;
using namespace uae::testing;

namespace {

PairBatch single_pair() {
  PairBatch b;
  b.vectors = Eigen::MatrixXd::Zero(3, 2);
  b.vectors(0, 0) = 1.0;
  b.vectors(1, 0) = 1.0;
  b.vectors(2, 1) = 1.0;
  b.anchors = {0};
  b.positives = {1};
  b.negatives = {{2}};
  b.temperature = 0.5;
  return b;
}

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("infonce hand values") {
  PairBatch b = single_pair();
  CHECK(appearance_infonce(b).value == doctest::Approx(std::log1p(std::exp(-2.0))).epsilon(1e-12));
  CHECK(appearance_infonce(b).value == doctest::Approx(0.126928).epsilon(1e-5));

  b.negatives = {{}};
  const LossOutput zero = appearance_infonce(b);
  CHECK(zero.value == 0.0);
  CHECK(zero.gradients.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("infonce input validation") {
  PairBatch b = single_pair();
  b.anchors.clear();
  b.positives.clear();
  b.negatives.clear();
  CHECK(code_of([&] { appearance_infonce(b); }) == ErrorCode::EmptyBatch);
  b = single_pair();
  b.vectors(2, 1) = 1.01;
  CHECK(code_of([&] { appearance_infonce(b); }) == ErrorCode::NonUnitInput);
  b = single_pair();
  b.fov_negatives = {{2}};
  CHECK_THROWS_AS(appearance_infonce(b), Error);
}

TEST_CASE("crossmod infonce reduces to the appearance loss") {
  std::mt19937_64 rng(4);
  PairBatch b = random_pair_batch(rng, 6, 10, 0, 8, 0.5);
  const LossOutput a = appearance_infonce(b);
  const LossOutput c = crossmod_infonce(b);
  CHECK(std::abs(a.value - c.value) < 1e-12);
  CHECK((a.gradients - c.gradients).cwiseAbs().maxCoeff() < 1e-12);

  PairBatch f = random_pair_batch(rng, 5, 8, 4, 8, 0.5);
  const double before = crossmod_infonce(f).value;
  for (std::size_t i = 0; i < f.anchors.size(); ++i) {
    f.fov_negatives[i].push_back(f.negatives[i].back());
    f.negatives[i].pop_back();
  }
  CHECK(std::abs(crossmod_infonce(f).value - before) < 1e-12);
}

TEST_CASE("crossmod infonce matches direct summation at full batch size") {
  std::mt19937_64 rng(8);
  const PairBatch b = random_pair_batch(rng, 200, 500, 100, 16, 0.5);
  CHECK(std::abs(crossmod_infonce(b).value - naive_infonce(b, true)) < 1e-10 * naive_infonce(b, true));
  const PairBatch s = random_pair_batch(rng, 20, 30, 0, 16, 0.5);
  CHECK(std::abs(appearance_infonce(s).value - naive_infonce(s, false)) < 1e-10);
}

TEST_CASE("infonce gradients match finite differences") {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    const PairBatch b = random_pair_batch(rng, 3, 5, trial % 2 ? 3 : 0, 6, 0.5);
    const LossOutput out = crossmod_infonce(b);
    const auto check = check_gradient(b.vectors, out.gradients, [&](const Eigen::MatrixXd& v) {
      PairBatch c = b;
      c.vectors = v;
      return naive_infonce(c, true);
    });
    CHECK(check.max_relative_error < 1e-4);
  }
}

TEST_CASE("unreferenced pool rows get zero gradient") {
  PairBatch b = single_pair();
  b.vectors.conservativeResize(4, 2);
  b.vectors.row(3) << 0.0, 1.0;
  const LossOutput out = appearance_infonce(b);
  CHECK(out.gradients.row(3).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("proto supcon hand values") {
  LabeledBatch one;
  one.vectors = Eigen::MatrixXd::Zero(3, 2);
  one.vectors.col(0).setOnes();
  one.labels = {0, 0, 0};
  one.num_classes = 1;
  for (double tau : {0.1, 0.5, 2.0}) {
    one.temperature = tau;
    CHECK(proto_supcon(one).value == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  }

  LabeledBatch two;
  two.vectors = Eigen::Matrix2d::Identity();
  two.labels = {0, 1};
  two.num_classes = 2;
  two.temperature = 0.5;
  CHECK(proto_supcon(two).value == doctest::Approx(2.0 * std::log1p(std::exp(-2.0))).epsilon(1e-12));
  CHECK(proto_supcon(two).value == doctest::Approx(0.253856).epsilon(1e-5));
}

TEST_CASE("proto supcon validation") {
  LabeledBatch b;
  b.vectors = Eigen::Matrix2d::Identity();
  b.labels = {0, 0};
  b.num_classes = 2;
  CHECK(code_of([&] { proto_supcon(b); }) == ErrorCode::EmptyClass);
  LabeledBatch empty;
  empty.vectors.resize(0, 2);
  empty.num_classes = 1;
  CHECK(code_of([&] { proto_supcon(empty); }) == ErrorCode::SingleEmptyBatch);
}

TEST_CASE("proto supcon equals the nested-loop oracle and its gradients check out") {
  std::mt19937_64 rng(23);
  const LabeledBatch big = random_labeled_batch(rng, 200, 5, 16, 0.5);
  CHECK(std::abs(proto_supcon(big).value - naive_proto_supcon(big)) < 1e-10);
  for (int trial = 0; trial < 10; ++trial) {
    const LabeledBatch b = random_labeled_batch(rng, 12, 3, 5, 0.5);
    const LossOutput out = proto_supcon(b);
    const auto check = check_gradient(b.vectors, out.gradients, [&](const Eigen::MatrixXd& v) {
      LabeledBatch c = b;
      c.vectors = v;
      return naive_proto_supcon(c);
    });
    CHECK(check.max_relative_error < 1e-4);
  }
}

TEST_CASE("proto supcon is invariant to shuffling within a class") {
  std::mt19937_64 rng(31);
  LabeledBatch b = random_labeled_batch(rng, 60, 4, 8, 0.5);
  const double before = proto_supcon(b).value;
  std::vector<int> idx(60);
  for (int i = 0; i < 60; ++i) idx[static_cast<std::size_t>(i)] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  LabeledBatch s = b;
  for (int i = 0; i < 60; ++i) {
    s.vectors.row(i) = b.vectors.row(idx[static_cast<std::size_t>(i)]);
    s.labels[static_cast<std::size_t>(i)] = b.labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
  }
  CHECK(std::abs(proto_supcon(s).value - before) < 1e-10);
}

TEST_CASE("losses are non-negative") {
  std::mt19937_64 rng(37);
  for (int t = 0; t < 20; ++t) {
    CHECK(crossmod_infonce(random_pair_batch(rng, 4, 6, 2, 4, 0.3)).value >= 0.0);
    CHECK(proto_supcon(random_labeled_batch(rng, 30, 3, 4, 0.3)).value >= 0.0);
  }
}

TEST_CASE("proto supcon scales linearly in n") {
  std::mt19937_64 rng(41);
  // Best-of-reps process CPU time per function. The functions are timed
  // round-robin so a slow spell of the machine hits every size alike.
  const auto best_times = [](const std::vector<std::function<void()>>& fs, int reps) {
    std::vector<double> best(fs.size(), 1e30);
    for (int r = 0; r < reps; ++r) {
      for (std::size_t i = 0; i < fs.size(); ++i) {
        const std::clock_t c0 = std::clock();
        fs[i]();
        best[i] = std::min(best[i], static_cast<double>(std::clock() - c0) / CLOCKS_PER_SEC);
      }
    }
    return best;
  };
  // For 4x the points linear cost gives 4x and quadratic 16x; the bounds sit
  // at the geometric midpoint.
  const LabeledBatch b1 = random_labeled_batch(rng, 16000, 8, 32, 0.5);
  const LabeledBatch b4 = random_labeled_batch(rng, 64000, 8, 32, 0.5);
  const auto t = best_times({[&] { proto_supcon(b1); }, [&] { proto_supcon(b4); }}, 7);
  CHECK(t[1] / t[0] < 8.0);

  // The same measurement tells the quadratic oracle apart.
  const LabeledBatch p1 = random_labeled_batch(rng, 1000, 8, 32, 0.5);
  const LabeledBatch p4 = random_labeled_batch(rng, 4000, 8, 32, 0.5);
  const auto q = best_times({[&] { pairwise_supcon(p1); }, [&] { pairwise_supcon(p4); }}, 3);
  CHECK(q[1] / q[0] > 8.0);
}

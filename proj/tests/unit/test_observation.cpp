#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "dptrav/observation.hpp"
#include "dptrav/posterior.hpp"
#include "dptrav/rng.hpp"

using namespace dptrav;

namespace {

Eigen::VectorXd v1(double a) { return Eigen::VectorXd::Constant(1, a); }

std::vector<LinearOperator> operators() {
  return {LinearOperator::identity(6), LinearOperator::mask(6, {4, 0, 2}), LinearOperator::block_average(6, 3),
          LinearOperator::random_projection(4, 6, 99), LinearOperator::dense(Eigen::MatrixXd::Ones(2, 6))};
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

}  // namespace

TEST(LinearOperator, AdjointConsistency) {
  Rng rng(1);
  for (const auto& op : operators()) {
    for (int k = 0; k < 10; ++k) {
      const Eigen::VectorXd x = standard_normal_vector(op.cols(), rng);
      const Eigen::VectorXd u = standard_normal_vector(op.rows(), rng);
      EXPECT_LE(rel(op.apply(x).dot(u), x.dot(op.adjoint(u))), 1e-10);
    }
  }
}

TEST(LinearOperator, PseudoinverseIdentity) {
  Rng rng(2);
  for (const auto& op : operators()) {
    for (int k = 0; k < 10; ++k) {
      const Eigen::VectorXd x = standard_normal_vector(op.cols(), rng);
      const Eigen::VectorXd ax = op.apply(x);
      const Eigen::VectorXd back = op.apply(op.pinv_apply(ax));
      EXPECT_LE((back - ax).norm(), 1e-8 * std::max(1.0, ax.norm()));
    }
  }
}

TEST(LinearOperator, RandomProjectionIsSeeded) {
  EXPECT_EQ(LinearOperator::random_projection(3, 5, 7).matrix(), LinearOperator::random_projection(3, 5, 7).matrix());
  EXPECT_NE(LinearOperator::random_projection(3, 5, 7).matrix(), LinearOperator::random_projection(3, 5, 8).matrix());
}

TEST(LinearOperator, RejectsBadShapes) {
  EXPECT_THROW(LinearOperator::mask(3, {}), Error);
  EXPECT_THROW(LinearOperator::mask(3, {3}), Error);
  EXPECT_THROW(LinearOperator::block_average(5, 2), Error);
  EXPECT_THROW(ClipOperator(2, 0.0), Error);
}

TEST(Observe, Examples) {
  Rng rng(3);
  Eigen::Vector2d x(3.0, 5.0);
  EXPECT_EQ(observe(LinearOperator::identity(2), 0.0, x, rng).y, Eigen::VectorXd(x));
  const Observation m = observe(LinearOperator::mask(2, {0}), 0.0, x, rng);
  ASSERT_EQ(m.y.size(), 1);
  EXPECT_EQ(m.y[0], 3.0);

  const int n = 100000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double y = observe(LinearOperator::identity(1), 1.0, v1(0.0), rng).y[0];
    sum += y;
    sq += y * y;
  }
  const double mean = sum / n;
  EXPECT_NEAR(sq / n - mean * mean, 1.0, 3.0 * std::sqrt(2.0 / n));
}

TEST(Observe, RejectsNegativeNoise) {
  Rng rng(4);
  EXPECT_THROW(observe(LinearOperator::identity(1), -1.0, v1(0.0), rng), Error);
}

TEST(LoglikGrad, Examples) {
  const Observation at_truth(v1(0.7), LinearOperator::identity(1), 1.0);
  EXPECT_EQ(loglik_grad(at_truth, v1(0.7))[0], 0.0);
  const Observation sq(v1(1.0), LinearOperator::identity(1), 1.0, LikelihoodForm::kSquared);
  EXPECT_DOUBLE_EQ(loglik_grad(sq, v1(0.0))[0], 2.0);
  const Observation l2(v1(1.0), LinearOperator::identity(1), 1.0, LikelihoodForm::kL2Norm);
  EXPECT_DOUBLE_EQ(loglik_grad(l2, v1(0.0))[0], 1.0);
}

TEST(LoglikGrad, MatchesFiniteDifferences) {
  Rng rng(5);
  for (const auto& op : operators()) {
    const Observation obs(standard_normal_vector(op.rows(), rng), op, 0.5);
    for (int k = 0; k < 5; ++k) {
      const Eigen::VectorXd x = standard_normal_vector(op.cols(), rng);
      const Eigen::VectorXd g = loglik_grad(obs, x);
      Eigen::VectorXd fd(x.size());
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = 1e-6;
        Eigen::VectorXd a = x, b = x;
        a[i] += h;
        b[i] -= h;
        fd[i] = (loglik_value(obs, a) - loglik_value(obs, b)) / (2 * h);
      }
      EXPECT_LE((g - fd).norm(), 1e-6 * std::max(1.0, g.norm()));
    }
  }
}

TEST(LoglikGrad, ClipUsesZeroSubgradientWhenSaturated) {
  const ClipOperator clip(2, 1.0);
  const Observation obs(Eigen::Vector2d(0.0, 0.0), clip, 0.1);
  const Eigen::Vector2d x(0.2, 3.0);  // second coordinate saturates
  const Eigen::VectorXd g = loglik_grad(obs, x);
  EXPECT_DOUBLE_EQ(g[0], 2.0 * 2.0 * (0.0 - 0.4));
  EXPECT_EQ(g[1], 0.0);
}

TEST(LoglikGrad, CurvatureIsPositiveSemidefinite) {
  for (const auto& op : operators()) {
    const Observation obs(Eigen::VectorXd::Zero(op.rows()), op, 0.7);
    const Eigen::MatrixXd h = likelihood_curvature(obs);
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(h).eigenvalues().minCoeff(), -1e-12);
    EXPECT_LE((h - op.matrix().transpose() * op.matrix() / 0.49).norm(), 1e-12);
  }
}

TEST(PinvInit, Examples) {
  const Observation id(Eigen::Vector2d(1.5, -2.0), LinearOperator::identity(2), 0.0);
  EXPECT_LE((pinv_init(id) - id.y).norm(), 1e-15);
  const Observation mask(v1(3.0), LinearOperator::mask(2, {0}), 0.0);
  EXPECT_LE((pinv_init(mask) - Eigen::Vector2d(3.0, 0.0)).norm(), 1e-14);
  const Observation avg(v1(4.0), LinearOperator::block_average(2, 2), 0.0);
  EXPECT_LE((pinv_init(avg) - Eigen::Vector2d(4.0, 4.0)).norm(), 1e-13);
}

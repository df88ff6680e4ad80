#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "dptrav/gaussian_mixture.hpp"
#include "dptrav/grid_prior.hpp"
#include "dptrav/metrics.hpp"
#include "dptrav/prior.hpp"
#include "dptrav/schedule.hpp"
#include "dptrav/score.hpp"

using namespace dptrav;

namespace {

Eigen::VectorXd v1(double a) { return Eigen::VectorXd::Constant(1, a); }
Eigen::MatrixXd m1(double a) { return Eigen::MatrixXd::Constant(1, 1, a); }

GaussianMixture bimodal_1d() {
  return GaussianMixture(Eigen::Vector2d(0.5, 0.5), {v1(-2.0), v1(2.0)}, {m1(1.0), m1(1.0)});
}

GaussianMixture random_mixture_2d() {
  Eigen::Matrix2d c1, c2;
  c1 << 1.0, 0.3, 0.3, 0.5;
  c2 << 0.7, -0.2, -0.2, 1.2;
  return GaussianMixture(Eigen::Vector3d(0.2, 0.5, 0.3), {Eigen::Vector2d(-1.0, 0.5), Eigen::Vector2d(1.5, -0.5),
                                                          Eigen::Vector2d(0.0, 2.0)},
                         {c1, c2, 0.4 * Eigen::Matrix2d::Identity()});
}

}  // namespace

TEST(GaussianMixture, RejectsBadInput) {
  EXPECT_THROW(GaussianMixture(Eigen::Vector2d(0.6, 0.6), {v1(0), v1(1)}, {m1(1), m1(1)}), Error);
  EXPECT_THROW(GaussianMixture(Eigen::Vector2d(0.5, 0.5), {v1(0), v1(1)}, {m1(1), m1(-1)}), Error);
  EXPECT_THROW(GaussianMixture(Eigen::VectorXd::Ones(1), {v1(0)}, {Eigen::MatrixXd::Identity(2, 2)}), Error);
}

TEST(GaussianMixture, DiffuseExamples) {
  const Schedule s = default_schedule();
  const GaussianMixture unit = GaussianMixture::standard(3);
  for (double t : {0.0, 100.0, 517.5, 1000.0}) {
    const GaussianMixture d = unit.diffuse(s, t);
    EXPECT_LT((d.cov(0) - Eigen::MatrixXd::Identity(3, 3)).norm(), 1e-12);
    EXPECT_LT(d.mean(0).norm(), 1e-15);
  }
  const Schedule quarter = Schedule::linear(2, 0.5, 0.5);
  const GaussianMixture d = GaussianMixture::gaussian(v1(2.0), m1(1.0)).diffuse(quarter, 2.0);
  EXPECT_NEAR(d.mean(0)[0], 1.0, 1e-14);
  EXPECT_NEAR(d.cov(0)(0, 0), 1.0, 1e-14);
  const GaussianMixture g = bimodal_1d();
  const GaussianMixture g0 = g.diffuse(s, 0.0);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(g0.mean(k), g.mean(k));
    EXPECT_EQ(g0.cov(k), g.cov(k));
  }
}

TEST(GaussianMixture, ScoreExamples) {
  const GaussianMixture unit = GaussianMixture::standard(1);
  EXPECT_EQ(unit.score(v1(0.0))[0], 0.0);
  EXPECT_NEAR(unit.score(v1(2.0))[0], -2.0, 1e-15);
  EXPECT_NEAR(bimodal_1d().score(v1(0.0))[0], 0.0, 1e-15);
}

TEST(GaussianMixture, LogpdfAndSampling) {
  EXPECT_NEAR(GaussianMixture::standard(1).logpdf(v1(0.0)), -0.5 * std::log(2.0 * std::numbers::pi), 1e-14);
  EXPECT_NEAR(GaussianMixture::standard(1).logpdf(v1(0.0)), -0.91894, 1e-5);
  Rng rng(7);
  const int n = 100000;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(2);
  const GaussianMixture unit = GaussianMixture::standard(2);
  for (int i = 0; i < n; ++i) sum += unit.sample(rng);
  EXPECT_LT((sum / n).cwiseAbs().maxCoeff(), 3.0 / std::sqrt(n));

  const GaussianMixture degenerate(Eigen::Vector2d(1.0, 0.0), {v1(-5.0), v1(5.0)}, {m1(0.01), m1(0.01)});
  for (int i = 0; i < 1000; ++i) EXPECT_LT(degenerate.sample(rng)[0], 0.0);
}

TEST(GaussianMixture, ScoreMatchesFiniteDifferences) {
  const GaussianMixture g = random_mixture_2d();
  Rng rng(11);
  for (int p = 0; p < 20; ++p) {
    const Eigen::VectorXd x = 1.5 * standard_normal_vector(2, rng);
    const Eigen::VectorXd sc = g.score(x);
    Eigen::VectorXd fd(2);
    for (int i = 0; i < 2; ++i) {
      const double h = 1e-5;
      Eigen::VectorXd a = x, b = x;
      a[i] += h;
      b[i] -= h;
      fd[i] = (g.logpdf(a) - g.logpdf(b)) / (2 * h);
    }
    EXPECT_LE((sc - fd).norm(), 1e-5 * std::max(1.0, sc.norm())) << "probe " << p;
  }
}

TEST(GaussianMixture, HessianMatchesFiniteDifferences) {
  const GaussianMixture g = random_mixture_2d();
  Rng rng(12);
  for (int p = 0; p < 10; ++p) {
    const Eigen::VectorXd x = standard_normal_vector(2, rng);
    Eigen::MatrixXd fd(2, 2);
    for (int i = 0; i < 2; ++i) {
      const double h = 1e-5;
      Eigen::VectorXd a = x, b = x;
      a[i] += h;
      b[i] -= h;
      fd.col(i) = (g.score(a) - g.score(b)) / (2 * h);
    }
    EXPECT_LE((g.hessian(x) - fd).norm(), 1e-5 * std::max(1.0, fd.norm()));
  }
}

TEST(GaussianMixture, DiffusedLawMatchesForwardSamples) {
  const Schedule s = default_schedule();
  const GaussianMixture g = bimodal_1d();
  const double t = 150.0;
  const GaussianMixture d = g.diffuse(s, t);
  Rng rng(13);
  const int n = 1000000;
  std::vector<double> xs(static_cast<std::size_t>(n));
  for (auto& x : xs) x = s.forward_sample(g.sample(rng), t, rng)[0];
  std::sort(xs.begin(), xs.end());
  double ks = 0.0;
  for (int i = 0; i < n; ++i) {
    const double f = mixture_cdf_1d(d, xs[static_cast<std::size_t>(i)]);
    ks = std::max({ks, std::abs(f - static_cast<double>(i) / n), std::abs(f - static_cast<double>(i + 1) / n)});
  }
  EXPECT_LE(ks, 0.01);
}

TEST(GridPrior, NormalizedWithDecayingTails) {
  for (const GridPrior& g : {GridPrior::quartic(1), GridPrior::gaussian(1, 0.5, 0.8, GridPrior::default_axis(1)),
                             GridPrior::quartic(2)}) {
    double mass = 0.0;
    for (std::size_t i = 0; i < g.node_count(); ++i) mass += g.node_weight(i) * std::exp(g.log_density()[i]);
    EXPECT_NEAR(mass, 1.0, 1e-6);
    EXPECT_LT(std::exp(g.log_density().front()), 1e-12);
    EXPECT_LT(std::exp(g.log_density().back()), 1e-12);
  }
}

TEST(GridPrior, RejectsLeakingTable) {
  EXPECT_THROW(GridPrior::gaussian(1, 0.0, 25.0, GridPrior::default_axis(1)), GridLeak);
}

TEST(GridPrior, GaussianGridScoreMatchesMixtureScore) {
  const Schedule s = default_schedule();
  const GridPrior grid = GridPrior::gaussian(1, 0.0, 1.0, GridPrior::default_axis(1));
  const GaussianMixture unit = GaussianMixture::standard(1);
  for (double t : {0.0, 200.0, 600.0}) {
    const GaussianMixture d = unit.diffuse(s, t);
    double err = 0.0;
    for (double x = -3.0; x <= 3.0; x += 0.05) {
      err = std::max(err, std::abs(grid_diffused_score(grid, s, t, v1(x))[0] - d.score(v1(x))[0]));
    }
    EXPECT_LE(err, 1e-3) << "t=" << t;
  }
  EXPECT_NEAR(grid_diffused_score(grid, s, 321.0, v1(1.0))[0], -1.0, 1e-3);
}

TEST(GridPrior, SymmetricScoreVanishesAtZero) {
  const Schedule s = default_schedule();
  const GridPrior q = GridPrior::quartic(1);
  for (double t : {0.0, 5.0, 300.0}) EXPECT_NEAR(grid_diffused_score(q, s, t, v1(0.0))[0], 0.0, 1e-6);
}

TEST(GridPrior, QuarticScoreAtTimeZero) {
  const Schedule s = default_schedule();
  const GridPrior q = GridPrior::quartic(1);
  for (double x = -2.0; x <= 2.0; x += 0.173) {
    EXPECT_NEAR(grid_diffused_score(q, s, 0.0, v1(x))[0], -x - x * x * x, 1e-4) << "x=" << x;
  }
}

TEST(GridPrior, TwoDimensionalScoreMatchesProductOracle) {
  const Schedule s = default_schedule();
  const GridPrior g2 = GridPrior::gaussian(2, 0.0, 1.0, GridPrior::default_axis(2));
  Eigen::Vector2d x(0.7, -1.2);
  for (double t : {0.0, 100.0, 500.0}) EXPECT_LE((g2.diffused_score(s, t, x) + x).norm(), 1e-3) << "t=" << t;
}

TEST(GridPrior, QueryOutsideSupportThrows) {
  const Schedule s = default_schedule();
  EXPECT_THROW(GridPrior::quartic(1).diffused_score(s, 10.0, v1(9.0)), OutOfRange);
}

TEST(GridPrior, SamplesFollowTheTable) {
  const GridPrior g = GridPrior::gaussian(1, 1.0, 0.5, GridPrior::default_axis(1));
  Rng rng(17);
  const int n = 100000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = g.sample(rng)[0];
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  EXPECT_NEAR(mean, 1.0, 3.0 * std::sqrt(0.5 / n));
  EXPECT_NEAR(var, 0.5, 0.01);
  EXPECT_NEAR(g.coordinate_variance(), 0.5, 1e-6);
}

TEST(StrongConcavity, Examples) {
  const GaussianMixture unit = GaussianMixture::standard(1);
  EXPECT_NEAR(strong_concavity_mu(unit, m1(1.0)), 2.0, 1e-14);
  EXPECT_NEAR(strong_concavity_mu(GaussianMixture::gaussian(v1(0.0), m1(4.0)), m1(0.0)), 0.25, 1e-14);
  EXPECT_NEAR(strong_concavity_mu(GridPrior::quartic(1), m1(0.0)), 1.0, 1e-4);
  EXPECT_THROW(strong_concavity_mu(bimodal_1d(), m1(1.0)), Unsupported);
}

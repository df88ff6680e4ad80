#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "dptrav/metrics.hpp"
#include "dptrav/posterior.hpp"
#include "dptrav/score.hpp"
#include "dptrav/solver.hpp"
#include "dptrav/w2.hpp"

using namespace dptrav;

namespace {

Eigen::VectorXd v1(double a) { return Eigen::VectorXd::Constant(1, a); }
Eigen::MatrixXd m1(double a) { return Eigen::MatrixXd::Constant(1, 1, a); }

Observation identity_obs(double y, double sigma = 1.0) { return Observation(v1(y), LinearOperator::identity(1), sigma); }

Stage1Config auto_config(const Schedule& s, double sigma, double prior_var) {
  Stage1Config c;
  c.w = auto_prior_weight(s, c.t1, sigma, prior_var);
  return c;
}

}  // namespace

TEST(CosineLr, Examples) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 0.3, 0.01), 0.3);
  EXPECT_NEAR(cosine_lr(100, 100, 0.3, 0.01), 0.01, 1e-15);
  EXPECT_NEAR(cosine_lr(50, 100, 1.0, 0.0), 0.5, 1e-15);
  for (int n = 1; n < 100; ++n) EXPECT_LE(cosine_lr(n, 100, 0.3, 0.01), cosine_lr(n - 1, 100, 0.3, 0.01));
}

TEST(Stage1Config, Validation) {
  const Schedule s = default_schedule();
  Stage1Config c;
  EXPECT_NO_THROW(c.validate(s));
  c.t1 = 0.0;
  EXPECT_THROW(c.validate(s), Error);
  c = Stage1Config{};
  c.t1 = 1000.0;
  EXPECT_THROW(c.validate(s), Error);
  c = Stage1Config{};
  c.eta_min = 1.0;
  EXPECT_THROW(c.validate(s), Error);
  c = Stage1Config{};
  c.iterations = 0;
  EXPECT_THROW(c.validate(s), Error);
  c = Stage1Config{};
  c.w = 0.0;
  EXPECT_THROW(c.validate(s), Error);
}

TEST(MapStage, GaussianRunningCase) {
  const Schedule s = default_schedule();
  const MixtureScore prior(GaussianMixture::standard(1), s);
  Rng rng(1);
  const MapResult r = map_stage(identity_obs(1.0), prior, s, auto_config(s, 1.0, 1.0), rng);
  EXPECT_GE(r.x_map[0], 0.495);
  EXPECT_LE(r.x_map[0], 0.505);
  EXPECT_EQ(r.trace.size(), 500u);
}

TEST(MapStage, VanishingPriorWeightGivesLeastSquares) {
  const Schedule s = default_schedule();
  const MixtureScore prior(GaussianMixture::standard(2), s);
  Eigen::Matrix2d a;
  a << 1.0, 0.5, -0.3, 0.8;
  const Observation obs(Eigen::Vector2d(0.7, -0.4), LinearOperator::dense(a), 0.5);
  Stage1Config c;
  c.w = 1e-12;
  c.init = InitMode::kZero;
  c.iterations = 2000;
  Rng rng(2);
  const Eigen::VectorXd x = map_stage(obs, prior, s, c, rng).x_map;
  const Eigen::Vector2d ls = (a.transpose() * a).ldlt().solve(a.transpose() * obs.y);
  EXPECT_LE((x - ls).norm(), 1e-3);
}

TEST(MapStage, ConsistentNoiselessStartStaysPut) {
  const Schedule s = default_schedule();
  const MixtureScore prior(GaussianMixture::standard(2), s);
  const Eigen::Vector2d x0(0.3, -1.1);
  const Observation obs(x0, LinearOperator::identity(2), 0.0);
  Stage1Config c;
  c.w = 1e-15;
  Rng rng(3);
  EXPECT_LE((map_stage(obs, prior, s, c, rng).x_map - x0).norm(), 1e-5);
}

TEST(MapStage, PlainAscentAlsoConverges) {
  const Schedule s = default_schedule();
  const MixtureScore prior(GaussianMixture::standard(1), s);
  Stage1Config c = auto_config(s, 1.0, 1.0);
  c.optimizer = Stage1Optimizer::kPlain;
  c.init = InitMode::kZero;
  Rng rng(4);
  EXPECT_NEAR(map_stage(identity_obs(1.0), prior, s, c, rng).x_map[0], 0.5, 5e-3);
}

TEST(MapStage, ObjectiveTraceSettlesInGaussianCase) {
  const Schedule s = default_schedule();
  const GaussianMixture g = GaussianMixture::standard(3);
  const MixtureScore prior(g, s);
  const Observation obs(Eigen::Vector3d(1.0, -0.5, 2.0), LinearOperator::identity(3), 1.0);
  const GaussianMixture post = gm_posterior(g, obs);
  Stage1Config c = auto_config(s, 1.0, 1.0);
  c.init = InitMode::kZero;
  Rng rng(5);
  const MapResult r = map_stage(obs, prior, s, c, rng, [&](const Eigen::VectorXd& x) { return post.logpdf(x); });
  const std::size_t start = r.trace.size() - r.trace.size() / 10;
  int drops = 0;
  double worst = 0.0;
  for (std::size_t i = start + 1; i < r.trace.size(); ++i) {
    if (r.trace[i] < r.trace[i - 1]) {
      ++drops;
      worst = std::max(worst, r.trace[i - 1] - r.trace[i]);
    }
  }
  EXPECT_EQ(drops, 0) << "largest drop " << worst << " from " << r.trace.back();
}

TEST(MapStage, NonFiniteIterateAborts) {
  const Schedule s = default_schedule();
  const MixtureScore prior(GaussianMixture::standard(1), s);
  Stage1Config c;
  c.optimizer = Stage1Optimizer::kPlain;
  c.eta0 = 1e300;
  c.eta_min = 1e299;
  Rng rng(6);
  try {
    map_stage(identity_obs(1e10), prior, s, c, rng);
    FAIL() << "expected NonFinite";
  } catch (const NonFinite& e) {
    EXPECT_NE(std::string(e.what()).find("iteration"), std::string::npos);
  }
}

TEST(RpsStage, TimeZeroIsNoOp) {
  const Schedule s = default_schedule();
  const MixtureScore post(GaussianMixture::standard(2), s);
  Rng rng(7);
  const Eigen::Vector2d x(0.4, -0.2);
  EXPECT_EQ(rps_stage(x, post, s, Stage2Config{}, rng), Eigen::VectorXd(x));
  Stage2Config bad;
  bad.t0 = 1001;
  EXPECT_THROW(rps_stage(x, post, s, bad, rng), OutOfRange);
}

TEST(RpsStage, FullRenoisingSamplesThePosterior) {
  const Schedule s = default_schedule();
  const GaussianPosterior post = gaussian_posterior(GaussianMixture::standard(1), identity_obs(1.0));
  const MixtureScore score(post.as_mixture(), s);
  Stage2Config c;
  c.t0 = 1000;
  Rng rng(8);
  const int n = 10000;
  std::vector<double> xs(static_cast<std::size_t>(n));
  for (auto& x : xs) x = rps_stage(v1(0.5), score, s, c, rng)[0];
  std::sort(xs.begin(), xs.end());
  const GaussianMixture law = post.as_mixture();
  double ks = 0.0;
  for (int i = 0; i < n; ++i) {
    const double f = mixture_cdf_1d(law, xs[static_cast<std::size_t>(i)]);
    ks = std::max({ks, std::abs(f - static_cast<double>(i) / n), std::abs(f - static_cast<double>(i + 1) / n)});
  }
  EXPECT_LE(ks, 0.02);
}

TEST(RpsStage, MomentsMatchLinearOracle) {
  const Schedule s = default_schedule();
  const GaussianPosterior post = gaussian_posterior(GaussianMixture::standard(1), identity_obs(1.0));
  const MixtureScore score(post.as_mixture(), s);
  const Eigen::VectorXd x_map = v1(0.5);
  for (int t0 : {300, 1000}) {
    Stage2Config c;
    c.t0 = t0;
    Rng rng(9 + static_cast<std::uint64_t>(t0));
    const int n = 100000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const double x = rps_stage(x_map, score, s, c, rng)[0];
      sum += x;
      sq += x * x;
    }
    const double mean = sum / n, var = sq / n - mean * mean;
    const GaussianMoments o = gaussian_stage2_oracle(post, s, x_map, t0);
    EXPECT_NEAR(mean, o.mean[0], 0.02 * std::abs(o.mean[0])) << "t0=" << t0;
    EXPECT_NEAR(var, o.cov(0, 0), 0.02 * o.cov(0, 0)) << "t0=" << t0;
    EXPECT_NEAR(mean, o.mean[0], 3.0 * std::sqrt(o.cov(0, 0) / n)) << "t0=" << t0;
  }
}

TEST(RpsStage, NoiseTableGivesCommonRandomNumbers) {
  const Schedule s = default_schedule();
  const MixtureScore score(GaussianMixture::standard(1), s);
  Rng a(10), b(10);
  const NoiseTable small(1, 400, a);
  const NoiseTable large(1, 1000, b);
  Stage2Config c;
  c.t0 = 400;
  EXPECT_EQ(rps_stage(v1(0.3), score, s, c, small)[0], rps_stage(v1(0.3), score, s, c, large)[0]);
}

TEST(RpsStage, StrideSumsSegments) {
  const Schedule s = default_schedule();
  const GaussianPosterior post{v1(0.5), m1(0.5)};
  const GaussianMoments fine = gaussian_stage2_oracle(post, s, v1(0.5), 1000, 1);
  const GaussianMoments coarse = gaussian_stage2_oracle(post, s, v1(0.5), 1000, 10);
  EXPECT_NEAR(coarse.mean[0], fine.mean[0], 0.05);
  EXPECT_NEAR(coarse.cov(0, 0), fine.cov(0, 0), 0.05);
}

TEST(MapRps, ComposesAndIsDeterministic) {
  const Schedule s = default_schedule();
  const MixtureScore prior(GaussianMixture::standard(1), s);
  const Observation obs = identity_obs(1.0);
  const MixtureScore post(gaussian_posterior(GaussianMixture::standard(1), obs).as_mixture(), s);
  const Stage1Config c1 = auto_config(s, 1.0, 1.0);
  Stage2Config c2;
  const RunRecord r0 = map_rps(obs, prior, post, s, c1, c2, 42);
  EXPECT_EQ(r0.x_final, r0.x_map);
  Rng r1 = derive_stream(42, {tag(StreamTag::kStage1)});
  EXPECT_EQ(map_stage(obs, prior, s, c1, r1).x_map, r0.x_map);
  c2.t0 = 600;
  const RunRecord a = map_rps(obs, prior, post, s, c1, c2, 42);
  const RunRecord b = map_rps(obs, prior, post, s, c1, c2, 42);
  EXPECT_EQ(a.x_map, b.x_map);
  EXPECT_EQ(a.x_final, b.x_final);
  EXPECT_EQ(a.stage1_objective_trace, b.stage1_objective_trace);
  EXPECT_EQ(a.stage1_objective_trace.size(), static_cast<std::size_t>(c1.iterations));
}

TEST(MapRps, RunningCaseEndpointAtTimeZero) {
  const Schedule s = default_schedule();
  const GaussianMixture prior = GaussianMixture::standard(1);
  const MixtureScore prior_score(prior, s);
  const Stage1Config c1 = auto_config(s, 1.0, 1.0);
  const int n = 10000;
  Eigen::MatrixXd out(1, n), ref(1, n);
  double se = 0.0;
  for (int i = 0; i < n; ++i) {
    Rng rng = derive_stream(7, {tag(StreamTag::kObservation), static_cast<std::uint64_t>(i)});
    const Eigen::VectorXd x = prior.sample(rng);
    const Observation obs = observe(LinearOperator::identity(1), 1.0, x, rng);
    Rng r1 = derive_stream(7, {tag(StreamTag::kStage1), static_cast<std::uint64_t>(i)});
    out(0, i) = map_stage(obs, prior_score, s, c1, r1).x_map[0];
    se += (out(0, i) - x[0]) * (out(0, i) - x[0]);
    ref(0, i) = prior.sample(rng)[0];
  }
  EXPECT_NEAR(se / n, 0.5, 0.03 * 0.5);
  const double p_star = 1.0 - std::sqrt(0.5);
  EXPECT_NEAR(w2_1d(SampleSet(out), SampleSet(ref)), p_star, 0.1 * p_star);
}

TEST(Bounds, Theorem35Examples) {
  EXPECT_NEAR(theorem35_bound(1.0, 0.3, 3, 2.0, 0.0), std::sqrt(3.0), 1e-15);
  EXPECT_NEAR(theorem35_bound(0.0, 0.5, 1, 2.0, 0.07), 0.07, 1e-15);
  EXPECT_NEAR(theorem35_bound(0.25, 0.5, 1, 2.0, 0.0), 0.5, 1e-15);
  const Schedule s = default_schedule();
  for (int t = 1; t <= 1000; ++t) {
    EXPECT_LE(theorem35_bound(s.alpha_bar(t), 0.6, 2, 1.5, 0.01), theorem35_bound(s.alpha_bar(t - 1), 0.6, 2, 1.5, 0.01));
  }
  EXPECT_NEAR(theorem32_bound(4, 1.0), 2.0, 1e-15);
}

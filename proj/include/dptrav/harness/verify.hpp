#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dptrav/errors.hpp"
#include "dptrav/harness/problem.hpp"
#include "dptrav/latent.hpp"
#include "dptrav/metrics.hpp"
#include "dptrav/posterior.hpp"
#include "dptrav/prior.hpp"
#include "dptrav/score.hpp"
#include "dptrav/solver.hpp"
#include "dptrav/w2.hpp"

namespace dptrav::harness {

enum class CheckStatus { kPass, kFail, kNotApplicable };

struct CheckResult {
  std::string name;
  CheckStatus status = CheckStatus::kNotApplicable;
  double measured = 0.0;
  double bound = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct VerifyReport {
  std::vector<CheckResult> checks;

  bool passed() const {
    return std::none_of(checks.begin(), checks.end(),
                        [](const CheckResult& c) { return c.status == CheckStatus::kFail; });
  }
};

inline const char* status_name(CheckStatus s) {
  switch (s) {
    case CheckStatus::kPass:
      return "PASS";
    case CheckStatus::kFail:
      return "FAIL";
    case CheckStatus::kNotApplicable:
      return "N/A";
  }
  return "?";
}

inline std::string format_check(const CheckResult& c) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "[%s] %s measured=%.6g bound=%.6g tol=%.3g%s%s", status_name(c.status), c.name.c_str(),
                c.measured, c.bound, c.tolerance, c.detail.empty() ? "" : " ", c.detail.c_str());
  return buf;
}

/// W2 between sampler outputs and a known mixture law: Gaussian closed form
/// on fitted moments for a single Gaussian, quantile coupling for 1D
/// mixtures, assignment against fresh exact samples otherwise.
inline double posterior_w2(const SampleSet& xs, const GaussianMixture& law, Rng& rng, Eigen::Index batch = 1024,
                           int reps = 8) {
  if (law.size() == 1) return w2_moment_fit(xs, law.mean(0), law.cov(0));
  if (xs.dim() == 1) {
    return w2_1d_to_quantile(xs, [&](double u) { return mixture_quantile_1d(law, u); });
  }
  const Eigen::Index m = std::min(batch, xs.size());
  const int r = static_cast<int>(std::max<Eigen::Index>(1, std::min<Eigen::Index>(reps, xs.size() / m)));
  Eigen::MatrixXd ref(xs.dim(), m * r);
  for (Eigen::Index j = 0; j < ref.cols(); ++j) ref.col(j) = law.sample(rng);
  return w2_batched(xs, SampleSet(std::move(ref)), m, r).mean;
}

/// Stage-2 outputs (model coordinates) for every t0, common noise per trial.
inline std::vector<SampleSet> stage2_samples(const Eigen::VectorXd& x_map, const ScoreModel& score, const Schedule& s,
                                             const Stage2Config& base, const std::vector<int>& t0_grid, int trials,
                                             std::uint64_t seed) {
  const int t_max = *std::max_element(t0_grid.begin(), t0_grid.end());
  std::vector<Eigen::MatrixXd> outs(t0_grid.size(), Eigen::MatrixXd(x_map.size(), trials));
  for (int i = 0; i < trials; ++i) {
    Rng rng = derive_stream(seed, {tag(StreamTag::kVerify), 2, static_cast<std::uint64_t>(i)});
    const NoiseTable noise(x_map.size(), t_max, rng);
    for (std::size_t k = 0; k < t0_grid.size(); ++k) {
      Stage2Config c = base;
      c.t0 = t0_grid[k];
      outs[k].col(i) = rps_stage(x_map, score, s, c, noise);
    }
  }
  std::vector<SampleSet> sets;
  for (auto& o : outs) sets.emplace_back(std::move(o));
  return sets;
}

namespace detail {

inline CheckResult na(const std::string& name, const std::string& why) {
  return {name, CheckStatus::kNotApplicable, 0.0, 0.0, 0.0, why};
}

inline CheckResult judge(const std::string& name, double measured, double bound, double tol, std::string det = {}) {
  return {name, measured <= bound + tol ? CheckStatus::kPass : CheckStatus::kFail, measured, bound, tol,
          std::move(det)};
}

inline bool isotropic(const Eigen::MatrixXd& c) {
  const double v = c.diagonal().mean();
  return (c - v * Eigen::MatrixXd::Identity(c.rows(), c.cols())).norm() <= 1e-12 * (1.0 + v);
}

}  // namespace detail

/// Prior-gradient identity: the mean of the estimator with the exact
/// coefficient (times w_scale) equals grad log p(x), within 3 standard errors.
inline std::vector<CheckResult> check_prior_gradient(const Problem& pb) {
  const auto& vs = pb.config().verify;
  std::vector<CheckResult> out;
  if (!pb.mixture() || pb.mixture()->size() != 1 || !detail::isotropic(pb.mixture()->cov(0))) {
    out.push_back(detail::na("thm33_prior_gradient", "needs an isotropic Gaussian prior"));
    return out;
  }
  const GaussianMixture& prior = *pb.mixture();
  const double var = prior.cov(0)(0, 0);
  const Eigen::Index n = prior.dim();
  for (double t1 : vs.t1_values) {
    if (!(t1 > 0.0 && t1 < pb.schedule().num_steps())) continue;
    const double w = vs.w_scale * prior_grad_coefficient(pb.schedule(), t1, gaussian_r2(pb.schedule(), t1, var));
    for (double pt : vs.points) {
      const Eigen::VectorXd x = Eigen::VectorXd::Constant(n, pt);
      const Eigen::VectorXd truth = prior.score(x);
      Rng rng = derive_stream(pb.config().seed, {tag(StreamTag::kVerify), 1, static_cast<std::uint64_t>(t1 * 1000),
                                                 static_cast<std::uint64_t>(std::llround((pt + 100.0) * 1000))});
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(n), sum2 = Eigen::VectorXd::Zero(n);
      for (int d = 0; d < vs.draws; ++d) {
        const Eigen::VectorXd g = prior_grad_estimate(pb.prior_score(), pb.schedule(), x, t1, w, rng);
        sum += g;
        sum2 += g.cwiseProduct(g);
      }
      const double nd = vs.draws;
      const Eigen::VectorXd mean = sum / nd;
      const Eigen::VectorXd se = ((sum2 / nd - mean.cwiseProduct(mean)).cwiseMax(0.0) / (nd - 1.0)).cwiseSqrt();
      const Eigen::VectorXd z = (mean - truth).cwiseAbs().cwiseQuotient(se.cwiseMax(1e-300));
      char det[96];
      std::snprintf(det, sizeof det, "t1=%g x=%g (in standard errors)", t1, pt);
      out.push_back(detail::judge("thm33_prior_gradient", z.maxCoeff(), 3.0, 0.0, det));
    }
  }
  return out;
}

/// Runs the theorem battery that applies to the configured problem.
inline VerifyReport verify(const ExperimentConfig& cfg) {
  const Problem pb(cfg);
  const Schedule& s = pb.schedule();
  VerifyReport rep;
  for (auto& c : check_prior_gradient(pb)) rep.checks.push_back(std::move(c));

  Rng orng = derive_stream(cfg.seed, {tag(StreamTag::kVerify), 0});
  const Eigen::VectorXd z_true = pb.sample_model(orng);
  const Observation obs = pb.observe_data(pb.to_data(z_true), orng);
  Rng r1 = derive_stream(cfg.seed, {tag(StreamTag::kVerify), 3});
  const Eigen::VectorXd z_map = pb.stage1(obs, r1).x_map;
  const LinearOperator* lin = as_linear(pb.op());
  const double sigma = cfg.observation.sigma_y;

  std::vector<int> grid = cfg.t0_grid;
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  if (pb.codec()) {
    const LinearCodec& codec = *pb.codec();
    if (pb.mixture()->size() != 1 || !(sigma > 0.0)) {
      rep.checks.push_back(detail::na("thm38_latent_map", "needs a Gaussian latent prior and sigma_y > 0"));
      rep.checks.push_back(detail::na("thm39_latent_w2", "needs a Gaussian latent prior and sigma_y > 0"));
      return rep;
    }
    const Observation lobs = latent_observation(codec, obs);
    const GaussianPosterior post = gaussian_posterior(*pb.mixture(), lobs);
    const double mu = strong_concavity_mu(*pb.mixture(), likelihood_curvature(lobs));
    const double ld = codec.lipschitz();
    const Eigen::Index d = codec.latent_dim();
    rep.checks.push_back(detail::judge("thm38_latent_map", (codec.decode(z_map) - codec.decode(post.mean)).norm(),
                                       theorem38_bound(d, mu, ld), 0.02));
    const double ls = cfg.verify.lipschitz_override.value_or(gaussian_score_lipschitz(post.cov, s).lipschitz);
    const MixtureScore score(post.as_mixture(), s);
    const auto sets = stage2_samples(z_map, score, s, cfg.stage2, grid, cfg.verify.trials, cfg.seed);
    const Eigen::VectorXd dm = codec.decode(post.mean);
    const Eigen::MatrixXd dc = codec.decode_matrix() * post.cov * codec.decode_matrix().transpose();
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const double w = w2_moment_fit(codec.decode(sets[k]), dm, dc);
      rep.checks.push_back(detail::judge("thm39_latent_w2", w, theorem39_bound(s.alpha_bar(grid[k]), ls, d, mu, ld, 0.0),
                                         0.0, "t0=" + std::to_string(grid[k])));
    }
    return rep;
  }

  // MAP-to-MMSE distance under strong log-concavity.
  std::optional<GaussianMixture> post;
  if (pb.mixture() && lin && sigma > 0.0) post = gm_posterior(*pb.mixture(), obs);
  if (post && post->size() == 1) {
    const double mu = strong_concavity_mu(*pb.mixture(), likelihood_curvature(obs));
    const Eigen::VectorXd m = post->mean(0);
    rep.checks.push_back(detail::judge("stage1_gaussian_exact", (z_map - m).norm() / (1.0 + m.norm()), 1e-2, 0.0));
    rep.checks.push_back(detail::judge("thm32_map_mmse", (z_map - m).norm(), theorem32_bound(m.size(), mu), 0.01));
  } else if (pb.grid() && lin && sigma > 0.0) {
    const GridPosteriorStats st = grid_posterior_stats(*pb.grid(), obs);
    if (st.mu) {
      rep.checks.push_back(detail::judge("thm32_map_mmse", (z_map - st.mmse).norm(),
                                         theorem32_bound(st.mmse.size(), *st.mu), 0.01));
    } else {
      rep.checks.push_back(detail::na("thm32_map_mmse", "posterior is not strongly log-concave on the grid"));
    }
  } else {
    rep.checks.push_back(detail::na("thm32_map_mmse", "needs a log-concave posterior oracle"));
  }

  if (!post || !pb.exact_posterior()) {
    rep.checks.push_back(detail::na("thm35_w2_bound", "needs the exact posterior score"));
    rep.checks.push_back(detail::na("cor36_measured_monotone", "needs the exact posterior score"));
    return rep;
  }

  const auto score = pb.posterior_score(obs);
  const auto sets = stage2_samples(z_map, *score, s, cfg.stage2, grid, cfg.verify.trials, cfg.seed);
  std::vector<double> measured;
  Rng wrng = derive_stream(cfg.seed, {tag(StreamTag::kVerify), 4});
  for (const auto& set : sets) measured.push_back(posterior_w2(set, *post, wrng));

  Rng erng = derive_stream(cfg.seed, {tag(StreamTag::kEndpoints)});
  const auto ends = problem_endpoints(pb, erng);
  const double slack = ends ? 0.02 * ends->p_star : 0.0;
  for (std::size_t k = 1; k < grid.size(); ++k) {
    rep.checks.push_back(detail::judge("cor36_measured_monotone", measured[k], measured[k - 1], slack,
                                       "t0=" + std::to_string(grid[k - 1]) + "->" + std::to_string(grid[k])));
  }

  if (post->size() != 1) {
    rep.checks.push_back(detail::na("thm35_w2_bound", "needs a Gaussian posterior"));
    return rep;
  }
  const double mu = strong_concavity_mu(*pb.mixture(), likelihood_curvature(obs));
  const double ls = cfg.verify.lipschitz_override.value_or(gaussian_score_lipschitz(post->cov(0), s).lipschitz);
  const Eigen::Index n = pb.model_dim();
  std::vector<double> bounds;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    bounds.push_back(theorem35_bound(s.alpha_bar(grid[k]), ls, n, mu, 0.0));
    rep.checks.push_back(detail::judge("thm35_w2_bound", measured[k], bounds[k], 0.0, "t0=" + std::to_string(grid[k])));
  }
  if (ls >= 1.0) {
    rep.checks.push_back(detail::na("cor36_bound_monotone", "monotone regime not applicable (L_s >= 1)"));
  } else {
    for (std::size_t k = 1; k < grid.size(); ++k) {
      rep.checks.push_back(detail::judge("cor36_bound_monotone", bounds[k], bounds[k - 1], 1e-12,
                                         "t0=" + std::to_string(grid[k - 1]) + "->" + std::to_string(grid[k])));
    }
  }
  return rep;
}

}  // namespace dptrav::harness

#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/QR>

#include "dptrav/errors.hpp"
#include "dptrav/observation.hpp"
#include "dptrav/prior.hpp"
#include "dptrav/w2.hpp"

namespace dptrav {

struct GaussianPosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  GaussianMixture as_mixture() const { return GaussianMixture::gaussian(mean, cov); }
};

struct DpEndpoints {
  double d_star = 0.0;  // E|X - X_MMSE|^2
  double p_star = 0.0;  // W2(p_X, p_{X_MMSE})
};

namespace detail {

struct ConjugateUpdate {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  double log_evidence = 0.0;  // log N(y; A m, A C A^T + s^2 I)
};

/// Gain form of the conjugate update; stays well conditioned for tiny priors
/// and small noise.
inline ConjugateUpdate conjugate_update(const Eigen::VectorXd& m, const Eigen::MatrixXd& c,
                                        const Eigen::MatrixXd& a, const Eigen::VectorXd& y, double sigma_y) {
  const Eigen::Index rows = a.rows();
  const Eigen::MatrixXd ca_t = c * a.transpose();
  Eigen::MatrixXd s = a * ca_t;
  s.diagonal().array() += sigma_y * sigma_y;
  s = 0.5 * (s + s.transpose());
  const Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() != Eigen::Success) throw InvalidParameter("conjugate update: singular evidence covariance");
  const Eigen::VectorXd innov = y - a * m;
  ConjugateUpdate out;
  out.mean = m + ca_t * llt.solve(innov);
  out.cov = c - ca_t * llt.solve(ca_t.transpose());
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  const Eigen::VectorXd z = llt.matrixL().solve(innov);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  out.log_evidence = -0.5 * (static_cast<double>(rows) * std::log(2.0 * std::numbers::pi) + logdet + z.squaredNorm());
  return out;
}

inline const LinearOperator& require_linear(const Observation& obs, const char* who) {
  const auto* lin = obs.linear();
  if (lin == nullptr) throw Unsupported(std::string(who) + ": requires a linear operator");
  return *lin;
}

}  // namespace detail

/// Conjugate posterior: cov = (C^{-1} + A^T A / s^2)^{-1}, mean = cov (C^{-1} m + A^T y / s^2).
inline GaussianPosterior gaussian_posterior(const Eigen::VectorXd& prior_mean, const Eigen::MatrixXd& prior_cov,
                                            const Observation& obs) {
  const auto& lin = detail::require_linear(obs, "gaussian_posterior");
  detail::require(obs.sigma_y > 0.0, "gaussian_posterior: sigma_y must be positive");
  auto up = detail::conjugate_update(prior_mean, prior_cov, lin.matrix(), obs.y, obs.sigma_y);
  return {std::move(up.mean), std::move(up.cov)};
}

inline GaussianPosterior gaussian_posterior(const GaussianMixture& prior, const Observation& obs) {
  if (prior.size() != 1) throw InvalidParameter("gaussian_posterior: prior must have one component");
  return gaussian_posterior(prior.mean(0), prior.cov(0), obs);
}

/// Componentwise conjugacy; weights proportional to w_k N(y; A m_k, A C_k A^T + s^2 I).
inline GaussianMixture gm_posterior(const GaussianMixture& prior, const Observation& obs) {
  const auto& lin = detail::require_linear(obs, "gm_posterior");
  detail::require(obs.sigma_y > 0.0, "gm_posterior: sigma_y must be positive");
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;
  Eigen::VectorXd logw(static_cast<Eigen::Index>(prior.size()));
  for (std::size_t k = 0; k < prior.size(); ++k) {
    auto up = detail::conjugate_update(prior.mean(k), prior.cov(k), lin.matrix(), obs.y, obs.sigma_y);
    logw[static_cast<Eigen::Index>(k)] = prior.log_weights()[static_cast<Eigen::Index>(k)] + up.log_evidence;
    means.push_back(std::move(up.mean));
    covs.push_back(std::move(up.cov));
  }
  Eigen::VectorXd w = (logw.array() - detail::log_sum_exp(logw)).exp().matrix();
  w /= w.sum();
  return GaussianMixture(std::move(w), std::move(means), std::move(covs));
}

inline Eigen::VectorXd mmse(const GaussianMixture& post) { return post.mixture_mean(); }
inline Eigen::VectorXd mmse(const GaussianPosterior& post) { return post.mean; }

struct ModeSearch {
  Eigen::VectorXd x;
  double log_density = 0.0;
  bool converged = false;
  int iterations = 0;
};

/// Damped Newton ascent on log p from every component mean and the mixture
/// mean; keeps the highest-density end point (ties: lowest start index).
/// Falls back to a gradient direction where -Hess is not positive definite.
inline ModeSearch map_point(const GaussianMixture& post, int max_iter = 200, double grad_tol = 1e-10) {
  std::vector<Eigen::VectorXd> starts(post.means());
  starts.push_back(post.mixture_mean());
  std::optional<ModeSearch> best;
  for (const auto& start : starts) {
    ModeSearch run{start, post.logpdf(start), false, 0};
    for (; run.iterations < max_iter; ++run.iterations) {
      const Eigen::VectorXd g = post.score(run.x);
      if (g.norm() < grad_tol) {
        run.converged = true;
        break;
      }
      const Eigen::MatrixXd neg_h = -post.hessian(run.x);
      const Eigen::LLT<Eigen::MatrixXd> llt(neg_h);
      const Eigen::VectorXd dir = llt.info() == Eigen::Success ? Eigen::VectorXd(llt.solve(g)) : g;
      double step = 1.0;
      bool moved = false;
      while (step > 1e-16) {
        const Eigen::VectorXd cand = run.x + step * dir;
        const double lp = post.logpdf(cand);
        if (lp >= run.log_density) {
          moved = lp > run.log_density || (cand - run.x).norm() > 0.0;
          run.x = cand;
          run.log_density = lp;
          break;
        }
        step *= 0.5;
      }
      if (!moved) {
        run.converged = post.score(run.x).norm() < 1e-6;
        break;
      }
    }
    if (!best || run.log_density > best->log_density) best = run;
  }
  return *best;
}

inline Eigen::VectorXd map_point(const GaussianPosterior& post) { return post.mean; }

/// Closed-form endpoints for a single Gaussian prior under a linear model.
inline DpEndpoints dp_endpoints_gaussian(const GaussianMixture& prior, const LinearOperator& op, double sigma_y) {
  if (prior.size() != 1) throw InvalidParameter("dp_endpoints_gaussian: prior must have one component");
  detail::require(sigma_y >= 0.0, "dp_endpoints: sigma_y must be >= 0");
  const Eigen::MatrixXd& c = prior.cov(0);
  const Eigen::MatrixXd& a = op.matrix();
  const Eigen::MatrixXd ca_t = c * a.transpose();
  Eigen::MatrixXd s = a * ca_t;
  s.diagonal().array() += sigma_y * sigma_y;
  const Eigen::MatrixXd s_pinv = s.completeOrthogonalDecomposition().pseudoInverse();
  // Cov(X_MMSE) = C A^T S^+ A C; posterior covariance is its complement.
  Eigen::MatrixXd explained = ca_t * s_pinv * ca_t.transpose();
  explained = 0.5 * (explained + explained.transpose());
  const Eigen::MatrixXd post_cov = c - explained;
  DpEndpoints e;
  e.d_star = std::max(post_cov.trace(), 0.0);
  e.p_star = w2_gaussian(prior.mean(0), c, prior.mean(0), explained);
  return e;
}

struct EndpointOptions {
  int n_mc = 10000;          // y-draws for D*
  Eigen::Index w2_samples = 2048;
  int w2_reps = 8;
};

/// D* = E[tr Cov(X|Y)] and P* = W2(p_X, p_{X_MMSE}); closed form for a single
/// Gaussian, Monte-Carlo for mixtures.
inline DpEndpoints dp_endpoints(const GaussianMixture& prior, const LinearOperator& op, double sigma_y, Rng& rng,
                                const EndpointOptions& opt = {}) {
  if (prior.size() == 1) return dp_endpoints_gaussian(prior, op, sigma_y);
  detail::require(opt.n_mc >= 1, "dp_endpoints: n_mc must be positive");
  auto posterior_for = [&](const Eigen::VectorXd& x) {
    return gm_posterior(prior, observe(op, sigma_y, x, rng));
  };
  double trace_sum = 0.0;
  for (int i = 0; i < opt.n_mc; ++i) trace_sum += posterior_for(prior.sample(rng)).mixture_cov().trace();
  DpEndpoints e;
  e.d_star = trace_sum / opt.n_mc;
  std::vector<double> reps;
  for (int r = 0; r < opt.w2_reps; ++r) {
    Eigen::MatrixXd px(prior.dim(), opt.w2_samples), pm(prior.dim(), opt.w2_samples);
    for (Eigen::Index j = 0; j < opt.w2_samples; ++j) px.col(j) = prior.sample(rng);
    for (Eigen::Index j = 0; j < opt.w2_samples; ++j) pm.col(j) = mmse(posterior_for(prior.sample(rng)));
    reps.push_back(w2_empirical(SampleSet(std::move(px)), SampleSet(std::move(pm))));
  }
  e.p_star = mean_stderr(reps).mean;
  return e;
}

/// D(P) = D* + [(P* - P) v 0]^2.
inline double ideal_curve(const DpEndpoints& e, double p) {
  detail::require(p >= 0.0, "ideal_curve: P must be >= 0");
  const double gap = std::max(e.p_star - p, 0.0);
  return e.d_star + gap * gap;
}

/// (1 - P/P*) x_perceptual + (P/P*) x_mmse.
inline Eigen::VectorXd interpolated_estimator(const Eigen::VectorXd& x_perceptual, const Eigen::VectorXd& x_mmse,
                                              double p, double p_star) {
  if (!(p_star > 0.0)) throw InvalidParameter("interpolated_estimator: P* must be positive");
  detail::require(p >= 0.0 && p <= p_star, "interpolated_estimator: need 0 <= P <= P*");
  const double lam = p / p_star;
  return (1.0 - lam) * x_perceptual + lam * x_mmse;
}

struct GridPosteriorStats {
  Eigen::VectorXd mmse;
  Eigen::VectorXd map;
  std::optional<double> mu;  // empty when the posterior is not log-concave on the grid
  double posterior_variance_trace = 0.0;
};

/// Quadrature oracle for posteriors built on a grid prior (1D or 2D).
inline GridPosteriorStats grid_posterior_stats(const GridPrior& prior, const Observation& obs,
                                               double leak_tol = 1e-9) {
  detail::require(obs.sigma_y > 0.0, "grid_posterior_stats: sigma_y must be positive");
  detail::require(obs.data_dim() == prior.dim(), "grid_posterior_stats: dimension mismatch");
  const std::size_t nn = prior.node_count();
  std::vector<double> lp(nn);
  double mx = -std::numeric_limits<double>::infinity();
  const double inv2s2 = 0.5 / (obs.sigma_y * obs.sigma_y);
  for (std::size_t i = 0; i < nn; ++i) {
    lp[i] = prior.log_density()[i] - inv2s2 * residual(obs, prior.node_point(i)).squaredNorm();
    mx = std::max(mx, lp[i]);
  }
  double z = 0.0;
  for (std::size_t i = 0; i < nn; ++i) z += prior.node_weight(i) * std::exp(lp[i] - mx);
  const double log_z = mx + std::log(z);

  const int d = prior.dim();
  const GridAxis& ax = prior.axis();
  const int edge = std::max(1, ax.points / 100);
  auto near_edge = [&](std::size_t idx) {
    const Eigen::VectorXd p = prior.node_point(idx);
    const double band = edge * ax.step();
    return ((p.array() < ax.lo + band) || (p.array() > ax.hi - band)).any();
  };

  GridPosteriorStats st;
  st.mmse = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(d);
  double leak = 0.0;
  std::size_t arg = 0;
  for (std::size_t i = 0; i < nn; ++i) {
    lp[i] -= log_z;
    const double w = prior.node_weight(i) * std::exp(lp[i]);
    const Eigen::VectorXd p = prior.node_point(i);
    st.mmse += w * p;
    m2 += w * p.cwiseProduct(p);
    if (near_edge(i)) leak += w;
    if (lp[i] > lp[arg]) arg = i;
  }
  if (leak > leak_tol) throw GridLeak("grid_posterior_stats: posterior mass leaks outside the grid");
  st.posterior_variance_trace = (m2 - st.mmse.cwiseProduct(st.mmse)).sum();

  // Parabolic refinement of the grid argmax along each axis.
  st.map = prior.node_point(arg);
  const auto n = static_cast<std::size_t>(ax.points);
  const std::size_t stride[2] = {d == 1 ? std::size_t{1} : n, 1};
  for (int axis_i = 0; axis_i < d; ++axis_i) {
    const std::size_t s = stride[axis_i];
    if (arg < s || arg + s >= nn) continue;
    const double fm = lp[arg - s], f0 = lp[arg], fp = lp[arg + s];
    const double denom = fm - 2.0 * f0 + fp;
    if (denom < 0.0) st.map[axis_i] += 0.5 * ax.step() * (fm - fp) / denom;
  }

  // Curvature of the negative log-posterior by central differences.
  double mu = std::numeric_limits<double>::infinity();
  const double h = ax.step();
  for (std::size_t i = 0; i < nn; ++i) {
    if (!prior.is_interior(i)) continue;
    Eigen::MatrixXd hs(d, d);
    if (d == 1) {
      hs(0, 0) = -(lp[i - 1] - 2.0 * lp[i] + lp[i + 1]) / (h * h);
    } else {
      auto at = [&](std::size_t r, std::size_t c) { return lp[r * n + c]; };
      const std::size_t r = i / n, c = i % n;
      hs(0, 0) = -(at(r - 1, c) - 2.0 * at(r, c) + at(r + 1, c)) / (h * h);
      hs(1, 1) = -(at(r, c - 1) - 2.0 * at(r, c) + at(r, c + 1)) / (h * h);
      hs(0, 1) = hs(1, 0) = -(at(r + 1, c + 1) - at(r + 1, c - 1) - at(r - 1, c + 1) + at(r - 1, c - 1)) / (4.0 * h * h);
    }
    const double lam = d == 1 ? hs(0, 0)
                              : Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(hs, Eigen::EigenvaluesOnly)
                                    .eigenvalues()
                                    .minCoeff();
    mu = std::min(mu, lam);
  }
  if (mu > 0.0) st.mu = mu;
  return st;
}

/// A^T A / sigma_y^2 for linear observations.
inline Eigen::MatrixXd likelihood_curvature(const Observation& obs) {
  const auto& lin = detail::require_linear(obs, "likelihood_curvature");
  detail::require(obs.sigma_y > 0.0, "likelihood_curvature: sigma_y must be positive");
  return lin.matrix().transpose() * lin.matrix() / (obs.sigma_y * obs.sigma_y);
}

}  // namespace dptrav

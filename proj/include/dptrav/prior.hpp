#pragma once

#include <algorithm>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "dptrav/gaussian_mixture.hpp"
#include "dptrav/grid_prior.hpp"

namespace dptrav {

/// Largest mu with -Hess log p(x|y) >= mu I for a single Gaussian prior,
/// i.e. lambda_min(C^{-1} + likelihood_curvature).
inline double strong_concavity_mu(const GaussianMixture& prior, const Eigen::MatrixXd& likelihood_curvature) {
  if (prior.size() != 1) throw Unsupported("strong_concavity_mu: mixture priors are not log-concave in general");
  detail::require(likelihood_curvature.rows() == prior.dim() && likelihood_curvature.cols() == prior.dim(),
                  "strong_concavity_mu: curvature dimension mismatch");
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(prior.dim(), prior.dim());
  const Eigen::MatrixXd precision = prior.factor(0).llt.solve(eye) + likelihood_curvature;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (precision + precision.transpose()));
  const double mu = es.eigenvalues().minCoeff();
  if (!(mu > 0.0)) throw NotLogConcave("strong_concavity_mu: posterior is not strongly log-concave");
  return mu;
}

/// Same for a grid prior; the minimum runs over interior nodes, with the
/// prior Hessian from central differences of the tabulated log-density.
inline double strong_concavity_mu(const GridPrior& prior, const Eigen::MatrixXd& likelihood_curvature) {
  detail::require(likelihood_curvature.rows() == prior.dim() && likelihood_curvature.cols() == prior.dim(),
                  "strong_concavity_mu: curvature dimension mismatch");
  double mu = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < prior.node_count(); ++i) {
    if (!prior.is_interior(i)) continue;
    const Eigen::MatrixXd neg_h = -prior.node_log_hessian(i) + likelihood_curvature;
    const double lam = neg_h.rows() == 1 ? neg_h(0, 0)
                                         : Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(neg_h, Eigen::EigenvaluesOnly)
                                               .eigenvalues()
                                               .minCoeff();
    if (!(lam > 0.0)) throw NotLogConcave("strong_concavity_mu: -Hess log p has a non-positive eigenvalue");
    mu = std::min(mu, lam);
  }
  return mu;
}

}  // namespace dptrav

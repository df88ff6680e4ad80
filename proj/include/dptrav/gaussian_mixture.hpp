#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "dptrav/errors.hpp"
#include "dptrav/rng.hpp"
#include "dptrav/schedule.hpp"

namespace dptrav {

namespace detail {

inline double log_sum_exp(const Eigen::VectorXd& a) {
  const double mx = a.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((a.array() - mx).exp().sum());
}

/// Cholesky factor plus the Gaussian log-normalizer -(n log 2pi + log det C)/2.
struct GaussianFactor {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double log_norm = 0.0;

  explicit GaussianFactor(const Eigen::MatrixXd& cov) : llt(cov) {
    if (llt.info() != Eigen::Success) throw InvalidParameter("covariance is not SPD");
    const Eigen::VectorXd diag = llt.matrixL().toDenseMatrix().diagonal();
    if ((diag.array() <= 0.0).any()) throw InvalidParameter("covariance is not SPD");
    const double logdet = 2.0 * diag.array().log().sum();
    log_norm = -0.5 * (static_cast<double>(cov.rows()) * std::log(2.0 * std::numbers::pi) + logdet);
  }
};

}  // namespace detail

/// Finite Gaussian mixture sum_k w_k N(m_k, C_k) on R^n.
///
/// Densities are evaluated in log space; zero-weight components are inert.
class GaussianMixture {
 public:
  GaussianMixture(Eigen::VectorXd weights, std::vector<Eigen::VectorXd> means,
                  std::vector<Eigen::MatrixXd> covs)
      : weights_(std::move(weights)), means_(std::move(means)), covs_(std::move(covs)) {
    const auto k = static_cast<std::size_t>(weights_.size());
    detail::require(k >= 1, "mixture: need at least one component");
    detail::require(means_.size() == k && covs_.size() == k, "mixture: size mismatch");
    detail::require((weights_.array() >= 0.0).all(), "mixture: negative weight");
    detail::require(std::abs(weights_.sum() - 1.0) <= 1e-12, "mixture: weights must sum to 1");
    const Eigen::Index n = means_[0].size();
    detail::require(n >= 1, "mixture: empty dimension");
    factors_.reserve(k);
    log_weights_.resize(weights_.size());
    for (std::size_t i = 0; i < k; ++i) {
      detail::require(means_[i].size() == n && covs_[i].rows() == n && covs_[i].cols() == n,
                      "mixture: component dimension mismatch");
      detail::require((covs_[i] - covs_[i].transpose()).norm() <= 1e-12 * (1.0 + covs_[i].norm()),
                      "mixture: covariance not symmetric");
      factors_.emplace_back(covs_[i]);
      log_weights_[static_cast<Eigen::Index>(i)] =
          weights_[static_cast<Eigen::Index>(i)] > 0.0
              ? std::log(weights_[static_cast<Eigen::Index>(i)])
              : -std::numeric_limits<double>::infinity();
    }
  }

  static GaussianMixture gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov) {
    return GaussianMixture(Eigen::VectorXd::Ones(1), {std::move(mean)}, {std::move(cov)});
  }

  static GaussianMixture standard(Eigen::Index n) {
    return gaussian(Eigen::VectorXd::Zero(n), Eigen::MatrixXd::Identity(n, n));
  }

  Eigen::Index dim() const { return means_[0].size(); }
  std::size_t size() const { return means_.size(); }
  const Eigen::VectorXd& weights() const { return weights_; }
  const Eigen::VectorXd& log_weights() const { return log_weights_; }
  const Eigen::VectorXd& mean(std::size_t k) const { return means_[k]; }
  const Eigen::MatrixXd& cov(std::size_t k) const { return covs_[k]; }
  const std::vector<Eigen::VectorXd>& means() const { return means_; }
  const std::vector<Eigen::MatrixXd>& covs() const { return covs_; }
  const detail::GaussianFactor& factor(std::size_t k) const { return factors_[k]; }

  double component_log_density(std::size_t k, const Eigen::VectorXd& x) const {
    const Eigen::VectorXd z = factors_[k].llt.matrixL().solve(x - means_[k]);
    return factors_[k].log_norm - 0.5 * z.squaredNorm();
  }

  /// log w_k + log N(x; m_k, C_k) for every k.
  Eigen::VectorXd joint_log_terms(const Eigen::VectorXd& x) const {
    Eigen::VectorXd a(weights_.size());
    for (std::size_t k = 0; k < size(); ++k) {
      const auto ki = static_cast<Eigen::Index>(k);
      a[ki] = std::isfinite(log_weights_[ki]) ? log_weights_[ki] + component_log_density(k, x)
                                              : log_weights_[ki];
    }
    return a;
  }

  double logpdf(const Eigen::VectorXd& x) const {
    check_dim(x);
    return detail::log_sum_exp(joint_log_terms(x));
  }

  Eigen::VectorXd responsibilities(const Eigen::VectorXd& x) const {
    check_dim(x);
    const Eigen::VectorXd a = joint_log_terms(x);
    const double lse = detail::log_sum_exp(a);
    return (a.array() - lse).exp().matrix();
  }

  /// grad log p(x) = sum_k r_k(x) * (-C_k^{-1} (x - m_k)).
  Eigen::VectorXd score(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd r = responsibilities(x);
    Eigen::VectorXd s = Eigen::VectorXd::Zero(dim());
    for (std::size_t k = 0; k < size(); ++k) {
      const double rk = r[static_cast<Eigen::Index>(k)];
      if (rk == 0.0) continue;
      s.noalias() -= rk * factors_[k].llt.solve(x - means_[k]);
    }
    return s;
  }

  /// Hessian of log p: sum r_k (s_k s_k^T - P_k) - s s^T.
  Eigen::MatrixXd hessian(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd r = responsibilities(x);
    const Eigen::Index n = dim();
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd s = Eigen::VectorXd::Zero(n);
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
    for (std::size_t k = 0; k < size(); ++k) {
      const double rk = r[static_cast<Eigen::Index>(k)];
      if (rk == 0.0) continue;
      const Eigen::VectorXd sk = -factors_[k].llt.solve(x - means_[k]);
      h.noalias() += rk * (sk * sk.transpose() - factors_[k].llt.solve(eye));
      s.noalias() += rk * sk;
    }
    h.noalias() -= s * s.transpose();
    return 0.5 * (h + h.transpose());
  }

  Eigen::VectorXd sample(Rng& rng) const {
    std::size_t k = 0;
    if (size() > 1) {
      std::discrete_distribution<std::size_t> pick(weights_.data(), weights_.data() + weights_.size());
      k = pick(rng);
    }
    return means_[k] + factors_[k].llt.matrixL() * standard_normal_vector(dim(), rng);
  }

  Eigen::VectorXd mixture_mean() const {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(dim());
    for (std::size_t k = 0; k < size(); ++k) m += weights_[static_cast<Eigen::Index>(k)] * means_[k];
    return m;
  }

  /// Law of total variance.
  Eigen::MatrixXd mixture_cov() const {
    const Eigen::VectorXd m = mixture_mean();
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(dim(), dim());
    for (std::size_t k = 0; k < size(); ++k) {
      const Eigen::VectorXd d = means_[k] - m;
      c += weights_[static_cast<Eigen::Index>(k)] * (covs_[k] + d * d.transpose());
    }
    return c;
  }

  /// Exact law of X_t: each component maps to N(sqrt(a) m, a C + (1 - a) I).
  GaussianMixture diffuse(const Schedule& s, double t) const {
    const double ab = s.alpha_bar(t);
    if (ab == 1.0) return *this;
    std::vector<Eigen::VectorXd> m;
    std::vector<Eigen::MatrixXd> c;
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(dim(), dim());
    for (std::size_t k = 0; k < size(); ++k) {
      m.push_back(std::sqrt(ab) * means_[k]);
      c.push_back(ab * covs_[k] + (1.0 - ab) * eye);
    }
    return GaussianMixture(weights_, std::move(m), std::move(c));
  }

 private:
  void check_dim(const Eigen::VectorXd& x) const {
    if (x.size() != dim()) throw InvalidParameter("mixture: query dimension mismatch");
  }

  Eigen::VectorXd weights_;
  Eigen::VectorXd log_weights_;
  std::vector<Eigen::VectorXd> means_;
  std::vector<Eigen::MatrixXd> covs_;
  std::vector<detail::GaussianFactor> factors_;
};

}  // namespace dptrav

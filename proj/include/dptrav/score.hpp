#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "dptrav/errors.hpp"
#include "dptrav/observation.hpp"
#include "dptrav/posterior.hpp"
#include "dptrav/prior.hpp"
#include "dptrav/rng.hpp"
#include "dptrav/schedule.hpp"

namespace dptrav {

/// Evaluator of grad log p_t(x_t) (prior or conditional) along the VP path.
class ScoreModel {
 public:
  virtual ~ScoreModel() = default;

  virtual Eigen::Index dim() const = 0;
  virtual Eigen::VectorXd score(const Eigen::VectorXd& x, double t) const = 0;

  /// d score / d x; central differences unless a closed form is available.
  virtual Eigen::MatrixXd score_jacobian(const Eigen::VectorXd& x, double t) const {
    const Eigen::Index n = dim();
    Eigen::MatrixXd j(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double h = 1e-5 * std::max(1.0, std::abs(x[i]));
      Eigen::VectorXd xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      j.col(i) = (score(xp, t) - score(xm, t)) / (2.0 * h);
    }
    return 0.5 * (j + j.transpose());
  }

  Eigen::VectorXd operator()(const Eigen::VectorXd& x, double t) const { return score(x, t); }
};

/// Per-grid-time factorizations of a(t) C_k + (1 - a(t)) I for a fixed set of
/// component covariances. Only depends on covariances, so every posterior
/// sharing them (same prior, operator, noise level) can reuse one table.
class DiffusedCovTable {
 public:
  struct Entry {
    Eigen::MatrixXd precision;
    double log_norm = 0.0;
  };

  DiffusedCovTable(std::vector<Eigen::MatrixXd> covs, const Schedule& s)
      : covs_(std::move(covs)), sqrt_ab_(static_cast<std::size_t>(s.num_steps()) + 1) {
    detail::require(!covs_.empty(), "cov table: no components");
    const Eigen::Index n = covs_[0].rows();
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
    entries_.reserve(sqrt_ab_.size() * covs_.size());
    for (int t = 0; t <= s.num_steps(); ++t) {
      const double ab = s.alpha_bar(t);
      sqrt_ab_[static_cast<std::size_t>(t)] = std::sqrt(ab);
      for (const auto& c : covs_) entries_.push_back(make_entry(ab * c + (1.0 - ab) * eye));
    }
  }

  static Entry make_entry(const Eigen::MatrixXd& cov) {
    const detail::GaussianFactor f(cov);
    return {f.llt.solve(Eigen::MatrixXd::Identity(cov.rows(), cov.cols())), f.log_norm};
  }

  std::size_t components() const { return covs_.size(); }
  Eigen::Index dim() const { return covs_[0].rows(); }
  int num_steps() const { return static_cast<int>(sqrt_ab_.size()) - 1; }
  const std::vector<Eigen::MatrixXd>& covs() const { return covs_; }
  double sqrt_alpha_bar(int t) const { return sqrt_ab_[static_cast<std::size_t>(t)]; }
  const Entry& at(int t, std::size_t k) const {
    return entries_[static_cast<std::size_t>(t) * covs_.size() + k];
  }

 private:
  std::vector<Eigen::MatrixXd> covs_;
  std::vector<double> sqrt_ab_;
  std::vector<Entry> entries_;
};

/// Exact score of a VP-diffused Gaussian mixture (prior or exact posterior).
class MixtureScore final : public ScoreModel {
 public:
  MixtureScore(const GaussianMixture& mixture, const Schedule& s)
      : MixtureScore(std::make_shared<const DiffusedCovTable>(mixture.covs(), s), mixture, s) {}

  /// Reuses a table built for the same covariances.
  MixtureScore(std::shared_ptr<const DiffusedCovTable> table, const GaussianMixture& mixture, const Schedule& s)
      : table_(std::move(table)), mixture_(mixture), schedule_(s) {
    detail::require(table_->components() == mixture_.size() && table_->dim() == mixture_.dim(),
                    "mixture score: table shape mismatch");
    for (std::size_t k = 0; k < mixture_.size(); ++k) {
      detail::require((table_->covs()[k] - mixture_.cov(k)).norm() <= 1e-9 * (1.0 + mixture_.cov(k).norm()),
                      "mixture score: table built for different covariances");
    }
  }

  Eigen::Index dim() const override { return mixture_.dim(); }
  const GaussianMixture& mixture() const { return mixture_; }
  const Schedule& schedule() const { return schedule_; }

  Eigen::VectorXd score(const Eigen::VectorXd& x, double t) const override {
    if (!is_grid_time(t)) return mixture_.diffuse(schedule_, t).score(x);
    const int ti = static_cast<int>(t);
    const double sa = table_->sqrt_alpha_bar(ti);
    const std::size_t kk = mixture_.size();
    if (kk == 1) return -(table_->at(ti, 0).precision * (x - sa * mixture_.mean(0)));
    Eigen::VectorXd logr(static_cast<Eigen::Index>(kk));
    std::vector<Eigen::VectorXd> sk(kk);
    for (std::size_t k = 0; k < kk; ++k) {
      const auto& e = table_->at(ti, k);
      const Eigen::VectorXd d = x - sa * mixture_.mean(k);
      sk[k] = -(e.precision * d);
      logr[static_cast<Eigen::Index>(k)] =
          mixture_.log_weights()[static_cast<Eigen::Index>(k)] + e.log_norm + 0.5 * d.dot(sk[k]);
    }
    const double lse = detail::log_sum_exp(logr);
    Eigen::VectorXd s = Eigen::VectorXd::Zero(x.size());
    for (std::size_t k = 0; k < kk; ++k) {
      const double r = std::exp(logr[static_cast<Eigen::Index>(k)] - lse);
      if (r > 0.0) s += r * sk[k];
    }
    return s;
  }

  Eigen::MatrixXd score_jacobian(const Eigen::VectorXd& x, double t) const override {
    return mixture_.diffuse(schedule_, t).hessian(x);
  }

 private:
  bool is_grid_time(double t) const {
    return t >= 0.0 && t <= table_->num_steps() && t == std::floor(t);
  }

  std::shared_ptr<const DiffusedCovTable> table_;
  GaussianMixture mixture_;
  Schedule schedule_;
};

/// Diffused score of a grid prior by quadrature.
class GridScore final : public ScoreModel {
 public:
  GridScore(GridPrior prior, Schedule s) : prior_(std::move(prior)), schedule_(std::move(s)) {}

  Eigen::Index dim() const override { return prior_.dim(); }
  const GridPrior& prior() const { return prior_; }

  Eigen::VectorXd score(const Eigen::VectorXd& x, double t) const override {
    return prior_.diffused_score(schedule_, t, x);
  }

 private:
  GridPrior prior_;
  Schedule schedule_;
};

inline Eigen::VectorXd grid_diffused_score(const GridPrior& p, const Schedule& s, double t, const Eigen::VectorXd& x) {
  return p.diffused_score(s, t, x);
}

/// eps-prediction view of a score: eps_hat = -sqrt(1 - a_t) * score.
inline Eigen::VectorXd epsilon_prediction(const ScoreModel& model, const Schedule& s, const Eigen::VectorXd& x,
                                          double t) {
  return -std::sqrt(1.0 - s.alpha_bar(t)) * model.score(x, t);
}

/// Tweedie posterior mean x0_hat = (x_t + (1 - a_t) score) / sqrt(a_t).
inline Eigen::VectorXd tweedie_denoise(const ScoreModel& model, const Schedule& s, const Eigen::VectorXd& x_t,
                                       double t) {
  const double ab = s.alpha_bar(t);
  if (ab < 1e-8) throw OutOfRange("tweedie_denoise: alpha_bar underflow");
  if (ab == 1.0) return x_t;
  return (x_t + (1.0 - ab) * model.score(x_t, t)) / std::sqrt(ab);
}

enum class DpsJacobian { kFull, kStopGrad };

/// DPS posterior score: prior score plus xi * grad_{x_t} log p(y | x0_hat(x_t)).
///
/// With sigma_y > 0 and the squared form the likelihood is normalized as
/// -|y - A x0|^2 / (2 sigma_y^2); otherwise the raw residual objective is used
/// and xi is the only weight. kFull differentiates through Tweedie with the
/// exact score Jacobian; kStopGrad uses d x0_hat / d x_t = I / sqrt(a_t).
class DpsScore final : public ScoreModel {
 public:
  DpsScore(std::shared_ptr<const ScoreModel> prior, Schedule s, Observation obs, double xi,
           DpsJacobian jac = DpsJacobian::kFull)
      : prior_(std::move(prior)), schedule_(std::move(s)), obs_(std::move(obs)), xi_(xi), jac_(jac) {
    detail::require(prior_ != nullptr, "dps: null prior score");
    detail::require(xi_ >= 0.0, "dps: xi must be >= 0");
    detail::require(obs_.data_dim() == prior_->dim(), "dps: dimension mismatch");
  }

  Eigen::Index dim() const override { return prior_->dim(); }

  Eigen::VectorXd score(const Eigen::VectorXd& x, double t) const override {
    Eigen::VectorXd s = prior_->score(x, t);
    if (xi_ == 0.0) return s;
    const double ab = schedule_.alpha_bar(t);
    const Eigen::VectorXd x0 =
        ab == 1.0 ? x : Eigen::VectorXd((x + (1.0 - ab) * s) / std::sqrt(std::max(ab, 1e-8)));
    Eigen::VectorXd g = loglik_grad(obs_, x0);
    if (obs_.form == LikelihoodForm::kSquared && obs_.sigma_y > 0.0) g /= 2.0 * obs_.sigma_y * obs_.sigma_y;
    if (ab == 1.0) return s + xi_ * g;
    const double inv_sa = 1.0 / std::sqrt(ab);
    if (jac_ == DpsJacobian::kStopGrad) return s + xi_ * inv_sa * g;
    const Eigen::MatrixXd h = prior_->score_jacobian(x, t);
    return s + xi_ * inv_sa * (g + (1.0 - ab) * (h.transpose() * g));
  }

 private:
  std::shared_ptr<const ScoreModel> prior_;
  Schedule schedule_;
  Observation obs_;
  double xi_;
  DpsJacobian jac_;
};

inline Eigen::VectorXd dps_score(std::shared_ptr<const ScoreModel> prior, const Schedule& s, const Observation& obs,
                                 const Eigen::VectorXd& x_t, double t, double xi,
                                 DpsJacobian jac = DpsJacobian::kFull) {
  return DpsScore(std::move(prior), s, obs, xi, jac).score(x_t, t);
}

/// Exact posterior score: the analytic score of the diffused posterior.
inline Eigen::VectorXd exact_posterior_score(const GaussianMixture& post, const Schedule& s,
                                             const Eigen::VectorXd& x_t, double t) {
  return post.diffuse(s, t).score(x_t);
}

inline Eigen::VectorXd exact_posterior_score(const GaussianPosterior& post, const Schedule& s,
                                             const Eigen::VectorXd& x_t, double t) {
  return exact_posterior_score(post.as_mixture(), s, x_t, t);
}

/// grad_{x_t} log p_t(y | x_t) from the joint Gaussian law of (X_t, Y) per
/// prior component, minus the diffused prior score.
inline Eigen::VectorXd exact_likelihood_score(const GaussianMixture& prior, const Observation& obs,
                                              const Schedule& s, const Eigen::VectorXd& x_t, double t) {
  const auto& lin = detail::require_linear(obs, "exact_likelihood_score");
  detail::require(obs.sigma_y > 0.0, "exact_likelihood_score: sigma_y must be positive");
  const double ab = s.alpha_bar(t);
  const double sa = std::sqrt(ab);
  const Eigen::MatrixXd& a = lin.matrix();
  const Eigen::Index n = prior.dim(), m = a.rows();
  Eigen::VectorXd z(n + m);
  z << x_t, obs.y;
  Eigen::VectorXd logr(static_cast<Eigen::Index>(prior.size()));
  std::vector<Eigen::VectorXd> grads;
  for (std::size_t k = 0; k < prior.size(); ++k) {
    const Eigen::MatrixXd& c = prior.cov(k);
    Eigen::MatrixXd joint(n + m, n + m);
    joint.topLeftCorner(n, n) = ab * c + (1.0 - ab) * Eigen::MatrixXd::Identity(n, n);
    joint.topRightCorner(n, m) = sa * c * a.transpose();
    joint.bottomLeftCorner(m, n) = joint.topRightCorner(n, m).transpose();
    joint.bottomRightCorner(m, m) = a * c * a.transpose();
    joint.bottomRightCorner(m, m).diagonal().array() += obs.sigma_y * obs.sigma_y;
    Eigen::VectorXd mu(n + m);
    mu << sa * prior.mean(k), a * prior.mean(k);
    const detail::GaussianFactor f(joint);
    const Eigen::VectorXd d = z - mu;
    const Eigen::VectorXd pd = f.llt.solve(d);
    logr[static_cast<Eigen::Index>(k)] = prior.log_weights()[static_cast<Eigen::Index>(k)] + f.log_norm - 0.5 * d.dot(pd);
    grads.push_back(-pd.head(n));
  }
  const Eigen::VectorXd r = (logr.array() - detail::log_sum_exp(logr)).exp().matrix();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
  for (std::size_t k = 0; k < prior.size(); ++k) g += r[static_cast<Eigen::Index>(k)] * grads[k];
  return g - prior.diffuse(s, t).score(x_t);
}

/// Coefficient (1 - a) / (r^2 sqrt(a)) turning E[score_{t1}] into grad log p_X.
inline double prior_grad_coefficient(const Schedule& s, double t1, double r2) {
  detail::require(r2 > 0.0, "prior_grad_coefficient: r^2 must be positive");
  const double ab = s.alpha_bar(t1);
  return (1.0 - ab) / (r2 * std::sqrt(ab));
}

/// Spread r^2 of X_0 | X_{t1} for an isotropic Gaussian prior of variance var.
inline double gaussian_r2(const Schedule& s, double t1, double var) {
  detail::require(var > 0.0, "gaussian_r2: variance must be positive");
  const double ab = s.alpha_bar(t1);
  return var * (1.0 - ab) / (ab * var + (1.0 - ab));
}

/// Stochastic prior-gradient estimate: w * mean_j score_{t1}(x_{t1}^{(j)}) with
/// x_{t1} ~ N(sqrt(a) x, (1 - a) I). All constants are absorbed into w; with
/// w = prior_grad_coefficient(...) its expectation is grad log p_X(x).
inline Eigen::VectorXd prior_grad_estimate(const ScoreModel& prior_score, const Schedule& s,
                                           const Eigen::VectorXd& x, double t1, double w, Rng& rng,
                                           int samples = 1) {
  if (!(t1 > 0.0 && t1 < s.num_steps())) throw OutOfRange("prior_grad_estimate: t1 must lie in (0, T)");
  detail::require(w > 0.0, "prior_grad_estimate: w must be positive");
  detail::require(samples >= 1, "prior_grad_estimate: need at least one sample");
  const double ab = s.alpha_bar(t1);
  const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(x.size());
  Eigen::VectorXd eps(x.size());
  for (int j = 0; j < samples; ++j) {
    fill_standard_normal(eps, rng);
    acc += prior_score.score(sa * x + sn * eps, t1);
  }
  return (w / samples) * acc;
}

struct ScoreLipschitz {
  double lipschitz = 0.0;  // sup_t |d score / dx|_op
  double one_sided = 0.0;  // sup_t sup <s(a) - s(b), a - b> / |a - b|^2
};

/// Both constants for the affine score of a diffused Gaussian N(m, C), over
/// the integer grid: eigenvalues of (a C + (1 - a) I)^{-1}.
inline ScoreLipschitz gaussian_score_lipschitz(const Eigen::MatrixXd& cov, const Schedule& s) {
  const Eigen::VectorXd lam = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(cov, Eigen::EigenvaluesOnly).eigenvalues();
  ScoreLipschitz out{0.0, -std::numeric_limits<double>::infinity()};
  for (int t = 0; t <= s.num_steps(); ++t) {
    const double ab = s.alpha_bar(t);
    const Eigen::ArrayXd prec = 1.0 / (ab * lam.array() + (1.0 - ab));
    out.lipschitz = std::max(out.lipschitz, prec.maxCoeff());
    out.one_sided = std::max(out.one_sided, -prec.minCoeff());
  }
  return out;
}

/// Empirical one-sided Lipschitz estimate over random pairs drawn around
/// `center` with isotropic spread, at the given times. Reported, not asserted.
inline double empirical_one_sided_lipschitz(const ScoreModel& model, const std::vector<double>& times,
                                            const Eigen::VectorXd& center, double spread, int pairs, Rng& rng) {
  double best = -std::numeric_limits<double>::infinity();
  for (int p = 0; p < pairs; ++p) {
    const double t = times[static_cast<std::size_t>(p) % times.size()];
    const Eigen::VectorXd a = center + spread * standard_normal_vector(center.size(), rng);
    const Eigen::VectorXd b = center + spread * standard_normal_vector(center.size(), rng);
    const Eigen::VectorXd d = a - b;
    const double dn = d.squaredNorm();
    if (dn == 0.0) continue;
    best = std::max(best, (model.score(a, t) - model.score(b, t)).dot(d) / dn);
  }
  return best;
}

}  // namespace dptrav

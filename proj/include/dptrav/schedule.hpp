#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dptrav/errors.hpp"
#include "dptrav/rng.hpp"

namespace dptrav {

/// Drift and squared diffusion of the VP forward SDE, per unit grid time.
struct SdeCoeffs {
  double f = 0.0;
  double g2 = 0.0;
};

/// Variance-preserving diffusion schedule on the integer grid t = 0..T.
///
/// Off-grid times interpolate log(alpha_bar) linearly, so alpha_bar stays
/// positive and f, g^2 are piecewise constant: on segment [k, k+1] with
/// b_k = log(abar_k) - log(abar_{k+1}) we get f = -b_k/2 and g^2 = b_k.
class Schedule {
 public:
  static constexpr double kLogFloor = 1e-12;

  /// alpha_bar[t] = prod_{s<=t} (1 - beta_s), beta_s evenly spaced.
  static Schedule linear(int num_steps, double beta_min, double beta_max) {
    detail::require(num_steps >= 2, "schedule: T must be >= 2");
    detail::require(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0,
                    "schedule: need 0 < beta_min <= beta_max < 1");
    std::vector<double> ab(static_cast<std::size_t>(num_steps) + 1);
    ab[0] = 1.0;
    double log_acc = 0.0;
    for (int s = 1; s <= num_steps; ++s) {
      const double beta =
          beta_min + (beta_max - beta_min) * static_cast<double>(s - 1) / (num_steps - 1);
      log_acc += std::log1p(-beta);
      ab[static_cast<std::size_t>(s)] = std::exp(log_acc);
    }
    return Schedule(std::move(ab));
  }

  /// Arbitrary tabulated schedule; must start at 1 and be non-increasing.
  static Schedule from_alpha_bar(std::vector<double> alpha_bar) {
    detail::require(alpha_bar.size() >= 3, "schedule: need at least T=2");
    detail::require(alpha_bar.front() == 1.0, "schedule: alpha_bar[0] must be 1");
    for (std::size_t i = 1; i < alpha_bar.size(); ++i) {
      detail::require(alpha_bar[i] <= alpha_bar[i - 1] && alpha_bar[i] >= 0.0,
                      "schedule: alpha_bar must be non-increasing in [0,1]");
    }
    return Schedule(std::move(alpha_bar));
  }

  int num_steps() const { return static_cast<int>(alpha_bar_.size()) - 1; }
  const std::vector<double>& alpha_bar_table() const { return alpha_bar_; }

  double alpha_bar(int t) const {
    check_range(t);
    return alpha_bar_[static_cast<std::size_t>(t)];
  }

  double alpha_bar(double t) const {
    check_range(t);
    const auto [k, frac] = locate(t);
    if (frac == 0.0) return alpha_bar_[k];
    return std::exp((1.0 - frac) * log_ab_[k] + frac * log_ab_[k + 1]);
  }

  /// Coefficients on the segment [k, k+1].
  SdeCoeffs segment_coeffs(int k) const {
    detail::require(k >= 0 && k < num_steps(), "schedule: segment index out of range");
    const double b = log_ab_[static_cast<std::size_t>(k)] - log_ab_[static_cast<std::size_t>(k) + 1];
    return {-0.5 * b, b};
  }

  /// Coefficients at t; the right segment is used on grid points except t = T.
  SdeCoeffs coeffs(double t) const {
    check_range(t);
    const auto [k, frac] = locate(t);
    (void)frac;
    return segment_coeffs(static_cast<int>(std::min<std::size_t>(k, alpha_bar_.size() - 2)));
  }

  /// Draws from N(sqrt(abar_t) x0, (1 - abar_t) I).
  Eigen::VectorXd forward_sample(const Eigen::VectorXd& x0, double t, Rng& rng) const {
    const double ab = alpha_bar(t);
    if (ab == 1.0) return x0;
    return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * standard_normal_vector(x0.size(), rng);
  }

 private:
  explicit Schedule(std::vector<double> ab) : alpha_bar_(std::move(ab)) {
    log_ab_.resize(alpha_bar_.size());
    for (std::size_t i = 0; i < alpha_bar_.size(); ++i) {
      log_ab_[i] = std::log(std::max(alpha_bar_[i], kLogFloor));
    }
  }

  void check_range(double t) const {
    if (!(t >= 0.0 && t <= static_cast<double>(num_steps()))) {
      throw OutOfRange("schedule: time " + std::to_string(t) + " outside [0, " +
                       std::to_string(num_steps()) + "]");
    }
  }

  std::pair<std::size_t, double> locate(double t) const {
    const double fl = std::floor(t);
    auto k = static_cast<std::size_t>(fl);
    if (k >= alpha_bar_.size() - 1) return {alpha_bar_.size() - 1, 0.0};
    return {k, t - fl};
  }

  std::vector<double> alpha_bar_;
  std::vector<double> log_ab_;
};

inline Schedule default_schedule() { return Schedule::linear(1000, 1e-4, 0.02); }

}  // namespace dptrav

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "dptrav/errors.hpp"
#include "dptrav/gaussian_mixture.hpp"
#include "dptrav/posterior.hpp"
#include "dptrav/schedule.hpp"
#include "dptrav/w2.hpp"

namespace dptrav {

struct DpCurvePoint {
  double t0 = 0.0;
  double distortion_mean = 0.0;
  std::optional<double> distortion_stderr;
  double w2 = 0.0;
  std::optional<double> w2_stderr;
  std::size_t n_trials = 0;
};

struct GaussianMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Exact law of the re-noised Euler-Maruyama chain driven by the exact score
/// of a Gaussian posterior N(m, C). The score is affine, so each step maps
/// (mean, cov) to (M mean + c, M cov M^T + b I).
inline GaussianMoments gaussian_stage2_oracle(const GaussianPosterior& post, const Schedule& s,
                                              const Eigen::VectorXd& x_map, int t0, int stride = 1) {
  if (t0 < 0 || t0 > s.num_steps()) throw OutOfRange("stage2 oracle: t0 outside [0, T]");
  detail::require(stride >= 1, "stage2 oracle: stride must be >= 1");
  const Eigen::Index n = x_map.size();
  detail::require(post.mean.size() == n, "stage2 oracle: dimension mismatch");
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
  if (t0 == 0) return {x_map, Eigen::MatrixXd::Zero(n, n)};
  const auto& ab = s.alpha_bar_table();
  const double a0 = ab[static_cast<std::size_t>(t0)];
  GaussianMoments g{std::sqrt(a0) * x_map, (1.0 - a0) * eye};
  for (int t = t0; t > 0;) {
    const int next = std::max(t - stride, 0);
    const double at = ab[static_cast<std::size_t>(t)];
    const double b = std::log(ab[static_cast<std::size_t>(next)]) - std::log(at);
    const Eigen::MatrixXd p = (at * post.cov + (1.0 - at) * eye).llt().solve(eye);
    const Eigen::MatrixXd m = (1.0 + 0.5 * b) * eye - b * p;
    g.mean = m * g.mean + b * std::sqrt(at) * (p * post.mean);
    g.cov = m * g.cov * m.transpose() + b * eye;
    g.cov = 0.5 * (g.cov + g.cov.transpose());
    t = next;
  }
  return g;
}

/// W2 between the Gaussian fit of a sample set and N(m, C).
inline double w2_moment_fit(const SampleSet& xs, const Eigen::VectorXd& m, const Eigen::MatrixXd& c) {
  return w2_gaussian(xs.mean(), xs.covariance(), m, c);
}

/// 1D mixture CDF.
inline double mixture_cdf_1d(const GaussianMixture& g, double x) {
  detail::require(g.dim() == 1, "mixture_cdf_1d: mixture must be one-dimensional");
  double acc = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    const double sd = std::sqrt(g.cov(k)(0, 0));
    acc += g.weights()[static_cast<Eigen::Index>(k)] * 0.5 * std::erfc(-(x - g.mean(k)[0]) / (sd * std::sqrt(2.0)));
  }
  return acc;
}

/// 1D mixture quantile by bisection.
inline double mixture_quantile_1d(const GaussianMixture& g, double u) {
  detail::require(u > 0.0 && u < 1.0, "mixture_quantile_1d: u must lie in (0, 1)");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t k = 0; k < g.size(); ++k) {
    const double sd = std::sqrt(g.cov(k)(0, 0));
    lo = std::min(lo, g.mean(k)[0] - 40.0 * sd);
    hi = std::max(hi, g.mean(k)[0] + 40.0 * sd);
  }
  for (int i = 0; i < 200 && hi - lo > 1e-13 * (1.0 + std::abs(lo) + std::abs(hi)); ++i) {
    const double mid = 0.5 * (lo + hi);
    (mixture_cdf_1d(g, mid) < u ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// W2 between a 1D empirical law and a law given by its quantile function,
/// coupling the i-th order statistic with the quantile at (i - 1/2) / m.
inline double w2_1d_to_quantile(const SampleSet& xs, const std::function<double(double)>& quantile) {
  detail::require(xs.dim() == 1 && xs.size() > 0, "w2_1d_to_quantile: need 1D samples");
  std::vector<double> v(xs.matrix().data(), xs.matrix().data() + xs.size());
  std::sort(v.begin(), v.end());
  const double m = static_cast<double>(v.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double q = quantile((static_cast<double>(i) + 0.5) / m);
    acc += (v[i] - q) * (v[i] - q);
  }
  return std::sqrt(acc / m);
}

}  // namespace dptrav

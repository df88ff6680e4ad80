#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <boost/math/interpolators/cardinal_cubic_b_spline.hpp>

#include "dptrav/errors.hpp"
#include "dptrav/rng.hpp"
#include "dptrav/schedule.hpp"

namespace dptrav {

/// Uniform lattice [lo, hi] with `points` nodes, shared by every axis.
struct GridAxis {
  double lo = -8.0;
  double hi = 8.0;
  int points = 4096;

  double step() const { return (hi - lo) / (points - 1); }
  double node(int i) const { return lo + step() * i; }
  double trapezoid_weight(int i) const {
    return (i == 0 || i == points - 1) ? 0.5 * step() : step();
  }
};

/// Tabulated, normalized log-density on a 1D or 2D uniform grid.
///
/// 2D tables are row-major: entry (i, j) sits at index i * points + j and
/// corresponds to the point (node(i), node(j)).
class GridPrior {
 public:
  static constexpr double kBoundaryDensity = 1e-12;

  static GridPrior tabulate_1d(const std::function<double(double)>& log_unnormalized,
                               GridAxis axis) {
    std::vector<double> table(static_cast<std::size_t>(axis.points));
    for (int i = 0; i < axis.points; ++i) table[static_cast<std::size_t>(i)] = log_unnormalized(axis.node(i));
    return GridPrior(1, axis, std::move(table));
  }

  static GridPrior tabulate_2d(const std::function<double(double, double)>& log_unnormalized,
                               GridAxis axis) {
    const auto n = static_cast<std::size_t>(axis.points);
    std::vector<double> table(n * n);
    for (int i = 0; i < axis.points; ++i)
      for (int j = 0; j < axis.points; ++j)
        table[static_cast<std::size_t>(i) * n + static_cast<std::size_t>(j)] =
            log_unnormalized(axis.node(i), axis.node(j));
    return GridPrior(2, axis, std::move(table));
  }

  /// exp(-|x|^2/2 - sum x_i^4/4) / Z; curvature 1 + 3 x_i^2 >= 1.
  static GridPrior quartic(int dim, GridAxis axis) {
    auto q = [](double v) { return -0.5 * v * v - 0.25 * v * v * v * v; };
    if (dim == 1) return tabulate_1d(q, axis);
    if (dim == 2) return tabulate_2d([&](double a, double b) { return q(a) + q(b); }, axis);
    throw InvalidParameter("grid prior: dimension must be 1 or 2");
  }

  static GridPrior quartic(int dim) { return quartic(dim, default_axis(dim)); }

  static GridPrior gaussian(int dim, double mean, double var, GridAxis axis) {
    detail::require(var > 0.0, "grid prior: variance must be positive");
    auto g = [=](double v) { return -0.5 * (v - mean) * (v - mean) / var; };
    if (dim == 1) return tabulate_1d(g, axis);
    if (dim == 2) return tabulate_2d([&](double a, double b) { return g(a) + g(b); }, axis);
    throw InvalidParameter("grid prior: dimension must be 1 or 2");
  }

  static GridAxis default_axis(int dim) { return GridAxis{-8.0, 8.0, dim == 1 ? 4096 : 256}; }

  int dim() const { return dim_; }
  const GridAxis& axis() const { return axis_; }
  const std::vector<double>& log_density() const { return log_density_; }
  std::size_t node_count() const { return log_density_.size(); }

  Eigen::VectorXd node_point(std::size_t idx) const {
    Eigen::VectorXd p(dim_);
    if (dim_ == 1) {
      p[0] = axis_.node(static_cast<int>(idx));
    } else {
      const auto n = static_cast<std::size_t>(axis_.points);
      p[0] = axis_.node(static_cast<int>(idx / n));
      p[1] = axis_.node(static_cast<int>(idx % n));
    }
    return p;
  }

  double node_weight(std::size_t idx) const {
    if (dim_ == 1) return axis_.trapezoid_weight(static_cast<int>(idx));
    const auto n = static_cast<std::size_t>(axis_.points);
    return axis_.trapezoid_weight(static_cast<int>(idx / n)) *
           axis_.trapezoid_weight(static_cast<int>(idx % n));
  }

  bool contains(const Eigen::VectorXd& x) const {
    if (x.size() != dim_) return false;
    return (x.array() >= axis_.lo).all() && (x.array() <= axis_.hi).all();
  }

  /// Per-coordinate variance averaged over coordinates (quadrature).
  double coordinate_variance() const {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(dim_);
    Eigen::VectorXd m2 = Eigen::VectorXd::Zero(dim_);
    for (std::size_t i = 0; i < node_count(); ++i) {
      const double w = node_weight(i) * std::exp(log_density_[i]);
      const Eigen::VectorXd p = node_point(i);
      m += w * p;
      m2 += w * p.cwiseProduct(p);
    }
    return (m2 - m.cwiseProduct(m)).mean();
  }

  /// Score of the VP-diffused density p_t at x.
  ///
  /// For t > 0 the convolution with the Gaussian kernel is done by trapezoid
  /// quadrature over the grid and differentiated under the integral sign.
  /// At t = 0 the tabulated log-density is differentiated directly (cubic
  /// spline in 1D, central differences with bilinear blending in 2D).
  Eigen::VectorXd diffused_score(const Schedule& s, double t, const Eigen::VectorXd& x) const {
    if (!contains(x)) throw OutOfRange("grid prior: query outside grid support");
    const double ab = s.alpha_bar(t);
    if (ab == 1.0) return tabulated_gradient(x);
    const double var = 1.0 - ab;
    const double sa = std::sqrt(ab);
    if (dim_ == 1) return Eigen::VectorXd::Constant(1, diffused_score_1d(sa, var, x[0]));
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> a(node_count());
    for (std::size_t i = 0; i < node_count(); ++i) {
      const Eigen::VectorXd u = node_point(i);
      a[i] = log_density_[i] + std::log(node_weight(i)) - 0.5 * (x - sa * u).squaredNorm() / var;
      mx = std::max(mx, a[i]);
    }
    double z = 0.0;
    Eigen::VectorXd num = Eigen::VectorXd::Zero(dim_);
    for (std::size_t i = 0; i < node_count(); ++i) {
      const double e = std::exp(a[i] - mx);
      if (e < 1e-300) continue;
      z += e;
      num -= e * (x - sa * node_point(i)) / var;
    }
    return num / z;
  }

  /// Hessian of the tabulated log-density at an interior node (central differences).
  Eigen::MatrixXd node_log_hessian(std::size_t idx) const {
    const double h = axis_.step();
    if (dim_ == 1) {
      Eigen::MatrixXd hs(1, 1);
      hs(0, 0) = (log_density_[idx - 1] - 2.0 * log_density_[idx] + log_density_[idx + 1]) / (h * h);
      return hs;
    }
    const auto n = static_cast<std::size_t>(axis_.points);
    auto at = [&](std::size_t i, std::size_t j) { return log_density_[i * n + j]; };
    const std::size_t i = idx / n, j = idx % n;
    Eigen::MatrixXd hs(2, 2);
    hs(0, 0) = (at(i - 1, j) - 2.0 * at(i, j) + at(i + 1, j)) / (h * h);
    hs(1, 1) = (at(i, j - 1) - 2.0 * at(i, j) + at(i, j + 1)) / (h * h);
    hs(0, 1) = hs(1, 0) =
        (at(i + 1, j + 1) - at(i + 1, j - 1) - at(i - 1, j + 1) + at(i - 1, j - 1)) / (4.0 * h * h);
    return hs;
  }

  /// Draw from the tabulated law: a node by quadrature mass, then uniform
  /// jitter within its cell.
  Eigen::VectorXd sample(Rng& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double r = u(rng) * cdf_->back();
    const auto it = std::upper_bound(cdf_->begin(), cdf_->end(), r);
    const auto idx = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cdf_->begin(), static_cast<std::ptrdiff_t>(cdf_->size()) - 1));
    Eigen::VectorXd p = node_point(idx);
    const double h = axis_.step();
    for (int k = 0; k < dim_; ++k) p[k] = std::clamp(p[k] + (u(rng) - 0.5) * h, axis_.lo, axis_.hi);
    return p;
  }

  bool is_interior(std::size_t idx) const {
    const auto n = static_cast<std::size_t>(axis_.points);
    if (dim_ == 1) return idx > 0 && idx + 1 < n;
    const std::size_t i = idx / n, j = idx % n;
    return i > 0 && j > 0 && i + 1 < n && j + 1 < n;
  }

 private:
  GridPrior(int dim, GridAxis axis, std::vector<double> table)
      : dim_(dim), axis_(axis), log_density_(std::move(table)) {
    detail::require(axis_.points >= 8 && axis_.hi > axis_.lo, "grid prior: bad axis");
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : log_density_) mx = std::max(mx, v);
    double z = 0.0;
    for (std::size_t i = 0; i < node_count(); ++i) z += node_weight(i) * std::exp(log_density_[i] - mx);
    const double log_z = mx + std::log(z);
    for (double& v : log_density_) v -= log_z;
    for (std::size_t i = 0; i < node_count(); ++i) {
      if (!is_interior(i) && std::exp(log_density_[i]) > kBoundaryDensity) {
        throw GridLeak("grid prior: density does not decay at the grid boundary");
      }
    }
    auto cdf = std::make_shared<std::vector<double>>(node_count());
    double acc = 0.0;
    for (std::size_t i = 0; i < node_count(); ++i) (*cdf)[i] = acc += node_weight(i) * std::exp(log_density_[i]);
    cdf_ = std::move(cdf);
    if (dim_ == 1) {
      spline_ = std::make_shared<boost::math::interpolators::cardinal_cubic_b_spline<double>>(
          log_density_.data(), log_density_.size(), axis_.lo, axis_.step());
    }
  }

  double diffused_score_1d(double sa, double var, double x) const {
    const auto n = log_density_.size();
    std::vector<double> a(n);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      const double d = x - sa * axis_.node(static_cast<int>(i));
      a[i] = log_density_[i] - 0.5 * d * d / var;
      if (i == 0 || i + 1 == n) a[i] += std::log(0.5);
      mx = std::max(mx, a[i]);
    }
    double z = 0.0, num = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = std::exp(a[i] - mx);
      z += e;
      num -= e * (x - sa * axis_.node(static_cast<int>(i)));
    }
    return num / (z * var);
  }

  Eigen::VectorXd tabulated_gradient(const Eigen::VectorXd& x) const {
    Eigen::VectorXd g(dim_);
    if (dim_ == 1) {
      g[0] = spline_->prime(x[0]);
      return g;
    }
    const auto n = static_cast<std::size_t>(axis_.points);
    const double h = axis_.step();
    auto cell = [&](double v) {
      const double u = (v - axis_.lo) / h;
      const int i = std::clamp(static_cast<int>(std::floor(u)), 1, axis_.points - 3);
      return std::pair<int, double>{i, std::clamp(u - i, 0.0, 1.0)};
    };
    auto grad_at = [&](std::size_t i, std::size_t j) {
      Eigen::Vector2d d;
      d[0] = (log_density_[(i + 1) * n + j] - log_density_[(i - 1) * n + j]) / (2.0 * h);
      d[1] = (log_density_[i * n + j + 1] - log_density_[i * n + j - 1]) / (2.0 * h);
      return d;
    };
    const auto [i, fi] = cell(x[0]);
    const auto [j, fj] = cell(x[1]);
    const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(j);
    const Eigen::Vector2d v = (1 - fi) * (1 - fj) * grad_at(ui, uj) + fi * (1 - fj) * grad_at(ui + 1, uj) +
                              (1 - fi) * fj * grad_at(ui, uj + 1) + fi * fj * grad_at(ui + 1, uj + 1);
    g = v;
    return g;
  }

  int dim_;
  GridAxis axis_;
  std::vector<double> log_density_;
  std::shared_ptr<const boost::math::interpolators::cardinal_cubic_b_spline<double>> spline_;
  std::shared_ptr<const std::vector<double>> cdf_;
};

}  // namespace dptrav

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <Eigen/QR>

#include "dptrav/errors.hpp"
#include "dptrav/rng.hpp"

namespace dptrav {

/// Linear degradation A : R^n -> R^m. All variants are held densely with a
/// precomputed Moore-Penrose pseudoinverse (desk-scale dimensions).
class LinearOperator {
 public:
  enum class Kind { kDense, kIdentity, kMask, kBlockAverage, kRandomProjection };

  static LinearOperator dense(Eigen::MatrixXd a) { return LinearOperator(Kind::kDense, std::move(a)); }

  static LinearOperator identity(Eigen::Index n) {
    return LinearOperator(Kind::kIdentity, Eigen::MatrixXd::Identity(n, n));
  }

  /// Keeps the listed coordinates, in the given order.
  static LinearOperator mask(Eigen::Index n, const std::vector<Eigen::Index>& keep) {
    detail::require(!keep.empty(), "mask: keep-set is empty");
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(keep.size()), n);
    for (std::size_t r = 0; r < keep.size(); ++r) {
      detail::require(keep[r] >= 0 && keep[r] < n, "mask: coordinate out of range");
      a(static_cast<Eigen::Index>(r), keep[r]) = 1.0;
    }
    return LinearOperator(Kind::kMask, std::move(a));
  }

  /// Averages consecutive blocks of `factor` coordinates.
  static LinearOperator block_average(Eigen::Index n, Eigen::Index factor) {
    detail::require(factor >= 1 && n % factor == 0, "downsample: factor must divide n");
    const Eigen::Index m = n / factor;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m, n);
    for (Eigen::Index r = 0; r < m; ++r) a.block(r, r * factor, 1, factor).setConstant(1.0 / factor);
    return LinearOperator(Kind::kBlockAverage, std::move(a));
  }

  /// Rows i.i.d. N(0, 1/m), reproducible from `seed`.
  static LinearOperator random_projection(Eigen::Index m, Eigen::Index n, std::uint64_t seed) {
    detail::require(m >= 1 && n >= 1, "randproj: empty shape");
    Rng rng(splitmix64(seed));
    Eigen::MatrixXd a(m, n);
    const double sd = 1.0 / std::sqrt(static_cast<double>(m));
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < n; ++j) a(i, j) = sd * standard_normal(rng);
    return LinearOperator(Kind::kRandomProjection, std::move(a));
  }

  Kind kind() const { return kind_; }
  Eigen::Index rows() const { return a_.rows(); }
  Eigen::Index cols() const { return a_.cols(); }
  const Eigen::MatrixXd& matrix() const { return a_; }
  const Eigen::MatrixXd& pinv_matrix() const { return pinv_; }

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const { return a_ * x; }
  Eigen::VectorXd adjoint(const Eigen::VectorXd& u) const { return a_.transpose() * u; }
  Eigen::VectorXd pinv_apply(const Eigen::VectorXd& y) const { return pinv_ * y; }

 private:
  LinearOperator(Kind kind, Eigen::MatrixXd a) : kind_(kind), a_(std::move(a)) {
    detail::require(a_.rows() >= 1 && a_.cols() >= 1, "operator: empty matrix");
    pinv_ = a_.completeOrthogonalDecomposition().pseudoInverse();
  }

  Kind kind_;
  Eigen::MatrixXd a_;
  Eigen::MatrixXd pinv_;
};

/// Elementwise saturation y_i = clamp(2 x_i, -c, c).
class ClipOperator {
 public:
  explicit ClipOperator(Eigen::Index n, double threshold = 1.0) : n_(n), c_(threshold) {
    detail::require(threshold > 0.0, "clip: threshold must be positive");
  }

  Eigen::Index rows() const { return n_; }
  Eigen::Index cols() const { return n_; }
  double threshold() const { return c_; }

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
    return (2.0 * x.array()).cwiseMax(-c_).cwiseMin(c_).matrix();
  }

  /// J^T u with the a.e. derivative: 2 inside (-c, c), 0 where saturated.
  Eigen::VectorXd adjoint_at(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
    Eigen::VectorXd g(n_);
    for (Eigen::Index i = 0; i < n_; ++i) g[i] = std::abs(2.0 * x[i]) < c_ ? 2.0 * u[i] : 0.0;
    return g;
  }

 private:
  Eigen::Index n_;
  double c_;
};

using Operator = std::variant<LinearOperator, ClipOperator>;

enum class LikelihoodForm { kSquared, kL2Norm };

inline Eigen::Index operator_rows(const Operator& op) {
  return std::visit([](const auto& o) { return o.rows(); }, op);
}
inline Eigen::Index operator_cols(const Operator& op) {
  return std::visit([](const auto& o) { return o.cols(); }, op);
}
inline Eigen::VectorXd apply(const Operator& op, const Eigen::VectorXd& x) {
  return std::visit([&](const auto& o) { return o.apply(x); }, op);
}
inline const LinearOperator* as_linear(const Operator& op) { return std::get_if<LinearOperator>(&op); }

/// y = A(x) + sigma_y n together with everything needed to score candidates.
struct Observation {
  Eigen::VectorXd y;
  Operator op;
  double sigma_y = 0.0;
  LikelihoodForm form = LikelihoodForm::kSquared;

  Observation(Eigen::VectorXd y_, Operator op_, double sigma, LikelihoodForm f = LikelihoodForm::kSquared)
      : y(std::move(y_)), op(std::move(op_)), sigma_y(sigma), form(f) {
    detail::require(sigma_y >= 0.0, "observation: sigma_y must be >= 0");
    detail::require(y.size() == operator_rows(op), "observation: y length does not match operator");
  }

  Eigen::Index data_dim() const { return operator_cols(op); }
  const LinearOperator* linear() const { return as_linear(op); }
};

inline Observation observe(const Operator& op, double sigma_y, const Eigen::VectorXd& x, Rng& rng,
                           LikelihoodForm form = LikelihoodForm::kSquared) {
  detail::require(sigma_y >= 0.0, "observe: sigma_y must be >= 0");
  detail::require(x.size() == operator_cols(op), "observe: x dimension mismatch");
  Eigen::VectorXd y = apply(op, x);
  if (sigma_y > 0.0) y += sigma_y * standard_normal_vector(y.size(), rng);
  return Observation(std::move(y), op, sigma_y, form);
}

inline Eigen::VectorXd residual(const Observation& obs, const Eigen::VectorXd& x) {
  return obs.y - apply(obs.op, x);
}

/// J_A(x)^T u.
inline Eigen::VectorXd operator_vjp(const Operator& op, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
  if (const auto* lin = as_linear(op)) return lin->adjoint(u);
  return std::get<ClipOperator>(op).adjoint_at(x, u);
}

/// Unnormalized log-likelihood gradient used by the MAP stage:
///   squared:  -grad |y - A(x)|^2 = 2 J^T r
///   l2norm:   -grad |y - A(x)|   = J^T r / |r|   (0 when |r| < 1e-12)
inline Eigen::VectorXd loglik_grad(const Observation& obs, const Eigen::VectorXd& x) {
  const Eigen::VectorXd r = residual(obs, x);
  if (obs.form == LikelihoodForm::kSquared) return 2.0 * operator_vjp(obs.op, x, r);
  const double nr = r.norm();
  if (nr < 1e-12) return Eigen::VectorXd::Zero(x.size());
  return operator_vjp(obs.op, x, r) / nr;
}

/// The objective whose gradient loglik_grad returns.
inline double loglik_value(const Observation& obs, const Eigen::VectorXd& x) {
  const Eigen::VectorXd r = residual(obs, x);
  return obs.form == LikelihoodForm::kSquared ? -r.squaredNorm() : -r.norm();
}

/// A^+ y for linear operators, y / 2 for the clip model.
inline Eigen::VectorXd pinv_init(const Observation& obs) {
  if (const auto* lin = obs.linear()) return lin->pinv_apply(obs.y);
  if (std::holds_alternative<ClipOperator>(obs.op)) return obs.y / 2.0;
  throw Unsupported("pinv_init: unsupported operator");
}

}  // namespace dptrav

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "dptrav/assignment.hpp"
#include "dptrav/errors.hpp"

namespace dptrav {

/// Equal-dimension collection of finite vectors, one sample per column.
class SampleSet {
 public:
  SampleSet() = default;

  explicit SampleSet(Eigen::MatrixXd columns) : data_(std::move(columns)) {
    detail::require(data_.allFinite(), "sample set: non-finite entry");
  }

  static SampleSet from_vectors(const std::vector<Eigen::VectorXd>& xs) {
    detail::require(!xs.empty(), "sample set: empty");
    Eigen::MatrixXd m(xs.front().size(), static_cast<Eigen::Index>(xs.size()));
    for (std::size_t i = 0; i < xs.size(); ++i) {
      detail::require(xs[i].size() == m.rows(), "sample set: ragged dimensions");
      m.col(static_cast<Eigen::Index>(i)) = xs[i];
    }
    return SampleSet(std::move(m));
  }

  Eigen::Index dim() const { return data_.rows(); }
  Eigen::Index size() const { return data_.cols(); }
  auto sample(Eigen::Index i) const { return data_.col(i); }
  const Eigen::MatrixXd& matrix() const { return data_; }

  Eigen::VectorXd mean() const { return data_.rowwise().mean(); }

  /// Unbiased sample covariance.
  Eigen::MatrixXd covariance() const {
    const Eigen::MatrixXd c = data_.colwise() - mean();
    return c * c.transpose() / static_cast<double>(std::max<Eigen::Index>(size() - 1, 1));
  }

  SampleSet slice(Eigen::Index begin, Eigen::Index count) const {
    return SampleSet(data_.middleCols(begin, count));
  }

 private:
  Eigen::MatrixXd data_;
};

struct MeanStderr {
  double mean = 0.0;
  std::optional<double> std_error;  // unavailable for a single observation
};

inline MeanStderr mean_stderr(const std::vector<double>& v) {
  detail::require(!v.empty(), "mean_stderr: empty input");
  const double n = static_cast<double>(v.size());
  double m = 0.0;
  for (double x : v) m += x;
  m /= n;
  if (v.size() < 2) return {m, std::nullopt};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (n - 1.0) / n)};
}

/// Mean squared error |x - x_hat|^2 over paired samples, with its standard error.
inline MeanStderr mse(const SampleSet& truth, const SampleSet& estimate) {
  if (truth.dim() != estimate.dim() || truth.size() != estimate.size()) {
    throw InvalidParameter("mse: dimension mismatch");
  }
  std::vector<double> se(static_cast<std::size_t>(truth.size()));
  for (Eigen::Index i = 0; i < truth.size(); ++i) {
    se[static_cast<std::size_t>(i)] = (truth.sample(i) - estimate.sample(i)).squaredNorm();
  }
  return mean_stderr(se);
}

/// Symmetric PSD square root by eigendecomposition; eigenvalues clamped at 0.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& c) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (c + c.transpose()));
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() < -1e-9 * scale) throw InvalidParameter("w2_gaussian: matrix is not PSD");
  const Eigen::VectorXd sq = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * sq.asDiagonal() * es.eigenvectors().transpose();
}

/// W2 between N(m1, C1) and N(m2, C2):
///   |m1 - m2|^2 + tr(C1 + C2 - 2 (C1^{1/2} C2 C1^{1/2})^{1/2}).
inline double w2_gaussian(const Eigen::VectorXd& m1, const Eigen::MatrixXd& c1, const Eigen::VectorXd& m2,
                          const Eigen::MatrixXd& c2) {
  detail::require(m1.size() == m2.size() && c1.rows() == m1.size() && c2.rows() == m2.size(),
                  "w2_gaussian: dimension mismatch");
  const Eigen::MatrixXd r1 = psd_sqrt(c1);
  psd_sqrt(c2);  // PSD validation only
  const Eigen::MatrixXd cross = psd_sqrt(r1 * c2 * r1);
  const double sq = (m1 - m2).squaredNorm() + c1.trace() + c2.trace() - 2.0 * cross.trace();
  return std::sqrt(std::max(sq, 0.0));
}

/// Exact 1D empirical W2 via the monotone (sorted) coupling.
inline double w2_1d(const SampleSet& a, const SampleSet& b) {
  detail::require(a.dim() == 1 && b.dim() == 1, "w2_1d: samples must be one-dimensional");
  detail::require(a.size() == b.size() && a.size() > 0, "w2_1d: unequal sample counts");
  std::vector<double> xa(a.matrix().data(), a.matrix().data() + a.size());
  std::vector<double> xb(b.matrix().data(), b.matrix().data() + b.size());
  std::sort(xa.begin(), xa.end());
  std::sort(xb.begin(), xb.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < xa.size(); ++i) acc += (xa[i] - xb[i]) * (xa[i] - xb[i]);
  return std::sqrt(acc / static_cast<double>(xa.size()));
}

inline constexpr Eigen::Index kAssignmentCap = 2048;

/// Exact empirical W2 between equal-size sets via optimal assignment on
/// squared Euclidean costs.
inline double w2_assign(const SampleSet& a, const SampleSet& b) {
  detail::require(a.dim() == b.dim(), "w2_assign: dimension mismatch");
  detail::require(a.size() == b.size() && a.size() > 0, "w2_assign: unequal sample counts");
  if (a.size() > kAssignmentCap) throw InvalidParameter("w2_assign: sample count exceeds cap of 2048");
  const Eigen::Index m = a.size();
  Eigen::MatrixXd cost(m, m);
  const Eigen::VectorXd na = a.matrix().colwise().squaredNorm().transpose();
  const Eigen::VectorXd nb = b.matrix().colwise().squaredNorm().transpose();
  cost.noalias() = -2.0 * a.matrix().transpose() * b.matrix();
  cost.colwise() += na;
  cost.rowwise() += nb.transpose();
  cost = cost.cwiseMax(0.0);
  const AssignmentResult r = solve_assignment(cost);
  return std::sqrt(std::max(r.total_cost, 0.0) / static_cast<double>(m));
}

enum class W2Method { kGaussian, kQuantile1d, kAssignment };

/// Closed form when both laws are known Gaussian, quantile coupling in 1D,
/// assignment otherwise.
inline W2Method select_w2_method(Eigen::Index dim, bool both_gaussian) {
  if (both_gaussian) return W2Method::kGaussian;
  return dim == 1 ? W2Method::kQuantile1d : W2Method::kAssignment;
}

/// Sample-based W2 by the estimator appropriate for the dimension.
inline double w2_empirical(const SampleSet& a, const SampleSet& b) {
  return a.dim() == 1 ? w2_1d(a, b) : w2_assign(a, b);
}

/// Averages an estimator over `reps` disjoint batches of `batch` samples.
inline MeanStderr w2_batched(const SampleSet& a, const SampleSet& b, Eigen::Index batch, int reps) {
  detail::require(batch > 0 && reps > 0, "w2_batched: empty batches");
  detail::require(a.size() >= batch * reps && b.size() >= batch * reps, "w2_batched: not enough samples");
  std::vector<double> vals;
  for (int r = 0; r < reps; ++r) vals.push_back(w2_empirical(a.slice(r * batch, batch), b.slice(r * batch, batch)));
  return mean_stderr(vals);
}

}  // namespace dptrav

#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "dptrav/errors.hpp"

namespace dptrav {

struct AssignmentResult {
  std::vector<Eigen::Index> row_to_col;
  double total_cost = 0.0;
};

/// Minimum-cost perfect matching on a square cost matrix by successive
/// shortest augmenting paths with dual potentials (Dijkstra per row), warm
/// started by column reduction. O(n^3) worst case.
inline AssignmentResult solve_assignment(const Eigen::MatrixXd& cost) {
  const Eigen::Index n = cost.rows();
  detail::require(n == cost.cols(), "assignment: cost matrix must be square");
  AssignmentResult out;
  if (n == 0) return out;

  // Row-major copy: the inner loop scans one row at a time.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> c = cost;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  const auto un = static_cast<std::size_t>(n);

  std::vector<double> u(un, 0.0), v(un), dist(un);
  std::vector<std::size_t> row4col(un, kNone), col4row(un, kNone), path(un), remaining(un);
  std::vector<char> seen_row(un), seen_col(un);

  // Column reduction: v_j = min_i c_ij keeps the duals feasible, and each
  // column's argmin row is matched along a tight edge when still free.
  for (std::size_t j = 0; j < un; ++j) {
    std::size_t best = 0;
    double lo = kInf;
    for (std::size_t i = 0; i < un; ++i) {
      const double cij = c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (cij < lo) {
        lo = cij;
        best = i;
      }
    }
    v[j] = lo;
    if (col4row[best] == kNone) {
      col4row[best] = j;
      row4col[j] = best;
    }
  }

  for (std::size_t start = 0; start < un; ++start) {
    if (col4row[start] != kNone) continue;
    std::fill(seen_row.begin(), seen_row.end(), 0);
    std::fill(seen_col.begin(), seen_col.end(), 0);
    std::fill(dist.begin(), dist.end(), kInf);
    std::size_t left = un;
    for (std::size_t k = 0; k < un; ++k) remaining[k] = un - k - 1;

    std::size_t i = start, sink = kNone;
    double min_val = 0.0;
    while (sink == kNone) {
      seen_row[i] = 1;
      const double* row = c.data() + i * un;
      std::size_t index = kNone;
      double lowest = kInf;
      for (std::size_t k = 0; k < left; ++k) {
        const std::size_t j = remaining[k];
        const double r = min_val + row[j] - u[i] - v[j];
        if (r < dist[j]) {
          path[j] = i;
          dist[j] = r;
        }
        if (dist[j] < lowest || (dist[j] == lowest && row4col[j] == kNone)) {
          lowest = dist[j];
          index = k;
        }
      }
      detail::require(index != kNone && lowest < kInf, "assignment: cost matrix must be finite");
      min_val = lowest;
      const std::size_t j = remaining[index];
      if (row4col[j] == kNone) {
        sink = j;
      } else {
        i = row4col[j];
      }
      seen_col[j] = 1;
      remaining[index] = remaining[--left];
    }

    u[start] += min_val;
    for (std::size_t r = 0; r < un; ++r) {
      if (seen_row[r] && r != start) u[r] += min_val - dist[col4row[r]];
    }
    for (std::size_t j = 0; j < un; ++j) {
      if (seen_col[j]) v[j] -= min_val - dist[j];
    }
    for (std::size_t j = sink;;) {
      const std::size_t r = path[j];
      row4col[j] = r;
      std::swap(col4row[r], j);
      if (r == start) break;
    }
  }

  out.row_to_col.resize(un);
  for (std::size_t r = 0; r < un; ++r) {
    out.row_to_col[r] = static_cast<Eigen::Index>(col4row[r]);
    out.total_cost += c(static_cast<Eigen::Index>(r), out.row_to_col[r]);
  }
  return out;
}

}  // namespace dptrav

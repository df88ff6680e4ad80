#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <sstream>
#include <vector>

#include <Eigen/Core>

#include "dptrav/errors.hpp"
#include "dptrav/observation.hpp"
#include "dptrav/rng.hpp"
#include "dptrav/schedule.hpp"
#include "dptrav/score.hpp"

namespace dptrav {

enum class Stage1Optimizer { kAdam, kPlain };
enum class InitMode { kPseudoinverse, kZero, kCustom };

struct Stage1Config {
  int iterations = 500;
  double eta0 = 0.1;
  double eta_min = 1e-4;
  double w = 1.0;  // prior-gradient weight
  double t1 = 2.0;
  LikelihoodForm likelihood_form = LikelihoodForm::kSquared;
  InitMode init = InitMode::kPseudoinverse;
  Eigen::VectorXd init_vector;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Stage1Optimizer optimizer = Stage1Optimizer::kAdam;
  int grad_samples = 1;

  void validate(const Schedule& s) const {
    detail::require(iterations >= 1, "stage1: iterations must be >= 1");
    detail::require(eta_min > 0.0 && eta0 >= eta_min, "stage1: need eta0 >= eta_min > 0");
    detail::require(t1 > 0.0 && t1 < s.num_steps(), "stage1: t1 must lie in (0, T)");
    detail::require(w > 0.0, "stage1: w must be positive");
    detail::require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0,
                    "stage1: invalid moment parameters");
    detail::require(grad_samples >= 1, "stage1: grad_samples must be >= 1");
  }
};

struct Stage2Config {
  int t0 = 0;
  int stride = 1;   // 1 = every integer time
  double xi = 1.0;  // guidance weight, DPS only

  void validate(const Schedule& s) const {
    if (t0 < 0 || t0 > s.num_steps()) throw OutOfRange("stage2: t0 outside [0, T]");
    detail::require(stride >= 1, "stage2: stride must be >= 1");
  }
};

struct RunRecord {
  Eigen::VectorXd x_map;
  Eigen::VectorXd x_final;
  std::vector<double> stage1_objective_trace;
  std::uint64_t seed = 0;
};

inline double cosine_lr(int n, int total, double eta0, double eta_min) {
  detail::require(total >= 1, "cosine_lr: N must be >= 1");
  return eta_min + 0.5 * (eta0 - eta_min) * (1.0 + std::cos(std::numbers::pi * n / total));
}

/// Weight that makes the Stage-1 fixed point the exact MAP under the squared
/// likelihood: 2 sigma_y^2 * (1 - a) / (r^2 sqrt(a)), r^2 from an isotropic
/// Gaussian proxy of the prior with per-coordinate variance prior_var.
inline double auto_prior_weight(const Schedule& s, double t1, double sigma_y, double prior_var) {
  detail::require(sigma_y > 0.0, "auto prior weight requires sigma_y > 0");
  return 2.0 * sigma_y * sigma_y * prior_grad_coefficient(s, t1, gaussian_r2(s, t1, prior_var));
}

using Objective = std::function<double(const Eigen::VectorXd&)>;

/// Adaptive-moment (or plain) ascent with a cosine step schedule on a
/// stochastic gradient grad(x, rng). The trace holds objective(x) after
/// every iteration.
template <class Grad>
Eigen::VectorXd ascend(Eigen::VectorXd x, Grad&& grad, const Stage1Config& cfg, Rng& rng,
                       const Objective& objective, std::vector<double>* trace) {
  const Eigen::Index n = x.size();
  Eigen::ArrayXd m = Eigen::ArrayXd::Zero(n), v = Eigen::ArrayXd::Zero(n);
  double b1t = 1.0, b2t = 1.0;
  if (trace) trace->reserve(static_cast<std::size_t>(cfg.iterations));
  for (int it = 0; it < cfg.iterations; ++it) {
    const Eigen::VectorXd g = grad(x, rng);
    if (!g.allFinite()) {
      std::ostringstream os;
      os << "stage1: non-finite gradient at iteration " << it << " (|x| = " << x.norm() << ")";
      throw NonFinite(os.str());
    }
    const double lr = cosine_lr(it, cfg.iterations, cfg.eta0, cfg.eta_min);
    if (cfg.optimizer == Stage1Optimizer::kPlain) {
      x += lr * g;
    } else {
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g.array();
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.array().square();
      b1t *= cfg.beta1;
      b2t *= cfg.beta2;
      const Eigen::ArrayXd mh = m / (1.0 - b1t);
      const Eigen::ArrayXd vh = v / (1.0 - b2t);
      x.array() += lr * mh / (vh.sqrt() + cfg.epsilon);
    }
    if (!x.allFinite()) {
      std::ostringstream os;
      os << "stage1: non-finite iterate at iteration " << it << " (|g| = " << g.norm() << ", lr = " << lr << ")";
      throw NonFinite(os.str());
    }
    if (trace) trace->push_back(objective ? objective(x) : 0.0);
  }
  return x;
}

inline Eigen::VectorXd stage1_init(const Observation& obs, const Stage1Config& cfg, Eigen::Index n) {
  switch (cfg.init) {
    case InitMode::kZero:
      return Eigen::VectorXd::Zero(n);
    case InitMode::kCustom:
      detail::require(cfg.init_vector.size() == n, "stage1: init vector has wrong dimension");
      return cfg.init_vector;
    case InitMode::kPseudoinverse:
      break;
  }
  return pinv_init(obs);
}

struct MapResult {
  Eigen::VectorXd x_map;
  std::vector<double> trace;
};

/// Stage 1: ascent on loglik_grad + prior_grad_estimate. Without an objective
/// the trace records the data term only.
inline MapResult map_stage(const Observation& obs, const ScoreModel& prior_score, const Schedule& s,
                           const Stage1Config& cfg, Rng& rng, const Objective& objective = {}) {
  cfg.validate(s);
  detail::require(prior_score.dim() == obs.data_dim(), "map_stage: dimension mismatch");
  Observation o = obs;
  o.form = cfg.likelihood_form;
  const auto grad = [&](const Eigen::VectorXd& x, Rng& r) -> Eigen::VectorXd {
    return loglik_grad(o, x) + prior_grad_estimate(prior_score, s, x, cfg.t1, cfg.w, r, cfg.grad_samples);
  };
  const Objective obj = objective ? objective : Objective([&](const Eigen::VectorXd& x) { return loglik_value(o, x); });
  MapResult out;
  out.x_map = ascend(stage1_init(o, cfg, obs.data_dim()), grad, cfg, rng, obj, &out.trace);
  return out;
}

/// Stage 2: forward-noise x_map to t0, then reverse Euler-Maruyama down to 0.
/// noise(idx, eps) fills eps; idx 0 feeds the forward noising and idx t the
/// step leaving time t, so a fixed table gives common random numbers across t0.
template <class Noise>
Eigen::VectorXd rps_stage(const Eigen::VectorXd& x_map, const ScoreModel& score, const Schedule& s,
                          const Stage2Config& cfg, Noise&& noise) {
  cfg.validate(s);
  if (cfg.t0 == 0) return x_map;
  const auto& ab = s.alpha_bar_table();
  Eigen::VectorXd eps(x_map.size());
  noise(0, eps);
  const double a0 = ab[static_cast<std::size_t>(cfg.t0)];
  Eigen::VectorXd x = std::sqrt(a0) * x_map + std::sqrt(1.0 - a0) * eps;
  for (int t = cfg.t0; t > 0;) {
    const int next = std::max(t - cfg.stride, 0);
    const double b = std::log(ab[static_cast<std::size_t>(next)]) - std::log(ab[static_cast<std::size_t>(t)]);
    const Eigen::VectorXd sc = score.score(x, static_cast<double>(t));
    noise(t, eps);
    x = (1.0 + 0.5 * b) * x + b * sc + std::sqrt(b) * eps;
    if (!x.allFinite()) {
      std::ostringstream os;
      os << "stage2: non-finite state at step t = " << t;
      throw NonFinite(os.str());
    }
    t = next;
  }
  return x;
}

inline Eigen::VectorXd rps_stage(const Eigen::VectorXd& x_map, const ScoreModel& score, const Schedule& s,
                                 const Stage2Config& cfg, Rng& rng) {
  return rps_stage(x_map, score, s, cfg, [&rng](int, Eigen::VectorXd& e) { fill_standard_normal(e, rng); });
}

/// Per-trial table of standard normals indexed 0..T (one row per time).
class NoiseTable {
 public:
  NoiseTable(Eigen::Index dim, int steps, Rng& rng) : data_(dim, steps + 1) {
    for (Eigen::Index j = 0; j < data_.cols(); ++j) {
      for (Eigen::Index i = 0; i < dim; ++i) data_(i, j) = standard_normal(rng);
    }
  }
  void operator()(int idx, Eigen::VectorXd& eps) const { eps = data_.col(idx); }

 private:
  Eigen::MatrixXd data_;
};

/// Both stages with independent streams derived from seed.
inline RunRecord map_rps(const Observation& obs, const ScoreModel& prior_score, const ScoreModel& posterior_score,
                         const Schedule& s, const Stage1Config& cfg1, const Stage2Config& cfg2, std::uint64_t seed,
                         const Objective& objective = {}) {
  RunRecord r;
  r.seed = seed;
  Rng r1 = derive_stream(seed, {tag(StreamTag::kStage1)});
  MapResult m = map_stage(obs, prior_score, s, cfg1, r1, objective);
  r.x_map = std::move(m.x_map);
  r.stage1_objective_trace = std::move(m.trace);
  Rng r2 = derive_stream(seed, {tag(StreamTag::kStage2)});
  r.x_final = rps_stage(r.x_map, posterior_score, s, cfg2, r2);
  return r;
}

/// (a_{t0})^{1 - L_s} sqrt(2 n_x / mu) + eps_score.
inline double theorem35_bound(double alpha_bar_t0, double lipschitz, Eigen::Index n_x, double mu, double eps_score) {
  detail::require(mu > 0.0, "theorem35_bound: mu must be positive");
  return std::pow(alpha_bar_t0, 1.0 - lipschitz) * std::sqrt(2.0 * static_cast<double>(n_x) / mu) + eps_score;
}

/// sqrt(n_x / mu): MAP-to-MMSE distance bound under mu-strong log-concavity.
inline double theorem32_bound(Eigen::Index n_x, double mu) {
  detail::require(mu > 0.0, "theorem32_bound: mu must be positive");
  return std::sqrt(static_cast<double>(n_x) / mu);
}

}  // namespace dptrav

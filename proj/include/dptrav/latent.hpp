#pragma once

#include <cmath>
#include <cstdint>

#include <Eigen/Core>
#include <Eigen/QR>
#include <Eigen/SVD>

#include "dptrav/errors.hpp"
#include "dptrav/observation.hpp"
#include "dptrav/rng.hpp"
#include "dptrav/solver.hpp"
#include "dptrav/w2.hpp"

namespace dptrav {

/// Affine decoder x = W z + b with pseudoinverse encoder.
class LinearCodec {
 public:
  LinearCodec(Eigen::MatrixXd w, Eigen::VectorXd b) : w_(std::move(w)), b_(std::move(b)) {
    detail::require(w_.rows() >= w_.cols() && w_.cols() >= 1, "codec: need n_x >= d >= 1");
    detail::require(b_.size() == w_.rows(), "codec: offset dimension mismatch");
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(w_, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd sv = svd.singularValues();
    lipschitz_ = sv[0];
    detail::require(sv[sv.size() - 1] > 1e-12 * lipschitz_, "codec: decoder is rank deficient");
    pinv_ = svd.matrixV() * sv.cwiseInverse().asDiagonal() * svd.matrixU().transpose();
  }

  static LinearCodec identity(Eigen::Index n) {
    return LinearCodec(Eigen::MatrixXd::Identity(n, n), Eigen::VectorXd::Zero(n));
  }

  Eigen::Index data_dim() const { return w_.rows(); }
  Eigen::Index latent_dim() const { return w_.cols(); }
  const Eigen::MatrixXd& decode_matrix() const { return w_; }
  const Eigen::VectorXd& offset() const { return b_; }
  const Eigen::MatrixXd& encode_matrix() const { return pinv_; }
  double lipschitz() const { return lipschitz_; }

  Eigen::VectorXd decode(const Eigen::VectorXd& z) const { return w_ * z + b_; }
  Eigen::VectorXd encode(const Eigen::VectorXd& x) const { return pinv_ * (x - b_); }

  SampleSet decode(const SampleSet& zs) const {
    Eigen::MatrixXd x = w_ * zs.matrix();
    x.colwise() += b_;
    return SampleSet(std::move(x));
  }

 private:
  Eigen::MatrixXd w_;
  Eigen::VectorXd b_;
  Eigen::MatrixXd pinv_;
  double lipschitz_ = 0.0;
};

/// Random orthonormal columns times scale, so L_D = scale.
inline LinearCodec make_codec(Eigen::Index n_x, Eigen::Index d, double scale, Rng& rng,
                              const Eigen::VectorXd& offset = Eigen::VectorXd()) {
  detail::require(d >= 1 && d <= n_x, "make_codec: need 1 <= d <= n_x");
  detail::require(scale > 0.0, "make_codec: scale must be positive");
  Eigen::MatrixXd g(n_x, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = 0; i < n_x; ++i) g(i, j) = standard_normal(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n_x, d);
  return LinearCodec(scale * q, offset.size() == 0 ? Eigen::VectorXd::Zero(n_x) : offset);
}

/// W^T loglik_grad(obs, decode(z)).
inline Eigen::VectorXd latent_loglik_grad(const LinearCodec& codec, const Observation& obs, const Eigen::VectorXd& z) {
  return codec.decode_matrix().transpose() * loglik_grad(obs, codec.decode(z));
}

/// Linear observation seen from latent coordinates: y - A b = (A W) z + noise.
inline Observation latent_observation(const LinearCodec& codec, const Observation& obs) {
  const LinearOperator* lin = obs.linear();
  if (!lin) throw Unsupported("latent_observation: nonlinear operator");
  return Observation(obs.y - lin->apply(codec.offset()), LinearOperator::dense(lin->matrix() * codec.decode_matrix()),
                     obs.sigma_y, obs.form);
}

/// Stage 1 in latent coordinates; x_map is the latent iterate. Starts from
/// the encoded data-space initialization unless init is zero or custom.
inline MapResult latent_map_stage(const Observation& obs, const ScoreModel& latent_prior_score,
                                  const LinearCodec& codec, const Schedule& s, const Stage1Config& cfg, Rng& rng,
                                  const Objective& latent_objective = {}) {
  cfg.validate(s);
  detail::require(latent_prior_score.dim() == codec.latent_dim(), "latent stage1: score dimension must be latent");
  detail::require(obs.data_dim() == codec.data_dim(), "latent stage1: codec/data dimension mismatch");
  Observation o = obs;
  o.form = cfg.likelihood_form;
  Eigen::VectorXd z0;
  if (cfg.init == InitMode::kCustom) {
    detail::require(cfg.init_vector.size() == codec.latent_dim(), "latent stage1: init vector must be latent");
    z0 = cfg.init_vector;
  } else if (cfg.init == InitMode::kZero) {
    z0 = Eigen::VectorXd::Zero(codec.latent_dim());
  } else {
    z0 = codec.encode(pinv_init(o));
  }
  const auto grad = [&](const Eigen::VectorXd& z, Rng& r) -> Eigen::VectorXd {
    return latent_loglik_grad(codec, o, z) +
           prior_grad_estimate(latent_prior_score, s, z, cfg.t1, cfg.w, r, cfg.grad_samples);
  };
  const Objective obj = latent_objective
                            ? latent_objective
                            : Objective([&](const Eigen::VectorXd& z) { return loglik_value(o, codec.decode(z)); });
  MapResult out;
  out.x_map = ascend(z0, grad, cfg, rng, obj, &out.trace);
  return out;
}

/// MAP-RPS in latent coordinates, decoded.
inline RunRecord lmap_rps(const Observation& obs, const ScoreModel& latent_prior_score,
                          const ScoreModel& latent_posterior_score, const LinearCodec& codec, const Schedule& s,
                          const Stage1Config& cfg1, const Stage2Config& cfg2, std::uint64_t seed,
                          const Objective& latent_objective = {}) {
  detail::require(latent_posterior_score.dim() == codec.latent_dim(), "lmap_rps: score dimension must be latent");
  RunRecord r;
  r.seed = seed;
  Rng r1 = derive_stream(seed, {tag(StreamTag::kStage1)});
  MapResult m = latent_map_stage(obs, latent_prior_score, codec, s, cfg1, r1, latent_objective);
  r.stage1_objective_trace = std::move(m.trace);
  Rng r2 = derive_stream(seed, {tag(StreamTag::kStage2)});
  const Eigen::VectorXd z_final = rps_stage(m.x_map, latent_posterior_score, s, cfg2, r2);
  r.x_map = codec.decode(m.x_map);
  r.x_final = codec.decode(z_final);
  return r;
}

/// 2 L_D sqrt(d / mu).
inline double theorem38_bound(Eigen::Index d, double mu, double lipschitz_d) {
  detail::require(mu > 0.0, "theorem38_bound: mu must be positive");
  return 2.0 * lipschitz_d * std::sqrt(static_cast<double>(d) / mu);
}

/// L_D (a_{t0})^{1 - L_s} sqrt(2 d / mu) + L_D eps_score.
inline double theorem39_bound(double alpha_bar_t0, double lipschitz_s, Eigen::Index d, double mu, double lipschitz_d,
                              double eps_score) {
  detail::require(mu > 0.0, "theorem39_bound: mu must be positive");
  return lipschitz_d * std::pow(alpha_bar_t0, 1.0 - lipschitz_s) * std::sqrt(2.0 * static_cast<double>(d) / mu) +
         lipschitz_d * eps_score;
}

}  // namespace dptrav

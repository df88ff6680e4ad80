#pragma once

#include <memory>
#include <optional>

#include <Eigen/Core>

#include "dptrav/errors.hpp"
#include "dptrav/gaussian_mixture.hpp"
#include "dptrav/grid_prior.hpp"
#include "dptrav/harness/config.hpp"
#include "dptrav/latent.hpp"
#include "dptrav/observation.hpp"
#include "dptrav/posterior.hpp"
#include "dptrav/rng.hpp"
#include "dptrav/schedule.hpp"
#include "dptrav/score.hpp"
#include "dptrav/solver.hpp"
#include "dptrav/w2.hpp"

namespace dptrav::harness {

inline Operator make_operator(const ObservationSpec& o, Eigen::Index n) {
  if (o.op == "denoise") return LinearOperator::identity(n);
  if (o.op == "mask") return LinearOperator::mask(n, o.keep);
  if (o.op == "downsample") return LinearOperator::block_average(n, o.factor);
  if (o.op == "randproj") return LinearOperator::random_projection(o.rows, n, o.op_seed);
  if (o.op == "dense") {
    dptrav::detail::require(o.matrix.cols() == n, "dense operator: column count must equal the data dimension");
    return LinearOperator::dense(o.matrix);
  }
  if (o.op == "clip") return ClipOperator(n, o.threshold);
  throw ConfigError("config: observation.task: unknown task " + o.op);
}

/// Runtime objects built from a validated config: prior (in model
/// coordinates, latent when a codec is present), scores, operator, codec.
class Problem {
 public:
  explicit Problem(const ExperimentConfig& cfg) : cfg_(cfg), schedule_(cfg.make_schedule()) {
    try {
      build();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }

  const ExperimentConfig& config() const { return cfg_; }
  const Schedule& schedule() const { return schedule_; }
  const std::optional<GaussianMixture>& mixture() const { return mixture_; }
  const std::optional<GridPrior>& grid() const { return grid_; }
  const std::optional<LinearCodec>& codec() const { return codec_; }
  const Operator& op() const { return op_; }
  const ScoreModel& prior_score() const { return *prior_score_; }
  std::shared_ptr<const ScoreModel> prior_score_ptr() const { return prior_score_; }
  const Stage1Config& stage1() const { return stage1_; }
  Eigen::Index model_dim() const { return prior_score_->dim(); }
  Eigen::Index data_dim() const { return operator_cols(op_); }
  bool exact_posterior() const { return !cfg_.score.dps; }

  Eigen::VectorXd sample_model(Rng& rng) const { return mixture_ ? mixture_->sample(rng) : grid_->sample(rng); }
  Eigen::VectorXd to_data(const Eigen::VectorXd& z) const { return codec_ ? codec_->decode(z) : z; }

  Observation observe_data(const Eigen::VectorXd& x, Rng& rng) const {
    return observe(op_, cfg_.observation.sigma_y, x, rng, cfg_.observation.form);
  }

  /// The observation as seen from model coordinates.
  Observation model_observation(const Observation& obs) const {
    return codec_ ? latent_observation(*codec_, obs) : obs;
  }

  /// Exact posterior score (shared covariance table) or DPS.
  std::unique_ptr<ScoreModel> posterior_score(const Observation& obs) const {
    const Observation mo = model_observation(obs);
    if (exact_posterior()) return std::make_unique<MixtureScore>(table_, gm_posterior(*mixture_, mo), schedule_);
    return std::make_unique<DpsScore>(prior_score_, schedule_, mo, cfg_.stage2.xi, cfg_.score.jacobian);
  }

  /// Exact model-space posterior (mixture priors, linear operator).
  GaussianMixture exact_posterior_law(const Observation& obs) const {
    if (!mixture_) throw Unsupported("exact posterior requires a gaussian or gm prior");
    return gm_posterior(*mixture_, model_observation(obs));
  }

  /// Stage 1 in model coordinates; returns the model-space iterate.
  MapResult stage1(const Observation& obs, Rng& rng, const Objective& objective = {}) const {
    if (codec_) return latent_map_stage(obs, *prior_score_, *codec_, schedule_, stage1_, rng, objective);
    return map_stage(obs, *prior_score_, schedule_, stage1_, rng, objective);
  }

  /// Per-coordinate prior variance used by the automatic prior weight.
  double prior_coordinate_variance() const {
    if (mixture_) return mixture_->mixture_cov().diagonal().mean();
    return grid_->coordinate_variance();
  }

 private:
  void build() {
    const PriorSpec& p = cfg_.prior;
    switch (p.kind) {
      case PriorKind::kGaussian:
      case PriorKind::kMixture:
        mixture_.emplace(p.weights, p.means, p.covs);
        prior_score_ = std::make_shared<MixtureScore>(*mixture_, schedule_);
        break;
      case PriorKind::kQuartic:
        grid_.emplace(GridPrior::quartic(p.dim, p.axis));
        prior_score_ = std::make_shared<GridScore>(*grid_, schedule_);
        break;
      case PriorKind::kGridGaussian:
        grid_.emplace(GridPrior::gaussian(p.dim, p.grid_mean, p.grid_var, p.axis));
        prior_score_ = std::make_shared<GridScore>(*grid_, schedule_);
        break;
    }
    const Eigen::Index n = cfg_.data_dim();
    op_ = make_operator(cfg_.observation, n);
    if (cfg_.latent) {
      if (!as_linear(op_)) throw ConfigError("config: latent: the latent pipeline needs a linear operator");
      Rng rng = derive_stream(cfg_.seed, {tag(StreamTag::kCodec)});
      Eigen::VectorXd offset = Eigen::VectorXd::Zero(n);
      if (cfg_.latent->offset_seed) {
        Rng orng(splitmix64(*cfg_.latent->offset_seed));
        offset = standard_normal_vector(n, orng);
      }
      codec_.emplace(make_codec(n, cfg_.latent->d, cfg_.latent->scale, rng, offset));
    }
    stage1_ = cfg_.stage1;
    if (cfg_.auto_w) {
      stage1_.w = auto_prior_weight(schedule_, stage1_.t1, cfg_.observation.sigma_y, prior_coordinate_variance());
    }
    if (exact_posterior()) {
      if (!mixture_) throw ConfigError("config: score: exact scores need a gaussian or gm prior (use dps)");
      if (!as_linear(op_)) throw ConfigError("config: score: exact scores need a linear operator");
      if (!(cfg_.observation.sigma_y > 0.0)) throw ConfigError("config: score: exact scores need sigma_y > 0");
      const Eigen::Index m = operator_rows(op_);
      const Observation probe(Eigen::VectorXd::Zero(m), op_, cfg_.observation.sigma_y);
      table_ = std::make_shared<const DiffusedCovTable>(exact_posterior_law(probe).covs(), schedule_);
    }
  }

  ExperimentConfig cfg_;
  Schedule schedule_;
  std::optional<GaussianMixture> mixture_;
  std::optional<GridPrior> grid_;
  std::shared_ptr<const ScoreModel> prior_score_;
  Operator op_ = LinearOperator::identity(1);
  std::optional<LinearCodec> codec_;
  Stage1Config stage1_;
  std::shared_ptr<const DiffusedCovTable> table_;
};

/// D-P endpoints in data space where a closed form or Monte-Carlo oracle
/// exists: mixture priors under a linear operator (latent: Gaussian only).
inline std::optional<DpEndpoints> problem_endpoints(const Problem& pb, Rng& rng) {
  const LinearOperator* lin = as_linear(pb.op());
  if (!pb.mixture() || !lin) return std::nullopt;
  const double sigma = pb.config().observation.sigma_y;
  const GaussianMixture& prior = *pb.mixture();
  if (!pb.codec()) {
    if (prior.size() > 1 && !(sigma > 0.0)) return std::nullopt;
    return dp_endpoints(prior, *lin, sigma, rng);
  }
  if (prior.size() != 1) return std::nullopt;
  const LinearCodec& codec = *pb.codec();
  const Eigen::MatrixXd& w = codec.decode_matrix();
  const Eigen::MatrixXd b = lin->matrix() * w;
  const Eigen::MatrixXd& c = prior.cov(0);
  Eigen::MatrixXd s = b * c * b.transpose();
  s.diagonal().array() += sigma * sigma;
  const Eigen::MatrixXd cb = c * b.transpose();
  Eigen::MatrixXd explained = cb * s.completeOrthogonalDecomposition().pseudoInverse() * cb.transpose();
  explained = 0.5 * (explained + explained.transpose());
  const Eigen::VectorXd mean = codec.decode(prior.mean(0));
  DpEndpoints e;
  e.d_star = std::max((w * (c - explained) * w.transpose()).trace(), 0.0);
  e.p_star = w2_gaussian(mean, w * c * w.transpose(), mean, w * explained * w.transpose());
  return e;
}

}  // namespace dptrav::harness

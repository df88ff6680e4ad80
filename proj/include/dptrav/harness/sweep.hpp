#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "dptrav/errors.hpp"
#include "dptrav/harness/config.hpp"
#include "dptrav/harness/problem.hpp"
#include "dptrav/metrics.hpp"
#include "dptrav/posterior.hpp"
#include "dptrav/rng.hpp"
#include "dptrav/solver.hpp"
#include "dptrav/w2.hpp"

namespace dptrav::harness {

struct Provenance {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::string version = kVersion;
};

struct SweepResult {
  std::vector<DpCurvePoint> points;
  std::optional<DpEndpoints> endpoints;
  std::vector<std::pair<double, double>> ideal_curve;  // (P, D(P))
  Provenance provenance;
  std::size_t failed_trials = 0;
};

/// Samples of the ideal curve on [0, 1.25 P*].
inline std::vector<std::pair<double, double>> sample_ideal_curve(const DpEndpoints& e, int n = 65) {
  std::vector<std::pair<double, double>> out;
  const double hi = 1.25 * e.p_star;
  for (int i = 0; i < n; ++i) {
    const double p = hi * i / (n - 1);
    out.emplace_back(p, ideal_curve(e, p));
  }
  return out;
}

/// Runs fn(i) for i in [0, n) on `jobs` threads. fn must only touch slot i.
template <class Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

namespace detail {

struct TrialOutput {
  bool ok = false;
  std::string error;
  Eigen::VectorXd truth;
  std::vector<Eigen::VectorXd> outputs;  // one per t0, data space
};

inline TrialOutput run_trial(const Problem& pb, std::size_t trial) {
  const ExperimentConfig& cfg = pb.config();
  TrialOutput out;
  try {
    Rng orng = derive_stream(cfg.seed, {tag(StreamTag::kObservation), trial});
    const Eigen::VectorXd z = pb.sample_model(orng);
    out.truth = pb.to_data(z);
    const Observation obs = pb.observe_data(out.truth, orng);
    Rng r1 = derive_stream(cfg.seed, {tag(StreamTag::kStage1), trial});
    const Eigen::VectorXd z_map = pb.stage1(obs, r1).x_map;
    const auto post = pb.posterior_score(obs);
    const int t_max = *std::max_element(cfg.t0_grid.begin(), cfg.t0_grid.end());
    Rng r2 = derive_stream(cfg.seed, {tag(StreamTag::kStage2), trial});
    const NoiseTable noise(pb.model_dim(), t_max, r2);
    for (int t0 : cfg.t0_grid) {
      Stage2Config c2 = cfg.stage2;
      c2.t0 = t0;
      out.outputs.push_back(pb.to_data(rps_stage(z_map, *post, pb.schedule(), c2, noise)));
    }
    out.ok = true;
  } catch (const std::exception& e) {
    out.ok = false;
    out.error = e.what();
    out.outputs.clear();
  }
  return out;
}

inline std::pair<double, std::optional<double>> perception(const SampleSet& out, const SampleSet& ref,
                                                           const PerceptionSpec& spec) {
  const Eigen::Index n = out.size();
  if (n == 1) return {(out.sample(0) - ref.sample(0)).norm(), std::nullopt};
  if (out.dim() == 1) {
    const double w = w2_1d(out, ref);
    const Eigen::Index batch = n / spec.reps;
    if (batch < 1 || spec.reps < 2) return {w, std::nullopt};
    return {w, w2_batched(out, ref, batch, spec.reps).std_error};
  }
  const Eigen::Index m = std::min(spec.batch, n);
  const int reps = static_cast<int>(std::max<Eigen::Index>(1, std::min<Eigen::Index>(spec.reps, n / m)));
  const MeanStderr r = w2_batched(out, ref, m, reps);
  return {r.mean, r.std_error};
}

}  // namespace detail

/// D-P sweep: per trial draw (x, y), run Stage 1 once, then Stage 2 for every
/// t0 from a per-trial noise table. Per-trial streams derive from the seed
/// and the trial index, so results do not depend on `jobs`.
inline SweepResult run_sweep(const ExperimentConfig& cfg, int jobs = 1) {
  const Problem pb(cfg);
  const std::size_t n = cfg.n_trials;
  std::vector<detail::TrialOutput> trials(n);
  parallel_for(n, jobs, [&](std::size_t i) { trials[i] = detail::run_trial(pb, i); });

  SweepResult r;
  std::vector<std::size_t> good;
  std::string first_error;
  for (std::size_t i = 0; i < n; ++i) {
    if (trials[i].ok) {
      good.push_back(i);
    } else if (first_error.empty()) {
      first_error = trials[i].error;
    }
  }
  r.failed_trials = n - good.size();
  if (r.failed_trials * 100 > n || good.empty()) {
    throw Error("sweep: " + std::to_string(r.failed_trials) + " of " + std::to_string(n) +
                " trials failed; first error: " + first_error);
  }

  const auto m = static_cast<Eigen::Index>(good.size());
  const Eigen::Index dim = pb.data_dim();
  Rng ref_rng = derive_stream(cfg.seed, {tag(StreamTag::kReference)});
  Eigen::MatrixXd ref(dim, m), truth(dim, m);
  for (Eigen::Index j = 0; j < m; ++j) ref.col(j) = pb.to_data(pb.sample_model(ref_rng));
  for (Eigen::Index j = 0; j < m; ++j) truth.col(j) = trials[good[static_cast<std::size_t>(j)]].truth;
  const SampleSet ref_set(std::move(ref)), truth_set(std::move(truth));

  for (std::size_t k = 0; k < cfg.t0_grid.size(); ++k) {
    Eigen::MatrixXd outs(dim, m);
    for (Eigen::Index j = 0; j < m; ++j) outs.col(j) = trials[good[static_cast<std::size_t>(j)]].outputs[k];
    const SampleSet out_set(std::move(outs));
    DpCurvePoint p;
    p.t0 = cfg.t0_grid[k];
    const MeanStderr d = mse(truth_set, out_set);
    p.distortion_mean = d.mean;
    p.distortion_stderr = d.std_error;
    const auto [w, ws] = detail::perception(out_set, ref_set, cfg.perception);
    p.w2 = w;
    p.w2_stderr = ws;
    p.n_trials = good.size();
    r.points.push_back(p);
  }

  Rng erng = derive_stream(cfg.seed, {tag(StreamTag::kEndpoints)});
  r.endpoints = problem_endpoints(pb, erng);
  if (r.endpoints) r.ideal_curve = sample_ideal_curve(*r.endpoints);
  r.provenance = {config_hash(cfg), cfg.seed, kVersion};
  return r;
}

}  // namespace dptrav::harness

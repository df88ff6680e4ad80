#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "dptrav/errors.hpp"
#include "dptrav/grid_prior.hpp"
#include "dptrav/observation.hpp"
#include "dptrav/schedule.hpp"
#include "dptrav/score.hpp"
#include "dptrav/solver.hpp"

namespace dptrav::harness {

using json = nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";

struct ScheduleSpec {
  int steps = 1000;
  double beta_min = 1e-4;
  double beta_max = 0.02;
};

enum class PriorKind { kGaussian, kMixture, kQuartic, kGridGaussian };

struct PriorSpec {
  PriorKind kind = PriorKind::kGaussian;
  int dim = 1;
  Eigen::VectorXd weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;
  double grid_mean = 0.0;
  double grid_var = 1.0;
  GridAxis axis;
};

struct ObservationSpec {
  std::string op = "denoise";  // denoise | mask | downsample | randproj | dense | clip
  std::optional<int> dim;       // data dimension; defaults to the prior dimension
  std::vector<Eigen::Index> keep;
  int factor = 2;
  int rows = 1;
  std::uint64_t op_seed = 0;
  Eigen::MatrixXd matrix;
  double threshold = 1.0;
  double sigma_y = 1.0;
  LikelihoodForm form = LikelihoodForm::kSquared;
};

struct ScoreSpec {
  bool dps = false;
  DpsJacobian jacobian = DpsJacobian::kFull;
};

struct LatentSpec {
  int d = 1;
  double scale = 1.0;
  std::optional<std::uint64_t> offset_seed;
};

struct OutputSpec {
  std::string csv = "curve.csv";
  std::string svg = "curve.svg";
  std::string summary = "summary.json";
};

struct PerceptionSpec {
  Eigen::Index batch = 1024;
  int reps = 8;
};

struct VerifySpec {
  double w_scale = 1.0;                   // multiplies the exact prior-gradient coefficient
  std::optional<double> lipschitz_override;
  int trials = 10000;
  int draws = 100000;
  std::vector<double> t1_values{10.0, 50.0, 200.0};
  std::vector<double> points{-1.0, 0.0, 2.0};
};

struct ExperimentConfig {
  ScheduleSpec schedule;
  PriorSpec prior;
  ObservationSpec observation;
  ScoreSpec score;
  Stage1Config stage1;
  bool auto_w = true;
  Stage2Config stage2;
  std::vector<int> t0_grid{0};
  std::size_t n_trials = 1000;
  std::uint64_t seed = 0;
  std::optional<LatentSpec> latent;
  OutputSpec output;
  PerceptionSpec perception;
  VerifySpec verify;
  json source;  // normalized document used for the provenance hash

  Schedule make_schedule() const { return Schedule::linear(schedule.steps, schedule.beta_min, schedule.beta_max); }
  Eigen::Index model_dim() const { return latent ? latent->d : prior.dim; }
  Eigen::Index data_dim() const {
    if (observation.dim) return *observation.dim;
    return prior.dim;
  }
};

namespace detail {

[[noreturn]] inline void fail(const std::string& path, const std::string& what) {
  throw ConfigError("config: " + (path.empty() ? std::string("<root>") : path) + ": " + what);
}

/// Object view that records which keys were consumed; leftovers are errors.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& at(const std::string& key) {
    if (!j_.contains(key)) fail(join(key), "missing required key");
    seen_.insert(key);
    return j_.at(key);
  }

  const json* find(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  double number(const std::string& key, double fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_number()) fail(join(key), "expected a number");
    return v->get<double>();
  }

  double number(const std::string& key) {
    const json& v = at(key);
    if (!v.is_number()) fail(join(key), "expected a number");
    return v.get<double>();
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_number_integer()) fail(join(key), "expected an integer");
    return v->get<std::int64_t>();
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
      fail(join(key), "expected a non-negative integer");
    }
    return v->get<std::uint64_t>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_string()) fail(join(key), "expected a string");
    return v->get<std::string>();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) fail(join(it.key()), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline Eigen::VectorXd to_vector(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) fail(path, "expected a non-empty array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) fail(path, "expected numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline Eigen::MatrixXd to_matrix(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) fail(path, "expected a non-empty array of rows");
  const Eigen::VectorXd first = to_vector(j[0], path);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), first.size());
  for (std::size_t r = 0; r < j.size(); ++r) {
    const Eigen::VectorXd row = to_vector(j[r], path);
    if (row.size() != m.cols()) fail(path, "ragged matrix");
    m.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return m;
}

inline LikelihoodForm parse_form(const std::string& s, const std::string& path) {
  if (s == "squared") return LikelihoodForm::kSquared;
  if (s == "l2norm") return LikelihoodForm::kL2Norm;
  fail(path, "expected \"squared\" or \"l2norm\"");
}

inline ScheduleSpec parse_schedule(const json& j) {
  Section s(j, "schedule");
  ScheduleSpec out;
  if (s.string("type", "linear") != "linear") fail("schedule.type", "only \"linear\" is supported");
  out.steps = static_cast<int>(s.integer("T", out.steps));
  out.beta_min = s.number("beta_min", out.beta_min);
  out.beta_max = s.number("beta_max", out.beta_max);
  s.finish();
  if (out.steps < 1) fail("schedule.T", "must be >= 1");
  if (!(out.beta_min > 0.0 && out.beta_max >= out.beta_min && out.beta_max < 1.0)) {
    fail("schedule", "need 0 < beta_min <= beta_max < 1");
  }
  return out;
}

inline GridAxis parse_axis(Section& s, int dim) {
  GridAxis a = GridPrior::default_axis(dim);
  if (const json* b = s.find("bounds")) {
    const Eigen::VectorXd v = to_vector(*b, s.join("bounds"));
    if (v.size() != 2) fail(s.join("bounds"), "expected [lo, hi]");
    a.lo = v[0];
    a.hi = v[1];
  }
  a.points = static_cast<int>(s.integer("points", a.points));
  if (!(a.hi > a.lo) || a.points < 8) fail(s.join("points"), "grid needs hi > lo and >= 8 points");
  return a;
}

inline PriorSpec parse_prior(const json& j) {
  Section s(j, "prior");
  PriorSpec p;
  const std::string type = s.string("type", "gaussian");
  if (type == "gaussian") {
    p.kind = PriorKind::kGaussian;
    const json* mean = s.find("mean");
    p.dim = static_cast<int>(s.integer("dim", mean ? static_cast<std::int64_t>(mean->size()) : 1));
    if (p.dim < 1) fail("prior.dim", "must be >= 1");
    Eigen::VectorXd m = mean ? to_vector(*mean, "prior.mean") : Eigen::VectorXd::Zero(p.dim);
    if (m.size() != p.dim) fail("prior.mean", "length must equal dim");
    Eigen::MatrixXd c;
    if (const json* cov = s.find("cov")) {
      c = to_matrix(*cov, "prior.cov");
    } else {
      const double var = s.number("var", 1.0);
      if (!(var > 0.0)) fail("prior.var", "must be positive");
      c = var * Eigen::MatrixXd::Identity(p.dim, p.dim);
    }
    if (c.rows() != p.dim || c.cols() != p.dim) fail("prior.cov", "must be dim x dim");
    p.weights = Eigen::VectorXd::Ones(1);
    p.means = {m};
    p.covs = {c};
  } else if (type == "gm") {
    p.kind = PriorKind::kMixture;
    p.weights = to_vector(s.at("weights"), "prior.weights");
    const json& means = s.at("means");
    if (!means.is_array() || means.size() != static_cast<std::size_t>(p.weights.size())) {
      fail("prior.means", "need one mean per weight");
    }
    for (const auto& m : means) p.means.push_back(to_vector(m, "prior.means"));
    p.dim = static_cast<int>(p.means[0].size());
    if (const json* covs = s.find("covs")) {
      if (!covs->is_array() || covs->size() != p.means.size()) fail("prior.covs", "need one covariance per weight");
      for (const auto& c : *covs) p.covs.push_back(to_matrix(c, "prior.covs"));
    } else {
      const Eigen::VectorXd vars = to_vector(s.at("vars"), "prior.vars");
      if (vars.size() != static_cast<Eigen::Index>(p.means.size())) fail("prior.vars", "need one variance per weight");
      for (Eigen::Index k = 0; k < vars.size(); ++k) {
        p.covs.push_back(vars[k] * Eigen::MatrixXd::Identity(p.dim, p.dim));
      }
    }
  } else if (type == "grid") {
    const std::string formula = s.string("formula", "quartic");
    if (formula == "quartic") {
      p.kind = PriorKind::kQuartic;
    } else if (formula == "gaussian") {
      p.kind = PriorKind::kGridGaussian;
    } else {
      fail("prior.formula", "expected \"quartic\" or \"gaussian\"");
    }
    p.dim = static_cast<int>(s.integer("dim", 1));
    if (p.dim != 1 && p.dim != 2) fail("prior.dim", "grid priors support dim 1 or 2");
    p.axis = parse_axis(s, p.dim);
    if (p.kind == PriorKind::kGridGaussian) {
      p.grid_mean = s.number("mean", 0.0);
      p.grid_var = s.number("var", 1.0);
    }
  } else {
    fail("prior.type", "expected gaussian, gm or grid");
  }
  s.finish();
  return p;
}

inline ObservationSpec parse_observation(const json& j) {
  Section s(j, "observation");
  ObservationSpec o;
  o.op = s.string("task", o.op);
  if (const json* d = s.find("dim")) {
    if (!d->is_number_integer() || d->get<int>() < 1) fail("observation.dim", "expected a positive integer");
    o.dim = d->get<int>();
  }
  o.sigma_y = s.number("sigma_y", o.sigma_y);
  if (!(o.sigma_y >= 0.0)) fail("observation.sigma_y", "must be >= 0");
  o.form = parse_form(s.string("likelihood", "squared"), "observation.likelihood");
  if (o.op == "mask") {
    const json& keep = s.at("keep");
    if (!keep.is_array() || keep.empty()) fail("observation.keep", "expected a non-empty index list");
    for (const auto& k : keep) {
      if (!k.is_number_integer()) fail("observation.keep", "expected integers");
      o.keep.push_back(k.get<Eigen::Index>());
    }
  } else if (o.op == "downsample") {
    o.factor = static_cast<int>(s.integer("factor", o.factor));
  } else if (o.op == "randproj") {
    o.rows = static_cast<int>(s.integer("rows", o.rows));
    o.op_seed = s.unsigned_integer("op_seed", 0);
  } else if (o.op == "dense") {
    o.matrix = to_matrix(s.at("matrix"), "observation.matrix");
  } else if (o.op == "clip") {
    o.threshold = s.number("threshold", o.threshold);
  } else if (o.op != "denoise") {
    fail("observation.task", "expected denoise, mask, downsample, randproj, dense or clip");
  }
  s.finish();
  return o;
}

inline ScoreSpec parse_score(const std::string& type, const std::string& jac) {
  ScoreSpec out;
  if (type == "dps") {
    out.dps = true;
  } else if (type != "exact") {
    fail("score", "expected \"exact\" or \"dps\"");
  }
  if (jac == "stopgrad") {
    out.jacobian = DpsJacobian::kStopGrad;
  } else if (jac != "full") {
    fail("jacobian", "expected \"full\" or \"stopgrad\"");
  }
  return out;
}

inline void parse_stage1(const json& j, ExperimentConfig& cfg) {
  Section s(j, "stage1");
  Stage1Config& c = cfg.stage1;
  c.iterations = static_cast<int>(s.integer("iterations", c.iterations));
  c.eta0 = s.number("eta0", c.eta0);
  c.eta_min = s.number("eta_min", c.eta_min);
  c.t1 = s.number("t1", c.t1);
  if (const json* w = s.find("w")) {
    if (w->is_string() && w->get<std::string>() == "auto") {
      cfg.auto_w = true;
    } else if (w->is_number()) {
      cfg.auto_w = false;
      c.w = w->get<double>();
    } else {
      fail("stage1.w", "expected a number or \"auto\"");
    }
  }
  c.likelihood_form = parse_form(s.string("likelihood_form", "squared"), "stage1.likelihood_form");
  if (const json* init = s.find("init")) {
    if (init->is_array()) {
      c.init = InitMode::kCustom;
      c.init_vector = to_vector(*init, "stage1.init");
    } else if (init->is_string() && init->get<std::string>() == "pseudoinverse") {
      c.init = InitMode::kPseudoinverse;
    } else if (init->is_string() && init->get<std::string>() == "zero") {
      c.init = InitMode::kZero;
    } else {
      fail("stage1.init", "expected \"pseudoinverse\", \"zero\" or a vector");
    }
  }
  c.beta1 = s.number("beta1", c.beta1);
  c.beta2 = s.number("beta2", c.beta2);
  c.epsilon = s.number("epsilon", c.epsilon);
  const std::string opt = s.string("optimizer", "adam");
  if (opt == "plain") {
    c.optimizer = Stage1Optimizer::kPlain;
  } else if (opt != "adam") {
    fail("stage1.optimizer", "expected \"adam\" or \"plain\"");
  }
  c.grad_samples = static_cast<int>(s.integer("grad_samples", c.grad_samples));
  s.finish();
}

inline void parse_stage2(const json& j, ExperimentConfig& cfg) {
  Section s(j, "stage2");
  cfg.stage2.stride = static_cast<int>(s.integer("stride", cfg.stage2.stride));
  cfg.stage2.xi = s.number("xi", cfg.stage2.xi);
  s.finish();
}

inline LatentSpec parse_latent(const json& j) {
  Section s(j, "latent");
  LatentSpec l;
  l.d = static_cast<int>(s.integer("d", l.d));
  l.scale = s.number("scale", l.scale);
  if (s.has("offset_seed")) l.offset_seed = s.unsigned_integer("offset_seed", 0);
  s.finish();
  if (l.d < 1) fail("latent.d", "must be >= 1");
  if (!(l.scale > 0.0)) fail("latent.scale", "must be positive");
  return l;
}

inline OutputSpec parse_output(const json& j) {
  Section s(j, "output");
  OutputSpec o;
  o.csv = s.string("csv", o.csv);
  o.svg = s.string("svg", o.svg);
  o.summary = s.string("summary", o.summary);
  s.finish();
  return o;
}

inline PerceptionSpec parse_perception(const json& j) {
  Section s(j, "perception");
  PerceptionSpec p;
  p.batch = s.integer("batch", p.batch);
  p.reps = static_cast<int>(s.integer("reps", p.reps));
  s.finish();
  if (p.batch < 1 || p.batch > kAssignmentCap || p.reps < 1) fail("perception", "need 1 <= batch <= 2048, reps >= 1");
  return p;
}

inline VerifySpec parse_verify(const json& j) {
  Section s(j, "verify");
  VerifySpec v;
  v.w_scale = s.number("w_scale", v.w_scale);
  if (s.has("lipschitz_override")) v.lipschitz_override = s.number("lipschitz_override");
  v.trials = static_cast<int>(s.integer("trials", v.trials));
  v.draws = static_cast<int>(s.integer("draws", v.draws));
  if (const json* t1 = s.find("t1_values")) {
    const Eigen::VectorXd t = to_vector(*t1, "verify.t1_values");
    v.t1_values.assign(t.data(), t.data() + t.size());
  }
  if (const json* pts = s.find("points")) {
    const Eigen::VectorXd p = to_vector(*pts, "verify.points");
    v.points.assign(p.data(), p.data() + p.size());
  }
  s.finish();
  if (!(v.w_scale > 0.0)) fail("verify.w_scale", "must be positive");
  if (v.trials < 2 || v.draws < 2) fail("verify", "trials and draws must be >= 2");
  return v;
}

}  // namespace detail

/// Validates a parsed document and fills defaults. Throws ConfigError.
inline ExperimentConfig parse_config(const json& doc) {
  detail::Section root(doc, "");
  ExperimentConfig cfg;
  if (const json* j = root.find("schedule")) cfg.schedule = detail::parse_schedule(*j);
  if (const json* j = root.find("prior")) cfg.prior = detail::parse_prior(*j);
  if (const json* j = root.find("observation")) cfg.observation = detail::parse_observation(*j);
  cfg.score = detail::parse_score(root.string("score", "exact"), root.string("jacobian", "full"));
  if (const json* j = root.find("stage1")) detail::parse_stage1(*j, cfg);
  if (const json* j = root.find("stage2")) detail::parse_stage2(*j, cfg);
  if (const json* j = root.find("latent")) cfg.latent = detail::parse_latent(*j);
  if (const json* j = root.find("output")) cfg.output = detail::parse_output(*j);
  if (const json* j = root.find("perception")) cfg.perception = detail::parse_perception(*j);
  if (const json* j = root.find("verify")) cfg.verify = detail::parse_verify(*j);
  if (const json* j = root.find("t0_grid")) {
    if (!j->is_array() || j->empty()) detail::fail("t0_grid", "expected a non-empty list");
    cfg.t0_grid.clear();
    for (const auto& t : *j) {
      if (!t.is_number_integer()) detail::fail("t0_grid", "times must be integers");
      cfg.t0_grid.push_back(t.get<int>());
    }
  }
  const std::int64_t n = root.integer("n_trials", static_cast<std::int64_t>(cfg.n_trials));
  if (n < 1) detail::fail("n_trials", "must be >= 1");
  cfg.n_trials = static_cast<std::size_t>(n);
  cfg.seed = root.unsigned_integer("seed", cfg.seed);
  root.finish();

  const Schedule sched = cfg.make_schedule();
  for (int t0 : cfg.t0_grid) {
    if (t0 < 0 || t0 > cfg.schedule.steps) detail::fail("t0_grid", "time outside [0, T]");
  }
  try {
    if (cfg.auto_w) cfg.stage1.w = 1.0;  // placeholder until the prior is known
    cfg.stage1.validate(sched);
    Stage2Config probe = cfg.stage2;
    probe.t0 = 0;
    probe.validate(sched);
  } catch (const Error& e) {
    detail::fail("stage", e.what());
  }
  if (cfg.auto_w) {
    if (cfg.observation.sigma_y <= 0.0) detail::fail("stage1.w", "\"auto\" requires sigma_y > 0");
    if (cfg.stage1.likelihood_form != LikelihoodForm::kSquared) {
      detail::fail("stage1.w", "\"auto\" requires the squared likelihood form");
    }
  }
  if (cfg.latent) {
    if (!cfg.observation.dim) detail::fail("observation.dim", "required with a latent section");
    if (cfg.latent->d != cfg.prior.dim) detail::fail("latent.d", "must equal the prior dimension");
    if (cfg.latent->d > *cfg.observation.dim) detail::fail("latent.d", "must not exceed observation.dim");
    if (cfg.prior.kind != PriorKind::kGaussian && cfg.prior.kind != PriorKind::kMixture) {
      detail::fail("latent", "latent pipeline needs a gaussian or gm prior");
    }
  } else if (cfg.observation.dim && *cfg.observation.dim != cfg.prior.dim) {
    detail::fail("observation.dim", "must equal the prior dimension");
  }
  cfg.source = doc;
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
  return parse_config(doc);
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Hash of the normalized config with the effective seed.
inline std::uint64_t config_hash(const ExperimentConfig& cfg) {
  json doc = cfg.source;
  doc["seed"] = cfg.seed;
  return fnv1a(doc.dump());
}

}  // namespace dptrav::harness

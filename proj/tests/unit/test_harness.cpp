#include <algorithm>
#include <cmath>
#include <string>

#include <gtest/gtest.h>

#include "dptrav/harness.hpp"

using namespace dptrav;
using namespace dptrav::harness;
using nlohmann::json;

namespace {

json running_case() {
  return json::parse(R"({
    "prior": {"type": "gaussian", "dim": 1, "var": 1.0},
    "observation": {"task": "denoise", "sigma_y": 1.0},
    "t0_grid": [0, 1000],
    "n_trials": 2000,
    "seed": 7
  })");
}

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

std::size_t count_status(const VerifyReport& r, const std::string& name, CheckStatus status) {
  return static_cast<std::size_t>(std::count_if(r.checks.begin(), r.checks.end(), [&](const CheckResult& c) {
    return c.name == name && c.status == status;
  }));
}

}  // namespace

TEST(Config, DefaultsParse) {
  const ExperimentConfig cfg = parse_config(json::object());
  EXPECT_TRUE(cfg.auto_w);
  EXPECT_EQ(cfg.prior.dim, 1);
  EXPECT_EQ(cfg.observation.op, "denoise");
  EXPECT_EQ(cfg.t0_grid, std::vector<int>{0});
}

TEST(Config, RejectsUnknownKeys) {
  EXPECT_THROW(parse_config(json::parse(R"({"prior": {"type": "gaussian", "dimm": 1}})")), ConfigError);
  EXPECT_THROW(parse_config(json::parse(R"({"sead": 1})")), ConfigError);
  EXPECT_THROW(parse_config(json::parse(R"({"stage2": {"stride": 1, "t0": 5}})")), ConfigError);
}

TEST(Config, RejectsBadValues) {
  for (const char* text : {
           R"({"observation": {"sigma_y": -1}})",
           R"({"t0_grid": [1001]})",
           R"({"t0_grid": []})",
           R"({"n_trials": 0})",
           R"({"stage1": {"w": "large"}})",
           R"({"stage1": {"t1": 0}})",
           R"({"score": "guess"})",
           R"({"jacobian": "half"})",
           R"({"observation": {"task": "blur"}})",
           R"({"prior": {"type": "gm", "weights": [0.5, 0.6], "means": [[0], [1]], "vars": [1, 1]}})",
           R"({"observation": {"sigma_y": 0}})",
           R"({"perception": {"batch": 4096}})",
           R"({"verify": {"w_scale": 0}})",
       }) {
    EXPECT_THROW(
        {
          const ExperimentConfig cfg = parse_config(json::parse(text));
          (void)Problem(cfg);
        },
        Error)
        << text;
  }
}

TEST(Config, NamesTheOffendingKey) {
  try {
    parse_config(json::parse(R"({"observation": {"task": "mask", "keep": [0], "sigma": 1}})"));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("sigma"), std::string::npos) << e.what();
  }
}

TEST(Config, HashTracksContent) {
  const ExperimentConfig a = parse_config(running_case());
  json other = running_case();
  other["seed"] = 8;
  EXPECT_EQ(config_hash(a), config_hash(parse_config(running_case())));
  EXPECT_NE(config_hash(a), config_hash(parse_config(other)));
}

TEST(Report, OnePointCsvHasHeaderAndRow) {
  json doc = running_case();
  doc["t0_grid"] = {0};
  doc["n_trials"] = 8;
  const SweepResult r = run_sweep(parse_config(doc));
  const std::string csv = csv_text(r.points);
  EXPECT_EQ(count(csv, "\n"), 2u);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kCsvHeader);
}

TEST(Report, CsvRoundTripIsExact) {
  std::vector<DpCurvePoint> pts(3);
  pts[0] = {0.0, 0.1 + 0.2, 1.0 / 3.0, std::sqrt(2.0), 1e-17, 100};
  pts[1] = {250.0, 1e300, std::nullopt, 0.0, std::nullopt, 1};
  pts[2] = {1000.0, 5e-324, 0.0, 123456789.123456789, 2.0 / 7.0, 99999};
  const std::vector<DpCurvePoint> back = parse_csv_text(csv_text(pts));
  ASSERT_EQ(back.size(), pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    EXPECT_EQ(back[i].t0, pts[i].t0);
    EXPECT_EQ(back[i].distortion_mean, pts[i].distortion_mean);
    EXPECT_EQ(back[i].distortion_stderr, pts[i].distortion_stderr);
    EXPECT_EQ(back[i].w2, pts[i].w2);
    EXPECT_EQ(back[i].w2_stderr, pts[i].w2_stderr);
    EXPECT_EQ(back[i].n_trials, pts[i].n_trials);
  }
  EXPECT_EQ(csv_text(back), csv_text(pts));
}

TEST(Report, SingleTrialHasNoStandardErrors) {
  json doc = running_case();
  doc["n_trials"] = 1;
  const SweepResult r = run_sweep(parse_config(doc));
  for (const auto& p : r.points) {
    EXPECT_FALSE(p.distortion_stderr.has_value());
    EXPECT_FALSE(p.w2_stderr.has_value());
  }
  EXPECT_EQ(count(csv_text(r.points), "NA"), 2 * r.points.size());
}

TEST(Report, SvgHasOneMarkerPerPoint) {
  std::vector<DpCurvePoint> pts(4);
  for (int i = 0; i < 4; ++i) pts[static_cast<std::size_t>(i)] = {i * 100.0, 0.5 + 0.1 * i, 0.01, 0.3 - 0.05 * i, 0.01, 10};
  const DpEndpoints e{0.5, std::sqrt(0.5)};
  const std::string svg = svg_text(pts, sample_ideal_curve(e));
  EXPECT_EQ(count(svg, "<circle class=\"point\""), 4u);
  EXPECT_EQ(count(svg, "<path class=\"ideal\""), 1u);
  EXPECT_EQ(count(svg, "<line class=\"axis\""), 2u);
  EXPECT_EQ(count(svg, "<svg"), 1u);
  EXPECT_EQ(count(svg, "</svg>"), 1u);
  EXPECT_EQ(count(svg_text(pts, {}), "<path class=\"ideal\""), 0u);
  EXPECT_THROW(svg_text({}, {}), Error);
}

TEST(Sweep, DeterministicAndIndependentOfJobs) {
  json doc = running_case();
  doc["n_trials"] = 64;
  doc["t0_grid"] = {0, 100, 400};
  const ExperimentConfig cfg = parse_config(doc);
  const std::string a = csv_text(run_sweep(cfg, 1).points);
  EXPECT_EQ(a, csv_text(run_sweep(cfg, 1).points));
  EXPECT_EQ(a, csv_text(run_sweep(cfg, 3).points));
  doc["seed"] = 8;
  EXPECT_NE(a, csv_text(run_sweep(parse_config(doc), 1).points));
}

TEST(Sweep, EndpointsOfTheRunningCase) {
  const SweepResult r = run_sweep(parse_config(running_case()));
  ASSERT_EQ(r.points.size(), 2u);
  ASSERT_TRUE(r.endpoints.has_value());
  EXPECT_NEAR(r.endpoints->d_star, 0.5, 1e-12);
  // t0 = 0 returns the MAP, which equals the MMSE here.
  EXPECT_NEAR(r.points[0].distortion_mean, 0.5, 0.05 * 0.5);
  // t0 = T samples the posterior: twice the MMSE and the prior's law.
  EXPECT_NEAR(r.points[1].distortion_mean, 1.0, 0.05);
  EXPECT_LT(r.points[1].w2, 0.1);
  EXPECT_GT(r.points[0].w2, r.points[1].w2);
  const json summary = summary_json(r);
  EXPECT_EQ(summary["seed"], 7u);
  EXPECT_EQ(summary["failed_trials"], 0u);
}

TEST(Verify, GaussianBatteryPasses) {
  json doc = running_case();
  doc["t0_grid"] = {0, 100, 300, 1000};
  doc["verify"] = {{"trials", 10000}, {"draws", 20000}};
  const VerifyReport rep = verify(parse_config(doc));
  for (const auto& c : rep.checks) EXPECT_NE(c.status, CheckStatus::kFail) << format_check(c);
  EXPECT_GT(count_status(rep, "thm33_prior_gradient", CheckStatus::kPass), 0u);
  EXPECT_EQ(count_status(rep, "thm32_map_mmse", CheckStatus::kPass), 1u);
  EXPECT_EQ(count_status(rep, "thm35_w2_bound", CheckStatus::kPass), 4u);
  EXPECT_TRUE(rep.passed());
}

TEST(Verify, WrongPriorWeightFails) {
  json doc = running_case();
  doc["verify"] = {{"w_scale", 2.0}, {"trials", 100}, {"draws", 20000}};
  const VerifyReport rep = verify(parse_config(doc));
  EXPECT_GT(count_status(rep, "thm33_prior_gradient", CheckStatus::kFail), 0u);
  EXPECT_FALSE(rep.passed());
}

TEST(Verify, MonotoneBoundGatedOnLipschitz) {
  json doc = running_case();
  doc["t0_grid"] = {0, 500};
  doc["verify"] = {{"trials", 200}, {"draws", 1000}};
  // Posterior variance 0.5 gives L_s = 2.
  const VerifyReport gated = verify(parse_config(doc));
  EXPECT_EQ(count_status(gated, "cor36_bound_monotone", CheckStatus::kNotApplicable), 1u);
  doc["verify"]["lipschitz_override"] = 0.5;
  const VerifyReport open = verify(parse_config(doc));
  EXPECT_EQ(count_status(open, "cor36_bound_monotone", CheckStatus::kPass), 1u);
}

TEST(Verify, NonlinearProblemReportsNotApplicable) {
  json doc = running_case();
  doc["observation"] = {{"task", "clip"}, {"threshold", 1.0}, {"sigma_y", 0.5}};
  doc["score"] = "dps";
  doc["verify"] = {{"trials", 50}, {"draws", 1000}};
  const VerifyReport rep = verify(parse_config(doc));
  EXPECT_EQ(count_status(rep, "thm35_w2_bound", CheckStatus::kNotApplicable), 1u);
  EXPECT_TRUE(rep.passed());
}

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dptrav/dptrav.hpp"
#include "dptrav/harness.hpp"

namespace fs = std::filesystem;
using dptrav::harness::json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  int jobs = 1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config (JSON)")->required();
  cmd->add_option("--seed", c.seed, "override the config seed");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--jobs", c.jobs, "worker threads")->check(CLI::PositiveNumber);
}

dptrav::harness::ExperimentConfig load(const Common& c) {
  auto cfg = dptrav::harness::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

std::string out_path(const Common& c, const std::string& name) {
  fs::create_directories(c.out);
  return (fs::path(c.out) / name).string();
}

json to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(to_json(Eigen::VectorXd(m.row(r).transpose())));
  return rows;
}

/// The observation of trial 0, as used by oracle and map.
struct Instance {
  Eigen::VectorXd z;
  Eigen::VectorXd x;
  dptrav::Observation obs;
};

Instance first_instance(const dptrav::harness::Problem& pb) {
  dptrav::Rng rng = dptrav::derive_stream(pb.config().seed, {dptrav::tag(dptrav::StreamTag::kObservation), 0});
  Eigen::VectorXd z = pb.sample_model(rng);
  Eigen::VectorXd x = pb.to_data(z);
  dptrav::Observation obs = pb.observe_data(x, rng);
  return {std::move(z), std::move(x), std::move(obs)};
}

int cmd_oracle(const Common& c) {
  const auto cfg = load(c);
  const dptrav::harness::Problem pb(cfg);
  const Instance inst = first_instance(pb);
  json j;
  j["x"] = to_json(inst.x);
  j["y"] = to_json(inst.obs.y);
  const dptrav::LinearOperator* lin = inst.obs.linear();
  if (pb.mixture() && lin && cfg.observation.sigma_y > 0.0) {
    const auto post = pb.exact_posterior_law(inst.obs);
    json comps = json::array();
    for (std::size_t k = 0; k < post.size(); ++k) {
      comps.push_back({{"weight", post.weights()[static_cast<Eigen::Index>(k)]},
                       {"mean", to_json(post.mean(k))},
                       {"cov", to_json(post.cov(k))}});
    }
    j["posterior"] = comps;
    const auto mode = dptrav::map_point(post);
    const Eigen::VectorXd mmse = dptrav::mmse(post);
    j["mmse"] = to_json(pb.codec() ? pb.codec()->decode(mmse) : mmse);
    j["map"] = to_json(pb.codec() ? pb.codec()->decode(mode.x) : mode.x);
  } else if (pb.grid() && lin && cfg.observation.sigma_y > 0.0) {
    const auto st = dptrav::grid_posterior_stats(*pb.grid(), inst.obs);
    j["mmse"] = to_json(st.mmse);
    j["map"] = to_json(st.map);
    j["mu"] = st.mu ? json(*st.mu) : json(nullptr);
  }
  dptrav::Rng erng = dptrav::derive_stream(cfg.seed, {dptrav::tag(dptrav::StreamTag::kEndpoints)});
  if (const auto e = dptrav::harness::problem_endpoints(pb, erng)) {
    j["endpoints"] = {{"d_star", e->d_star}, {"p_star", e->p_star}};
  }
  const std::string text = j.dump(2);
  std::cout << text << "\n";
  if (c.out != ".") dptrav::harness::detail::write_file(out_path(c, "oracle.json"), text + "\n");
  return 0;
}

int cmd_map(const Common& c) {
  const auto cfg = load(c);
  const dptrav::harness::Problem pb(cfg);
  const Instance inst = first_instance(pb);
  dptrav::Rng rng = dptrav::derive_stream(cfg.seed, {dptrav::tag(dptrav::StreamTag::kStage1), 0});
  const auto res = pb.stage1(inst.obs, rng);
  const Eigen::VectorXd x_map = pb.to_data(res.x_map);
  json j;
  j["x_map"] = to_json(x_map);
  j["w"] = pb.stage1().w;
  j["trace"] = res.trace;
  std::cout << "x_map:";
  for (Eigen::Index i = 0; i < x_map.size(); ++i) std::cout << " " << x_map[i];
  std::cout << "\n";
  std::string trace;
  for (double v : res.trace) trace += dptrav::harness::detail::fmt17(v) + "\n";
  dptrav::harness::detail::write_file(out_path(c, "map.json"), j.dump(2) + "\n");
  dptrav::harness::detail::write_file(out_path(c, "trace.txt"), trace);
  std::cout << "objective trace: " << res.trace.size() << " values, final " << res.trace.back() << " ("
            << out_path(c, "trace.txt") << ")\n";
  return 0;
}

int cmd_traverse(const Common& c) {
  const auto cfg = load(c);
  const auto r = dptrav::harness::run_sweep(cfg, c.jobs);
  dptrav::harness::emit_csv(r, out_path(c, cfg.output.csv));
  dptrav::harness::emit_svg(r, out_path(c, cfg.output.svg));
  dptrav::harness::emit_summary(r, out_path(c, cfg.output.summary));
  std::cout << dptrav::harness::csv_text(r.points);
  if (r.endpoints) std::cout << "D* = " << r.endpoints->d_star << ", P* = " << r.endpoints->p_star << "\n";
  return 0;
}

int cmd_verify(const Common& c) {
  const auto cfg = load(c);
  const auto rep = dptrav::harness::verify(cfg);
  for (const auto& chk : rep.checks) std::cout << dptrav::harness::format_check(chk) << "\n";
  std::cout << (rep.passed() ? "verify: all checks passed" : "verify: FAILED") << "\n";
  return rep.passed() ? 0 : 1;
}

int cmd_plot(const Common& c) {
  const auto cfg = load(c);
  const auto points = dptrav::harness::parse_csv(out_path(c, cfg.output.csv));
  const dptrav::harness::Problem pb(cfg);
  dptrav::Rng erng = dptrav::derive_stream(cfg.seed, {dptrav::tag(dptrav::StreamTag::kEndpoints)});
  std::vector<std::pair<double, double>> ideal;
  if (const auto e = dptrav::harness::problem_endpoints(pb, erng)) ideal = dptrav::harness::sample_ideal_curve(*e);
  dptrav::harness::detail::write_file(out_path(c, cfg.output.svg), dptrav::harness::svg_text(points, ideal));
  std::cout << "wrote " << out_path(c, cfg.output.svg) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distortion-perception traversal on analytic priors"};
  app.require_subcommand(1);
  Common c;
  struct Cmd {
    const char* name;
    const char* help;
    int (*fn)(const Common&);
  };
  const Cmd cmds[] = {
      {"oracle", "closed-form posterior, MAP/MMSE and D-P endpoints for one observation", cmd_oracle},
      {"map", "one Stage-1 run: x_map and objective trace", cmd_map},
      {"traverse", "D-P sweep over t0; writes CSV, SVG and summary", cmd_traverse},
      {"verify", "theorem checks; exit 1 on any failure", cmd_verify},
      {"plot", "redraw the SVG from an existing CSV", cmd_plot},
  };
  for (const auto& cmd : cmds) add_common(app.add_subcommand(cmd.name, cmd.help), c);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  try {
    for (const auto& cmd : cmds) {
      if (app.got_subcommand(cmd.name)) return cmd.fn(c);
    }
  } catch (const dptrav::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

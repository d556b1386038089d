// contagion: command-line front end for the clearing engine.
//
//   contagion validate CONFIG      parse, build and echo the effective config
//   contagion clear CONFIG         one attained equilibrium plus fixed-price diagnostics
//   contagion sweep CONFIG         attained price at every sweep point
//   contagion scan CONFIG          sweep with the full equilibrium set at every point
//   contagion grexit CONFIG        two-currency exit pipeline with impact sweep
//
// Exit status: 0 success, 1 configuration error, 2 solver failure at some point.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "contagion/scenarios.hpp"

namespace fs = std::filesystem;
using namespace contagion;
using scenarios::ScenarioConfig;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kPartialFailure = 2;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format = "json";
};

ScenarioConfig load(const Options& opt) {
  ScenarioConfig cfg = scenarios::load_config(opt.config);
  if (opt.seed) cfg.seed = *opt.seed;
  if (!opt.out.empty()) cfg.output.directory = opt.out;
  return cfg;
}

/// Opens <dir>/<prefix>_<name> for writing, or returns nullopt when no
/// output directory is configured.
std::optional<std::ofstream> open_output(const ScenarioConfig& cfg, const std::string& name) {
  if (cfg.output.directory.empty()) return std::nullopt;
  fs::create_directories(cfg.output.directory);
  const fs::path p = fs::path(cfg.output.directory) / (cfg.output.prefix + "_" + name);
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

int status(std::size_t failures) {
  if (failures) std::cerr << "warning: " << failures << " point(s) did not converge or failed\n";
  return failures ? kPartialFailure : kOk;
}

int cmd_validate(const Options& opt) {
  const ScenarioConfig cfg = load(opt);
  const auto sc = scenarios::build_scenario(cfg);
  (void)scenarios::sweep_points(cfg, sc.demand);
  if (!liquidation_value_increasing(sc.demand))
    std::cerr << "warning: liquidation value z^T F(z) is not strictly increasing on the validation grid\n";
  json out = {{"valid", true},
              {"config_hash", cfg.hash()},
              {"firms", sc.network.firms()},
              {"assets", sc.network.assets()},
              {"society_linked", sc.network.society_linked()},
              {"effective_config", cfg.effective()}};
  std::cout << out.dump(2) << "\n";
  return kOk;
}

int cmd_clear(const Options& opt) {
  const ScenarioConfig cfg = load(opt);
  const auto sc = scenarios::build_scenario(cfg);
  const auto points = scenarios::sweep_points(cfg, sc.demand);
  const auto& [q0, gamma0] = points.front();
  const ClearingProblem pb(sc.network, sc.rules);

  const TatonnementTrace tr = tatonnement(pb, sc.demand, gamma0, cfg.solver.price);
  ClearingResult attained = tr.clearing;
  attained.residual = tr.residual;
  attained.converged = tr.converged;

  const auto greatest = clearing_holdings(pb, q0, Selector::Greatest, cfg.solver.clearing);
  const auto least = clearing_holdings(pb, q0, Selector::Least, cfg.solver.clearing);
  const auto fda = fictitious_default(pb, q0, cfg.solver.clearing);

  json report = {{"schema_version", io::kSchemaVersion},
                 {"config_hash", cfg.hash()},
                 {"seed", cfg.seed},
                 {"q0", q0},
                 {"gamma0", gamma0},
                 {"attained", io::result_to_json(attained)},
                 {"attained_diagnostics", io::diagnostics_to_json(diagnostics(pb, attained))},
                 {"tatonnement", {{"steps", tr.steps}, {"initial_step", tr.initial_step}, {"final_step", tr.final_step}}},
                 {"fixed_price",
                  {{"greatest", io::result_to_json(greatest)},
                   {"least", io::result_to_json(least)},
                   {"fictitious_default", {{"rounds", fda.rounds}, {"default_sets", fda.default_sets}}}}}};

  if (auto f = open_output(cfg, "clear.json")) *f << report.dump(2) << "\n";
  if (auto f = open_output(cfg, "trace.csv")) io::write_trace_csv(*f, tr);
  if (opt.format == "csv")
    io::write_trace_csv(std::cout, tr);
  else
    std::cout << report.dump(2) << "\n";
  return status(!(tr.converged && greatest.converged && least.converged));
}

int cmd_sweep(const Options& opt, bool force_scan) {
  ScenarioConfig cfg = load(opt);
  if (force_scan) cfg.solver.scan = true;
  const auto sc = scenarios::build_scenario(cfg);
  if (force_scan && sc.network.assets() != 2) throw std::invalid_argument("scan supports two-asset networks only");
  const auto res = scenarios::run_scenario(cfg, sc);
  const json summary = scenarios::sweep_summary(cfg, res);

  if (auto f = open_output(cfg, "sweep.csv")) scenarios::write_sweep_csv(*f, res);
  if (auto f = open_output(cfg, "summary.json")) *f << summary.dump(2) << "\n";
  if (sc.network.assets() >= 2)
    if (auto f = open_output(cfg, "price_curve.csv")) scenarios::emit_plot_data(*f, res, "price_curve");
  if (cfg.solver.scan)
    if (auto f = open_output(cfg, "equilibrium_set.csv")) scenarios::emit_plot_data(*f, res, "equilibrium_set");
  if (cfg.output.traces)
    if (auto f = open_output(cfg, "trace.csv")) scenarios::emit_plot_data(*f, res, "trace");

  if (opt.format == "csv") {
    if (force_scan)
      scenarios::emit_plot_data(std::cout, res, "equilibrium_set");
    else
      scenarios::write_sweep_csv(std::cout, res);
  } else {
    std::cout << summary.dump(2) << "\n";
  }
  return status(res.failures());
}

int cmd_grexit(const Options& opt) {
  const ScenarioConfig cfg = load(opt);
  const auto in = scenarios::grexit_inputs(cfg);
  const auto rep = scenarios::run_grexit(in);
  const auto res = scenarios::to_sweep_result(cfg, rep);

  auto named = [&](const std::vector<std::size_t>& ids) {
    json out = json::array();
    for (auto i : ids) out.push_back({{"firm", i}, {"name", rep.names[i]}});
    return out;
  };
  json orders = json::array();
  for (std::size_t i = 0; i < rep.rules.payment.size(); ++i)
    orders.push_back({{"firm", i}, {"name", rep.names[i]}, {"home", in.home.contains(i)},
                      {"order", rep.rules.payment[i].resolved_order(2)}});
  json impact = json::array();
  for (const auto& r : rep.impact) {
    json e = {{"b", r.impact}, {"q_star_2", r.attained.size() > 1 ? json(r.attained[1]) : json()},
              {"converged", r.converged}, {"defaults", named(r.defaults)}};
    if (!r.error.empty()) e["error"] = r.error;
    impact.push_back(e);
  }
  json report = {{"schema_version", io::kSchemaVersion},
                 {"config_hash", cfg.hash()},
                 {"impact", in.impact},
                 {"depth", in.depth},
                 {"exchange_rate", rep.exchange_rate},
                 {"converged", rep.converged},
                 {"residual", rep.residual},
                 {"defaults", named(rep.defaults)},
                 {"baseline_defaults", named(rep.baseline_defaults)},
                 {"payment_orders", orders},
                 {"impact_sweep", impact}};

  if (auto f = open_output(cfg, "grexit.json")) *f << report.dump(2) << "\n";
  if (auto f = open_output(cfg, "impact_sweep.csv")) scenarios::emit_plot_data(*f, res, "impact_sweep");
  if (opt.format == "csv")
    scenarios::emit_plot_data(std::cout, res, "impact_sweep");
  else
    std::cout << report.dump(2) << "\n";
  return status(res.failures());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-asset clearing engine with fire-sale price impact"};
  app.require_subcommand(1);
  Options opt;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Override the config seed");
  app.add_option("--out", opt.out, "Output directory (overrides output.directory)");
  app.add_option("--format", opt.format, "Format printed to stdout")->check(CLI::IsMember({"json", "csv"}));

  auto* validate = app.add_subcommand("validate", "Validate a config and print its effective form");
  auto* clear = app.add_subcommand("clear", "Single clearing run at the first sweep point");
  auto* sweep = app.add_subcommand("sweep", "Attained equilibrium over the shock sweep");
  auto* scan = app.add_subcommand("scan", "Equilibrium set over the shock sweep (two assets)");
  auto* grexit = app.add_subcommand("grexit", "Two-currency exit scenario with impact sweep");
  for (auto* sub : {validate, clear, sweep, scan, grexit})
    sub->add_option("config", opt.config, "Scenario config (JSON)")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }
  if (seed_opt->count()) opt.seed = seed;

  try {
    if (*validate) return cmd_validate(opt);
    if (*clear) return cmd_clear(opt);
    if (*sweep) return cmd_sweep(opt, false);
    if (*scan) return cmd_sweep(opt, true);
    if (*grexit) return cmd_grexit(opt);
  } catch (const io::FormatError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kPartialFailure;
  }
  return kConfigError;
}

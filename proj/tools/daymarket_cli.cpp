// Command-line entry point: decentralized run, centralized oracle solve,
// fixed-point verification, synthetic scenario generation, and metric
// recomputation from a trace directory.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "daymarket/scenario.hpp"
#include "daymarket/sim.hpp"
#include "daymarket/trace_io.hpp"

namespace fs = std::filesystem;
using namespace daymarket;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitNoConvergence = 2;

struct CommonOpts {
  std::string scenario;
  std::string out = "out";
  int max_iter = -1;
  double tol = -1.0;
  long seed = -1;
  bool baseline = false;
};

Scenario load_with_overrides(const CommonOpts& o) {
  Scenario sc = load_scenario(o.scenario);
  if (o.max_iter > 0) sc.sim.max_iter = o.max_iter;
  if (o.tol > 0) sc.sim.xi = o.tol;
  if (o.seed >= 0) sc.sim.seed = static_cast<unsigned>(o.seed);
  if (o.baseline) sc = make_baseline(sc);
  return sc;
}

int cmd_run(const CommonOpts& o) {
  const Scenario sc = load_with_overrides(o);
  const IterationTrace trace = run(sc);
  write_trace(o.out, sc, trace);
  const MarketMetrics m = compute_metrics(trace, sc);
  write_metrics(fs::path(o.out) / "metrics.txt", m);
  std::cout << "status: "
            << (trace.status == RunStatus::converged ? "converged"
                                                     : "max_iter")
            << "  iterations: " << trace.iterations()
            << "  f_iso: " << format_double(trace.final_objective_cents)
            << " cents  max_kkt: " << format_double(trace.max_kkt_residual)
            << "\n";
  return trace.status == RunStatus::converged ? kExitOk : kExitNoConvergence;
}

int cmd_solve(const CommonOpts& o) {
  const Scenario sc = load_with_overrides(o);
  const CentralizedSolution sol =
      centralized_solve(sc.grid, sc.aggregators, sc.generators, sc.iso);
  if (sol.status != QpStatus::optimal) {
    std::cerr << "centralized solve failed: " << to_string(sol.status);
    if (!sol.infeasibility.empty()) std::cerr << " (" << sol.infeasibility << ")";
    std::cerr << "\n";
    return kExitValidation;
  }
  fs::create_directories(o.out);
  const MarketIndex index =
      MarketIndex::build(sc.grid, sc.aggregators, sc.generators, sc.horizon);
  Eigen::VectorXd betas(sc.generators.size());
  for (size_t j = 0; j < sc.generators.size(); ++j)
    betas[j] = sc.generators[j].beta;
  const MarketSignals sig = compute_signals(sol.duals, sc.iso, betas, sc.grid,
                                            index, sc.generators);
  {
    std::ofstream f(fs::path(o.out) / "solve_summary.txt");
    f << "scenario: " << sc.name << "\n";
    f << "objective_cents: " << format_double(sol.objective_cents) << "\n";
    f << "kkt_residual: " << format_double(sol.kkt_residual) << "\n";
  }
  {
    std::ofstream f(fs::path(o.out) / "solve_prices.csv");
    f << "bus";
    for (int h = 1; h <= sc.horizon; ++h) f << ",h" << h;
    f << "\n";
    for (int b = 0; b < sc.grid.num_buses(); ++b) {
      f << (b + 1);
      for (int h = 0; h < sc.horizon; ++h)
        f << ',' << format_double(sig.rho(b, h));
      f << "\n";
    }
  }
  {
    std::ofstream f(fs::path(o.out) / "solve_dispatch.csv");
    f << "bus,kind";
    for (int h = 1; h <= sc.horizon; ++h) f << ",h" << h;
    f << "\n";
    for (size_t j = 0; j < sc.generators.size(); ++j) {
      f << sc.generators[j].bus << ",conv";
      for (int h = 0; h < sc.horizon; ++h)
        f << ',' << format_double(sol.decisions[j].p_conv[h]);
      f << "\n";
      f << sc.generators[j].bus << ",ren";
      for (int h = 0; h < sc.horizon; ++h)
        f << ',' << format_double(sol.decisions[j].p_ren[h]);
      f << "\n";
    }
  }
  std::cout << "objective_cents: " << format_double(sol.objective_cents)
            << "  kkt: " << format_double(sol.kkt_residual) << "\n";
  return kExitOk;
}

int cmd_verify(const CommonOpts& o, double dev_tol) {
  const Scenario sc = load_with_overrides(o);
  const Theorem2Report rep = verify_theorem2(sc.grid, sc.aggregators,
                                             sc.generators, sc.iso, dev_tol);
  std::cout << "entity, local_objective, restricted_objective, rel_deviation\n";
  for (const auto& e : rep.entities)
    std::cout << e.name << ", " << format_double(e.local_objective) << ", "
              << format_double(e.restricted_objective) << ", "
              << format_double(e.relative_deviation) << "\n";
  std::cout << "max_relative_deviation: "
            << format_double(rep.max_relative_deviation) << " (tol "
            << format_double(dev_tol) << ") -> "
            << (rep.passed ? "PASS" : "FAIL") << "\n";
  return rep.passed ? kExitOk : kExitNoConvergence;
}

int cmd_generate(const std::string& base, const std::string& out_path,
                 long seed, double omega_avg, double vartheta,
                 int renewables) {
  SyntheticSpec spec;
  if (seed >= 0) spec.seed = static_cast<unsigned>(seed);
  if (omega_avg > 0) spec.omega_avg = omega_avg;
  if (vartheta > 0) spec.vartheta_c = vartheta;
  if (renewables >= 0) spec.renewable_count = renewables;
  Scenario sc = generate_synthetic(spec, builtin_base_case(base));
  sc.name = fs::path(out_path).stem().string();
  fs::create_directories(fs::path(out_path).parent_path().empty()
                             ? "."
                             : fs::path(out_path).parent_path());
  save_scenario(sc, out_path);
  std::cout << "wrote " << out_path << "\n";
  return kExitOk;
}

int cmd_metrics(const CommonOpts& o, const std::string& trace_dir,
                const std::string& baseline_dir) {
  const Scenario sc = load_scenario(o.scenario);
  const IterationTrace trace = read_final_state(trace_dir, sc);
  MarketMetrics m;
  if (!baseline_dir.empty()) {
    const Scenario base_sc = make_baseline(sc);
    const IterationTrace base = read_final_state(baseline_dir, base_sc);
    m = compute_metrics(trace, sc, &base);
  } else {
    m = compute_metrics(trace, sc);
  }
  write_metrics(fs::path(trace_dir) / "metrics.txt", m);
  std::cout << "mean_par: " << format_double(m.mean_par)
            << "  total_aggregator_cost: "
            << format_double(m.total_aggregator_cost) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Day-ahead electricity market clearing engine"};
  app.require_subcommand(1);

  CommonOpts opts;
  double verify_tol = 1e-4;
  std::string gen_base = "case30", gen_out = "case30.scn";
  long gen_seed = -1;
  double gen_omega = -1, gen_vartheta = -1;
  int gen_renewables = -1;
  std::string trace_dir, baseline_dir;

  const auto add_common = [&](CLI::App* cmd, bool needs_out) {
    cmd->add_option("--scenario", opts.scenario, "Scenario file")->required();
    if (needs_out) cmd->add_option("--out", opts.out, "Output directory");
    cmd->add_option("--max-iter", opts.max_iter, "Iteration cap override");
    cmd->add_option("--tol", opts.tol, "Convergence tolerance override");
    cmd->add_option("--seed", opts.seed, "Seed override");
    cmd->add_flag("--baseline", opts.baseline,
                  "No-DR benchmark: pinned loads, no renewables");
  };

  auto* c_run = app.add_subcommand("run", "Decentralized market trading run");
  add_common(c_run, true);
  auto* c_solve = app.add_subcommand("solve", "Centralized oracle solve");
  add_common(c_solve, true);
  auto* c_verify =
      app.add_subcommand("verify", "Fixed-point consistency report");
  add_common(c_verify, false);
  c_verify->add_option("--dev-tol", verify_tol, "Deviation tolerance");
  auto* c_gen = app.add_subcommand("generate", "Synthetic scenario generator");
  c_gen->add_option("--base", gen_base, "Base network: twobus|sixbus|case30");
  c_gen->add_option("--out", gen_out, "Output scenario path")->required();
  c_gen->add_option("--seed", gen_seed, "Seed");
  c_gen->add_option("--omega-avg", gen_omega, "Mean discomfort coefficient");
  c_gen->add_option("--vartheta", gen_vartheta, "Risk weight");
  c_gen->add_option("--renewables", gen_renewables, "Number of renewable units");
  auto* c_metrics =
      app.add_subcommand("metrics", "Recompute metrics from a trace");
  c_metrics->add_option("--scenario", opts.scenario, "Scenario file")
      ->required();
  c_metrics->add_option("--trace", trace_dir, "Trace directory")->required();
  c_metrics->add_option("--baseline-trace", baseline_dir,
                        "Baseline trace directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (c_run->parsed()) return cmd_run(opts);
    if (c_solve->parsed()) return cmd_solve(opts);
    if (c_verify->parsed()) return cmd_verify(opts, verify_tol);
    if (c_gen->parsed())
      return cmd_generate(gen_base, gen_out, gen_seed, gen_omega,
                          gen_vartheta, gen_renewables);
    if (c_metrics->parsed()) return cmd_metrics(opts, trace_dir, baseline_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitValidation;
}

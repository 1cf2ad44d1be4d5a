#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "daymarket/scenario.hpp"
#include "daymarket/sim.hpp"
#include "daymarket/trace_io.hpp"

using namespace daymarket;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Two-bus micro market on a unit power base (1 kW per unit).
Scenario micro_scenario() {
  Scenario sc;
  sc.name = "micro";
  sc.horizon = 2;
  sc.grid.base_mva = 1e-3;
  sc.grid.slack_bus = 1;
  sc.grid.buses = {{1, BusKind::generator, -1, 0},
                   {2, BusKind::aggregator, 0, -1}};
  sc.grid.lines = {{1, 2, 3.0, 100.0}};

  AggregatorConfig a;
  a.bus = 2;
  a.baseload = VectorXd::Zero(2);
  a.baseload << 2.0, 3.0;
  ControllableLoad ld;
  ld.id = "flex";
  ld.type = LoadType::type2;
  ld.horizon = {0, 1};
  ld.desired = VectorXd::Zero(2);
  ld.desired << 1.0, 2.0;
  ld.x_min = 0.5 * ld.desired;
  ld.x_max = 1.5 * ld.desired;
  ld.total_min = 0.95 * 3.0;
  ld.total_max = 1.05 * 3.0;
  ld.omega_h = VectorXd::Constant(2, 0.25);
  ld.omega_out = VectorXd::Constant(2, 50.0);
  a.loads = {ld};
  sc.aggregators = {a};

  GeneratorConfig g;
  g.bus = 1;
  g.a2 = 0.1;
  g.a1 = 1.0;
  g.a0 = 3.0;
  g.p_min = 0.0;
  g.p_max = 20.0;
  g.has_renewable = true;
  g.beta = 0.9;
  g.beta_iso = 0.9;
  g.samples.resize(4, 2);
  g.samples << 0.5, 0.8, 0.9, 1.4, 1.3, 1.9, 0.2, 0.6;
  g.offer_cap = g.samples.colwise().maxCoeff();
  sc.generators = {g};

  sc.iso.vartheta_c = 1.0;
  sc.iso.theta_max = 50.0;
  sc.iso.beta_iso = VectorXd::Constant(1, 0.9);
  sc.sim.schedule = {10.0, 0.2};
  sc.sim.xi = 1e-6;
  sc.sim.max_iter = 1500;
  sc.sim.seed = 1;
  return sc;
}

std::string serialize(const Scenario& sc, const IterationTrace& t,
                      const char* tag) {
  const auto dir = std::filesystem::temp_directory_path() /
                   (std::string("daymarket_test_") + tag);
  std::filesystem::remove_all(dir);
  write_trace(dir, sc, t);
  std::ostringstream all;
  for (const char* f :
       {"prices.csv", "angles.csv", "loads.csv", "generation.csv",
        "signals.csv", "convergence.csv", "run_meta.csv",
        "final_schedules.csv", "final_decisions.csv", "final_signals.csv"}) {
    std::ifstream in(dir / f);
    all << in.rdbuf();
  }
  return all.str();
}

}  // namespace

TEST_CASE("step_size schedule") {
  StepSchedule s{10.0, 0.2};
  CHECK(step_size(s, 1) == doctest::Approx(0.098039215686));
  CHECK(step_size(s, 45) == doctest::Approx(1.0 / 19.0));
  double prev = 1.0;
  for (int q = 1; q < 400; ++q) {
    CHECK(step_size(s, q) < prev);
    prev = step_size(s, q);
  }
  CHECK(prev < 0.012);
}

TEST_CASE("par") {
  VectorXd p(4);
  p << 1, 2, 3, 2;
  CHECK(par(p) == doctest::Approx(1.5));
  CHECK(par(VectorXd::Constant(7, 3.3)) == doctest::Approx(1.0));
  VectorXd spike = VectorXd::Constant(24, 1e-4);
  spike[23] = 10.0;
  CHECK(par(spike) ==
        doctest::Approx(10.0 / ((23 * 1e-4 + 10.0) / 24.0)));
  CHECK_THROWS_AS(par(VectorXd::Zero(3)), std::domain_error);
  VectorXd neg(2);
  neg << 1.0, -0.1;
  CHECK_THROWS_AS(par(neg), std::domain_error);
}

TEST_CASE("load_shift_pct") {
  VectorXd d(2), s(2);
  d << 2, 2;
  s << 1, 3;
  CHECK(load_shift_pct(d, s) == doctest::Approx(25.0));
  CHECK(load_shift_pct(d, d) == doctest::Approx(0.0));
  VectorXd d2(2), s2(2);
  d2 << 3, 1;
  s2 << 1, 3;
  CHECK(load_shift_pct(d2, s2) == doctest::Approx(50.0));
  CHECK_THROWS_AS(load_shift_pct(VectorXd::Zero(2), s2), std::domain_error);
}

TEST_CASE("decentralized run tracks the centralized oracle on the micro case") {
  const Scenario sc = micro_scenario();
  const IterationTrace trace = run(sc);
  INFO("iterations: " << trace.iterations());
  REQUIRE(trace.status == RunStatus::converged);
  CHECK(trace.max_kkt_residual <= 1e-6);

  const CentralizedSolution central =
      centralized_solve(sc.grid, sc.aggregators, sc.generators, sc.iso);
  REQUIRE(central.status == QpStatus::optimal);
  const double rel = std::abs(trace.final_objective_cents -
                              central.objective_cents) /
                     std::abs(central.objective_cents);
  INFO("f_run=" << trace.final_objective_cents
                << " f_central=" << central.objective_cents);
  CHECK(rel <= 5e-3);

  // every recorded state keeps multipliers nonnegative, slack pinned
  for (const auto& r : trace.records) {
    CHECK(r.angles.delta.row(0).cwiseAbs().maxCoeff() == 0.0);
    CHECK(r.duals.mu_upper.minCoeff() >= 0.0);
    CHECK(r.duals.mu_lower.minCoeff() >= 0.0);
    for (const auto& g : r.duals.gamma_iso)
      if (g.size()) CHECK(g.minCoeff() >= 0.0);
    for (const auto& e : r.duals.eta_iso)
      if (e.size()) CHECK(e.minCoeff() >= 0.0);
    for (const auto& al : r.duals.alpha_iso)
      if (al.size()) CHECK(al.minCoeff() >= 0.0);
  }

  // converged decisions are local optima under the final signals
  const IterationRecord& fin = trace.final_record();
  AgentSolveInfo info;
  (void)solve_aggregator_local(sc.aggregators[0],
                               fin.signals.rho.row(1).transpose(), &info);
  const double reported =
      total_cost(sc.aggregators[0], fin.reports.schedules[0],
                 fin.signals.rho.row(1).transpose());
  CHECK(std::abs(reported - info.objective) /
            std::max(1.0, std::abs(info.objective)) <=
        1e-4);
}

TEST_CASE("warm start at the centralized optimum stops immediately") {
  const Scenario sc = micro_scenario();
  const CentralizedSolution central =
      centralized_solve(sc.grid, sc.aggregators, sc.generators, sc.iso);
  REQUIRE(central.status == QpStatus::optimal);
  WarmStart warm;
  warm.angles = central.angles;
  warm.duals = central.duals;
  warm.schedules = central.schedules;
  warm.decisions = central.decisions;
  // threshold variables for the renewable unit at the centralized offers
  const GeneratorConfig& g = sc.generators[0];
  warm.decisions[0].alpha = VectorXd::Zero(sc.horizon);
  warm.decisions[0].eta = MatrixXd::Zero(g.num_samples(), sc.horizon);
  const IterationTrace trace = run(sc, &warm);
  CHECK(trace.status == RunStatus::converged);
  CHECK(trace.iterations() <= 2);
}

TEST_CASE("iteration cap reached on a cold start") {
  Scenario sc = micro_scenario();
  sc.sim.max_iter = 3;
  const IterationTrace trace = run(sc);
  CHECK(trace.status == RunStatus::max_iter_reached);
  CHECK(trace.iterations() == 3);
}

TEST_CASE("identical seeds give bit-identical traces") {
  const Scenario sc = micro_scenario();
  const IterationTrace t1 = run(sc);
  const IterationTrace t2 = run(sc);
  CHECK(serialize(sc, t1, "a") == serialize(sc, t2, "b"));

  Scenario sc2 = micro_scenario();
  sc2.sim.seed = 7;
  const IterationTrace t3 = run(sc2);
  CHECK(serialize(sc, t1, "c") != serialize(sc2, t3, "d"));
}

TEST_CASE("compute_metrics") {
  const Scenario sc = micro_scenario();
  const IterationTrace trace = run(sc);
  REQUIRE(trace.status == RunStatus::converged);

  SUBCASE("self-comparison gives zero deltas") {
    const MarketMetrics m = compute_metrics(trace, sc, &trace);
    CHECK(m.has_baseline);
    CHECK(m.par_reduction_pct == doctest::Approx(0.0));
    CHECK(m.peak_reduction_pct == doctest::Approx(0.0));
    CHECK(m.total_aggregator_cost ==
          doctest::Approx(m.total_aggregator_cost_baseline));
    for (double v : m.par_per_generator) CHECK(v >= 1.0);
    for (double v : m.load_shift_pct) {
      CHECK(v >= 0.0);
      CHECK(v <= 100.0);
    }
  }
  SUBCASE("a hand-built peak-shaving shift lowers the PAR") {
    VectorXd desired(2), shaved(2);
    desired << 4.0, 2.0;
    shaved << 3.0, 3.0;
    CHECK(par(shaved) < par(desired));
  }
  SUBCASE("no controllable loads means zero shift") {
    Scenario flat = micro_scenario();
    flat.aggregators[0].loads.clear();
    const IterationTrace t = run(flat);
    const MarketMetrics m = compute_metrics(t, flat);
    for (double v : m.load_shift_pct) CHECK(v == 0.0);
  }
}

TEST_CASE("metrics recompute from a written trace") {
  const Scenario sc = micro_scenario();
  const IterationTrace trace = run(sc);
  const auto dir =
      std::filesystem::temp_directory_path() / "daymarket_test_roundtrip";
  std::filesystem::remove_all(dir);
  write_trace(dir, sc, trace);
  const IterationTrace back = read_final_state(dir, sc);
  const MarketMetrics m1 = compute_metrics(trace, sc);
  const MarketMetrics m2 = compute_metrics(back, sc);
  CHECK(m1.mean_par == doctest::Approx(m2.mean_par).epsilon(1e-12));
  CHECK(m1.total_aggregator_cost ==
        doctest::Approx(m2.total_aggregator_cost).epsilon(1e-12));
  REQUIRE(m1.generator_profits.size() == m2.generator_profits.size());
  for (size_t i = 0; i < m1.generator_profits.size(); ++i)
    CHECK(m1.generator_profits[i] ==
          doctest::Approx(m2.generator_profits[i]).epsilon(1e-9));
}

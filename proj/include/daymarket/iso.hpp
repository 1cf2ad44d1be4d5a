// ISO coordinator: holds angles and Lagrange multipliers, performs the
// projected primal-dual update, emits nodal prices and shortfall penalties,
// and provides the centralized reference solve.
//
// Balance-equation orientation per bus (fixed so that the emitted price is
// rho = -lambda_agg at aggregator buses and rho = +lambda_gen at generator
// buses): aggregator-oriented residual is injection - flow, generator-
// oriented residual is flow - injection. A bus hosting both entities keeps a
// single generator-oriented balance row with the combined net injection.

#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "daymarket/aggregator.hpp"
#include "daymarket/generator.hpp"
#include "daymarket/grid.hpp"
#include "daymarket/qp.hpp"

namespace daymarket {

struct IsoConfig {
  double vartheta_c = 1.0;        // risk weight, > 0
  Eigen::VectorXd beta_iso;       // per-generator ISO confidence levels
  double theta_max = 0.0;         // penalty clamp ceiling; 0 => derive
};

// Row/bus bookkeeping shared by the update rules and the centralized QP.
struct MarketIndex {
  int hours = 0;
  std::vector<int> aggregator_bus;   // entity -> 0-based bus index
  std::vector<int> generator_bus;
  std::vector<int> agg_row_of_bus;   // bus -> row in lambda_agg, or -1
  std::vector<int> gen_row_of_bus;   // bus -> row in lambda_gen, or -1
  std::vector<int> agg_bus_of_row;
  std::vector<int> gen_bus_of_row;
  std::vector<int> colocated_agg_of_gen_bus;  // bus -> aggregator entity or -1

  static MarketIndex build(const GridCase& grid,
                           const std::vector<AggregatorConfig>& aggs,
                           const std::vector<GeneratorConfig>& gens,
                           int hours);
};

struct DualState {
  Eigen::MatrixXd lambda_agg;  // aggregator-oriented buses x hours
  Eigen::MatrixXd lambda_gen;  // generator-oriented buses x hours
  Eigen::MatrixXd mu_upper;    // lines x hours, >= 0
  Eigen::MatrixXd mu_lower;    // lines x hours, >= 0
  std::vector<Eigen::MatrixXd> gamma_iso;  // per generator: K x hours, >= 0
  std::vector<Eigen::VectorXd> alpha_iso;  // per generator: hours (per unit)
  std::vector<Eigen::MatrixXd> eta_iso;    // per generator: K x hours

  static DualState zeros(const GridCase& grid, const MarketIndex& index,
                         const std::vector<GeneratorConfig>& gens);
};

struct IsoState {
  AngleProfile angles;
  DualState duals;
};

struct MarketSignals {
  Eigen::MatrixXd rho;    // bus x hours, cents/kW
  Eigen::MatrixXd theta;  // generator x hours, cents/kW (zero rows for
                          // conventional-only units)
  int degenerate_penalty_events = 0;
};

// What agents send the coordinator each round, plus full decisions for
// diagnostics and tracing.
struct AgentReports {
  Eigen::MatrixXd load_kw;    // aggregator x hours (baseload + controllable)
  Eigen::MatrixXd p_conv_kw;  // generator x hours
  Eigen::MatrixXd p_ren_kw;   // generator x hours
  std::vector<LoadSchedule> schedules;
  std::vector<GeneratorDecision> decisions;
};

// Net per-unit injection per bus implied by the reports.
Eigen::MatrixXd injections_pu(const GridCase& grid, const MarketIndex& index,
                              const AgentReports& reports);

// f_ISO/S plus all relaxation terms; deterministic diagnostic scalar.
double lagrangian_value(const IsoState& state, const AgentReports& reports,
                        const IsoConfig& iso, const GridCase& grid,
                        const MarketIndex& index,
                        const std::vector<AggregatorConfig>& aggs,
                        const std::vector<GeneratorConfig>& gens);

// One projected gradient step: descent on angles and ISO-side CVaR
// variables, ascent on multipliers, projection onto the nonnegative cone,
// slack angle re-pinned to zero.
void update_primal_dual(IsoState& state, const AgentReports& reports,
                        const IsoConfig& iso, const GridCase& grid,
                        const MarketIndex& index,
                        const std::vector<GeneratorConfig>& gens, double step);

// Control signals: rho from the balance multipliers, theta from the
// gamma multipliers with the confidence-ratio factor, clamped to
// [0, theta_max]. A vanishing or negative denominator emits theta_max and is
// counted as a degenerate-penalty event.
MarketSignals compute_signals(const DualState& duals, const IsoConfig& iso,
                              const Eigen::VectorXd& betas,
                              const GridCase& grid, const MarketIndex& index,
                              const std::vector<GeneratorConfig>& gens);

struct CentralizedSolution {
  std::vector<LoadSchedule> schedules;
  std::vector<GeneratorDecision> decisions;  // p_conv/p_ren only
  AngleProfile angles;
  DualState duals;        // includes the ISO-side CVaR variables (per unit)
  double objective_cents = 0.0;  // f_ISO with risk term in kW-equivalents
  double kkt_residual = 0.0;
  QpStatus status = QpStatus::max_iter;
  std::string infeasibility;  // certificate text when status == infeasible
};

CentralizedSolution centralized_solve(const GridCase& grid,
                                      const std::vector<AggregatorConfig>& aggs,
                                      const std::vector<GeneratorConfig>& gens,
                                      const IsoConfig& iso);

// f_ISO of an arbitrary primal point, with the ISO risk term evaluated by
// inner minimization (exact sample-average CVaR of the unit-slope shortfall).
double iso_objective_cents(const GridCase& grid,
                           const std::vector<AggregatorConfig>& aggs,
                           const std::vector<GeneratorConfig>& gens,
                           const IsoConfig& iso,
                           const std::vector<LoadSchedule>& schedules,
                           const std::vector<GeneratorDecision>& decisions);

struct Theorem2Entity {
  std::string name;
  double local_objective = 0.0;        // entity's own optimum under signals
  double restricted_objective = 0.0;   // entity objective at the centralized point
  double relative_deviation = 0.0;
};

struct Theorem2Report {
  MarketSignals signals;
  std::vector<Theorem2Entity> entities;
  double max_relative_deviation = 0.0;
  bool passed = false;
};

// Fixed-point check: re-solve every local problem under signals computed
// from the centralized duals and compare objective values.
Theorem2Report verify_theorem2(const GridCase& grid,
                               const std::vector<AggregatorConfig>& aggs,
                               const std::vector<GeneratorConfig>& gens,
                               const IsoConfig& iso, double tol,
                               const MarketSignals* signal_override = nullptr);

// Zero-demand aggregators for buses carrying no entity, so every bus has a
// balance equation.
void materialize_virtual_aggregators(GridCase& grid,
                                     std::vector<AggregatorConfig>& aggs,
                                     int hours);

double default_theta_max(const std::vector<GeneratorConfig>& gens);

}  // namespace daymarket

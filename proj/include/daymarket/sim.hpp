// Decentralized market trading loop: information exchange, coordinator
// update, signal broadcast, and agent re-solves, with step-size scheduling,
// the angle-change stopping rule, and market metrics.

#pragma once

#include <Eigen/Dense>

#include <vector>

#include "daymarket/iso.hpp"

namespace daymarket {

struct Scenario;

struct StepSchedule {
  double a = 10.0;
  double b = 0.2;
  double step(int q) const { return 1.0 / (a + b * q); }
};

double step_size(const StepSchedule& schedule, int q);

struct SimConfig {
  StepSchedule schedule;
  double xi = 1e-2;    // convergence tolerance on the angle change
  int max_iter = 200;
  unsigned seed = 1;
};

enum class RunStatus { converged, max_iter_reached };

struct IterationRecord {
  int iter = 0;
  double step_size = 0.0;
  double max_angle_change = 0.0;
  double lagrangian = 0.0;
  AgentReports reports;    // what the agents sent this round
  AngleProfile angles;     // coordinator state after the update
  DualState duals;
  MarketSignals signals;   // broadcast after the update
};

struct IterationTrace {
  std::vector<IterationRecord> records;
  RunStatus status = RunStatus::max_iter_reached;
  double final_objective_cents = 0.0;
  double max_kkt_residual = 0.0;  // worst agent-solve KKT residual seen

  int iterations() const { return static_cast<int>(records.size()); }
  const IterationRecord& final_record() const { return records.back(); }
};

struct WarmStart {
  AngleProfile angles;
  DualState duals;
  std::vector<LoadSchedule> schedules;
  std::vector<GeneratorDecision> decisions;
};

IterationTrace run(const Scenario& scenario, const WarmStart* warm = nullptr);

// max over mean; profile must be nonnegative and not all zero.
double par(const Eigen::VectorXd& profile);

// 100 * (half the L1 distance between scheduled and desired) / sum(desired);
// each relocated kWh counts once.
double load_shift_pct(const Eigen::VectorXd& desired,
                      const Eigen::VectorXd& scheduled);

struct MarketMetrics {
  std::vector<double> par_per_generator;  // conventional output profiles
  std::vector<double> load_shift_pct;     // per nonempty aggregator
  std::vector<double> aggregator_costs;
  std::vector<double> generator_profits;
  double mean_par = 0.0;
  double total_aggregator_cost = 0.0;
  bool has_baseline = false;
  double mean_par_baseline = 0.0;
  double total_aggregator_cost_baseline = 0.0;
  double par_reduction_pct = 0.0;
  double peak_reduction_pct = 0.0;  // mean per-aggregator peak-load reduction
  bool provisional = false;         // a trace had not converged
};

MarketMetrics compute_metrics(const IterationTrace& trace,
                              const Scenario& scenario,
                              const IterationTrace* baseline = nullptr);

}  // namespace daymarket

// Load aggregator: controllable-load portfolio and its local
// cost-minimization under nodal prices.

#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "daymarket/qp.hpp"

namespace daymarket {

enum class LoadType { type1, type2 };

// All per-hour vectors span the full horizon H. For type-1 loads the demand
// is pinned to zero outside the scheduling horizon; for type-2 loads
// out-of-horizon use is allowed up to x_max at linear discomfort omega_out.
struct ControllableLoad {
  std::string id;
  LoadType type = LoadType::type1;
  std::vector<int> horizon;  // 0-based hour indices, ascending
  Eigen::VectorXd x_min;     // kW
  Eigen::VectorXd x_max;     // kW
  double total_min = 0.0;    // kWh over all hours
  double total_max = 0.0;
  Eigen::VectorXd desired;   // kW, zero outside horizon
  double omega = 0.0;            // type 1: cents/(kWh)^2 on the summed deviation
  Eigen::VectorXd omega_h;       // type 2: in-horizon quadratic coefficients
  Eigen::VectorXd omega_out;     // type 2: out-of-horizon linear coefficients

  bool in_horizon(int h) const;
};

struct AggregatorConfig {
  int bus = 0;
  Eigen::VectorXd baseload;  // kW per hour
  std::vector<ControllableLoad> loads;

  int hours() const { return static_cast<int>(baseload.size()); }
};

struct LoadSchedule {
  Eigen::MatrixXd x;  // load x hour, kW

  Eigen::VectorXd controllable() const {
    return x.rows() ? Eigen::VectorXd(x.colwise().sum()) : Eigen::VectorXd();
  }
};

struct AgentSolveInfo {
  QpStatus status = QpStatus::optimal;
  double kkt_residual = 0.0;
  double objective = 0.0;  // local QP objective incl. constant terms
};

// Structural/feasibility validation; empty string when fine. Names the first
// violated load.
std::string validate_aggregator(const AggregatorConfig& config, int hours);

double discomfort_cost(const ControllableLoad& load,
                       const Eigen::VectorXd& schedule_row);

// Discomfort plus payment for baseload and controllable demand.
double total_cost(const AggregatorConfig& config, const LoadSchedule& schedule,
                  const Eigen::VectorXd& prices);

// Exact-feasible minimizer of total_cost over the load constraint set,
// assembled as a QpProblem. Throws std::runtime_error naming the offending
// load on infeasible bound combinations.
LoadSchedule solve_aggregator_local(const AggregatorConfig& config,
                                    const Eigen::VectorXd& prices,
                                    AgentSolveInfo* info = nullptr);

// QP assembly shared with the centralized market problem. Variables are
// demand deviations from the desired profile (zero out of horizon), which
// keeps the objective data well scaled; one block per load over its free
// hours, then one auxiliary summed-deviation variable per type-1 load.
struct AggregatorQpLayout {
  std::vector<std::vector<int>> var_of_hour;  // load -> per-hour var or -1
  std::vector<int> dev_var;                   // type-1 aux var or -1
  Eigen::MatrixXd shift;                      // load x hour offsets (kW)
  int num_vars = 0;
};

AggregatorQpLayout build_aggregator_qp(const AggregatorConfig& config,
                                       const Eigen::VectorXd& prices,
                                       QpProblem* out);

LoadSchedule schedule_from_solution(const AggregatorConfig& config,
                                    const AggregatorQpLayout& layout,
                                    const Eigen::VectorXd& x);

}  // namespace daymarket

// Generator: conventional unit, optional renewable unit with CVaR-managed
// day-ahead offers, and the local profit-maximization under prices and
// shortfall penalties.

#pragma once

#include <Eigen/Dense>

#include <span>
#include <string>

#include "daymarket/aggregator.hpp"  // AgentSolveInfo
#include "daymarket/qp.hpp"

namespace daymarket {

struct GeneratorConfig {
  int bus = 0;
  double a2 = 0.0;  // cents/(kWh)^2
  double a1 = 0.0;  // cents/kWh
  double a0 = 0.0;  // cents
  double p_min = 0.0;  // kW
  double p_max = 0.0;
  bool has_renewable = false;
  Eigen::MatrixXd samples;   // K x H historical renewable output, kW
  double beta = 0.9;         // generator confidence level
  double beta_iso = 0.9;     // ISO confidence level assigned to this unit
  Eigen::VectorXd offer_cap; // per-hour cap on renewable offers, kW

  int num_samples() const { return static_cast<int>(samples.rows()); }
};

struct GeneratorDecision {
  Eigen::VectorXd p_conv;  // kW per hour
  Eigen::VectorXd p_ren;   // kW per hour (zero when no renewable)
  Eigen::VectorXd alpha;   // per-hour VaR threshold variables
  Eigen::MatrixXd eta;     // K x H auxiliary shortfall variables
};

std::string validate_generator(const GeneratorConfig& config, int hours);

double conventional_cost(const GeneratorConfig& config, double p);

// theta * max(offer - actual, 0)
double shortfall_penalty(double theta, double offer, double actual);

// The ceil(beta*K)-th smallest penalty, floored at zero.
double empirical_var(std::span<const double> penalties, double beta);

struct CvarResult {
  double cvar = 0.0;
  double alpha_star = 0.0;
};

// Sample-average CVaR of the shortfall penalties theta*[offer - sample]^+,
// minimized over the threshold variable.
CvarResult cvar_saa(double offer, double theta,
                    std::span<const double> samples_row, double beta);

// Revenue minus conventional cost minus the auxiliary-form risk term.
double profit(const GeneratorConfig& config, const GeneratorDecision& decision,
              const Eigen::VectorXd& prices, const Eigen::VectorXd& thetas);

// Maximizes profit subject to unit limits and the shortfall-threshold
// constraints, assembled as a QP (objective negated).
GeneratorDecision solve_generator_local(const GeneratorConfig& config,
                                        const Eigen::VectorXd& prices,
                                        const Eigen::VectorXd& thetas,
                                        AgentSolveInfo* info = nullptr);

}  // namespace daymarket

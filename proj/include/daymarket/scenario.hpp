// Scenario ingestion, synthetic-scenario generation, and built-in base cases.

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "daymarket/aggregator.hpp"
#include "daymarket/generator.hpp"
#include "daymarket/grid.hpp"
#include "daymarket/iso.hpp"
#include "daymarket/sim.hpp"

namespace daymarket {

struct Scenario {
  int horizon = 24;
  GridCase grid;
  std::vector<AggregatorConfig> aggregators;  // includes virtual zero-demand
  std::vector<GeneratorConfig> generators;
  IsoConfig iso;
  SimConfig sim;
  std::string name;
};

struct ScenarioError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Parses and validates; renewable sample CSVs are loaded relative to the
// scenario file. Throws ScenarioError with every violation listed.
Scenario load_scenario(const std::filesystem::path& path);

// Writes the scenario plus sidecar sample CSVs next to it.
void save_scenario(const Scenario& scenario,
                   const std::filesystem::path& path);

// K x H matrix of nonnegative values; header row optional.
Eigen::MatrixXd read_samples_csv(const std::filesystem::path& path);
void write_samples_csv(const Eigen::MatrixXd& samples,
                       const std::filesystem::path& path);

// Pin controllable loads to their desired profiles and drop renewable
// units: the no-DR benchmark system.
Scenario make_baseline(const Scenario& scenario);

struct SyntheticSpec {
  unsigned seed = 1;
  int horizon = 24;
  int loads_per_bus_min = 500;   // conceptual loads, paper-scale counts
  int loads_per_bus_max = 1000;
  int blocks_per_bus = 12;       // identical loads aggregate exactly into
                                 // blocks; block discomfort scales as 1/n
  double demand_min_kw = 2.0;    // average demand per conceptual load
  double demand_max_kw = 15.0;
  double hour_bound_frac = 0.30;   // per-hour bounds vs desired
  double total_bound_frac = 0.05;  // total-energy window vs desired total
  double omega_avg = 15.0;         // truncated normal, cents/(kWh)^2
  double omega_sd = 5.0;
  double omega_out = 50.0;         // type-2 out-of-horizon linear coefficient
  double baseload_fraction = 0.60; // baseload share of bus demand
  double type1_share = 0.4;
  int horizon_len_min = 6;
  int horizon_len_max = 12;
  int renewable_count = 2;             // units, placed at the last generator buses
  int renewable_samples = 12;          // K
  double renewable_mean_kw = 4000.0;   // scale of historical output
  double beta = 0.9;
  double beta_iso = 0.9;
  double vartheta_c = 1.0;
  double sim_xi = 1e-6;
  int sim_max_iter = 3000;
};

// Deterministic for a fixed seed. Entity placement comes from the base
// case's bus annotations (generator cost data included for annotated buses).
Scenario generate_synthetic(const SyntheticSpec& spec,
                            const GridCase& base_case);

// Built-in base networks: "twobus", "sixbus", "case30".
GridCase builtin_base_case(const std::string& name);

// Truncated normal sampler (lower bound zero) via the inverse CDF, so a
// draw is monotone in the mean for a fixed uniform variate.
double truncated_normal(double mean, double sd, double u01);

std::vector<std::string> validate_scenario(const Scenario& scenario);

}  // namespace daymarket

// Transmission network model and DC power flow evaluation.

#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <string>
#include <vector>

namespace daymarket {

enum class BusKind { aggregator, generator, both, empty };

struct Bus {
  int id = 0;                 // 1-based, contiguous
  BusKind kind = BusKind::empty;
  int aggregator_index = -1;  // into the scenario aggregator list
  int generator_index = -1;   // into the scenario generator list
};

struct Line {
  int from_bus = 0;
  int to_bus = 0;
  double susceptance_b = 0.0;  // per unit, > 0
  double flow_limit = 0.0;     // per unit, > 0
};

struct GridCase {
  std::vector<Bus> buses;
  std::vector<Line> lines;
  int slack_bus = 1;
  double base_mva = 100.0;

  int num_buses() const { return static_cast<int>(buses.size()); }
  int num_lines() const { return static_cast<int>(lines.size()); }
  // kW per unit of per-unit power.
  double power_base_kw() const { return base_mva * 1000.0; }
  // Weighted graph Laplacian (susceptances), num_buses x num_buses.
  Eigen::SparseMatrix<double> laplacian() const;
};

// Voltage phase angles, bus x hour, radians; slack row pinned to zero.
struct AngleProfile {
  Eigen::MatrixXd delta;

  static AngleProfile zeros(int buses, int hours) {
    return AngleProfile{Eigen::MatrixXd::Zero(buses, hours)};
  }
  int hours() const { return static_cast<int>(delta.cols()); }
};

struct CaseViolation {
  std::string rule;
  std::string detail;
};

// flow = b * (delta_from - delta_to); antisymmetric under endpoint swap.
double line_flow(const GridCase& grid, const AngleProfile& angles,
                 const Line& line, int hour);

// residual[i][h] = injection[i][h] - sum over incident lines of
// b * (delta_i - delta_r); all zeros iff nodal balance holds.
Eigen::MatrixXd nodal_imbalance(const GridCase& grid,
                                const AngleProfile& angles,
                                const Eigen::MatrixXd& injections);

std::vector<CaseViolation> validate_case(const GridCase& grid);

}  // namespace daymarket

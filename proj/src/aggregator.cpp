#include "daymarket/aggregator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace daymarket {

bool ControllableLoad::in_horizon(int h) const {
  return std::binary_search(horizon.begin(), horizon.end(), h);
}

std::string validate_aggregator(const AggregatorConfig& config, int hours) {
  if (config.baseload.size() != hours) return "baseload length mismatch";
  if (config.baseload.minCoeff() < 0) return "baseload must be nonnegative";
  for (const ControllableLoad& a : config.loads) {
    const std::string tag = "load '" + a.id + "': ";
    if (a.x_min.size() != hours || a.x_max.size() != hours ||
        a.desired.size() != hours)
      return tag + "per-hour profile length mismatch";
    if (a.horizon.empty()) return tag + "empty scheduling horizon";
    for (int h : a.horizon)
      if (h < 0 || h >= hours) return tag + "horizon hour out of range";
    if (!std::is_sorted(a.horizon.begin(), a.horizon.end()))
      return tag + "horizon hours must be ascending";
    if (a.total_min > a.total_max) return tag + "X_min exceeds X_max";
    if (a.omega < 0) return tag + "negative discomfort coefficient";
    if (a.type == LoadType::type2) {
      if (a.omega_h.size() != hours || a.omega_out.size() != hours)
        return tag + "type-2 coefficient length mismatch";
      if (a.omega_h.minCoeff() < 0 || a.omega_out.minCoeff() < 0)
        return tag + "negative discomfort coefficient";
    }
    double lo_sum = 0.0, hi_sum = 0.0;
    for (int h = 0; h < hours; ++h) {
      const bool in = a.in_horizon(h);
      const double lo = in ? a.x_min[h] : 0.0;
      double hi;
      if (in)
        hi = a.x_max[h];
      else
        hi = a.type == LoadType::type2 ? a.x_max[h] : 0.0;
      if (in && (a.x_min[h] < 0 || a.x_min[h] > a.x_max[h]))
        return tag + "hour bounds violate 0 <= x_min <= x_max";
      if (!in && a.type == LoadType::type2 && a.x_max[h] < 0)
        return tag + "negative out-of-horizon cap";
      lo_sum += lo;
      hi_sum += hi;
    }
    if (lo_sum > a.total_max + 1e-9)
      return tag + "hourly minima exceed X_max (infeasible)";
    if (hi_sum < a.total_min - 1e-9)
      return tag + "hourly maxima cannot reach X_min (infeasible)";
  }
  return {};
}

double discomfort_cost(const ControllableLoad& load,
                       const Eigen::VectorXd& schedule_row) {
  const int hours = static_cast<int>(schedule_row.size());
  double sum = 0.0;
  for (int h = 0; h < hours; ++h) {
    const double x = schedule_row[h];
    if (load.in_horizon(h)) {
      if (x < load.x_min[h] - 1e-9 || x > load.x_max[h] + 1e-9)
        throw std::domain_error("discomfort_cost: infeasible schedule row");
    } else {
      if (load.type == LoadType::type1 && std::abs(x) > 1e-9)
        throw std::domain_error(
            "discomfort_cost: type-1 demand outside horizon");
      if (x < -1e-9)
        throw std::domain_error("discomfort_cost: negative demand");
    }
  }
  if (load.type == LoadType::type1) {
    double dev = 0.0;
    for (int h : load.horizon) dev += schedule_row[h] - load.desired[h];
    return load.omega * dev * dev;
  }
  for (int h = 0; h < hours; ++h) {
    if (load.in_horizon(h)) {
      const double d = schedule_row[h] - load.desired[h];
      sum += load.omega_h[h] * d * d;
    } else {
      sum += load.omega_out[h] * schedule_row[h];
    }
  }
  return sum;
}

double total_cost(const AggregatorConfig& config, const LoadSchedule& schedule,
                  const Eigen::VectorXd& prices) {
  const int hours = config.hours();
  if (prices.size() != hours)
    throw std::domain_error("total_cost: price vector length mismatch");
  double cost = 0.0;
  for (size_t a = 0; a < config.loads.size(); ++a)
    cost += discomfort_cost(config.loads[a], schedule.x.row(a));
  Eigen::VectorXd demand = config.baseload;
  if (schedule.x.rows()) demand += schedule.controllable();
  cost += prices.dot(demand);
  return cost;
}

AggregatorQpLayout build_aggregator_qp(const AggregatorConfig& config,
                                       const Eigen::VectorXd& prices,
                                       QpProblem* out) {
  const int hours = config.hours();
  const int nl = static_cast<int>(config.loads.size());
  AggregatorQpLayout lay;
  lay.var_of_hour.assign(nl, std::vector<int>(hours, -1));
  lay.dev_var.assign(nl, -1);

  lay.shift = Eigen::MatrixXd::Zero(nl, hours);
  int nv = 0;
  for (int a = 0; a < nl; ++a) {
    const ControllableLoad& ld = config.loads[a];
    for (int h = 0; h < hours; ++h) {
      if (ld.type == LoadType::type1 && !ld.in_horizon(h)) continue;
      lay.var_of_hour[a][h] = nv++;
      if (ld.in_horizon(h)) lay.shift(a, h) = ld.desired[h];
    }
    if (ld.type == LoadType::type1) lay.dev_var[a] = nv++;
  }
  lay.num_vars = nv;

  QpProblem p = QpProblem::make(nv);
  std::vector<Eigen::Triplet<double>> tq, ta, tg;
  std::vector<double> beq, hin;

  for (int a = 0; a < nl; ++a) {
    const ControllableLoad& ld = config.loads[a];
    // Summed-deviation auxiliary: u = sum over the horizon of the
    // deviation variables.
    if (ld.type == LoadType::type1) {
      const int u = lay.dev_var[a];
      tq.emplace_back(u, u, 2.0 * ld.omega);
      const int row = static_cast<int>(beq.size());
      for (int h : ld.horizon)
        ta.emplace_back(row, lay.var_of_hour[a][h], 1.0);
      ta.emplace_back(row, u, -1.0);
      beq.push_back(0.0);
    }
    // Per-hour terms and bounds in deviation coordinates.
    double shift_sum = 0.0;
    for (int h = 0; h < hours; ++h) {
      const int v = lay.var_of_hour[a][h];
      if (v < 0) continue;
      shift_sum += lay.shift(a, h);
      if (ld.in_horizon(h)) {
        p.lower[v] = ld.x_min[h] - ld.desired[h];
        p.upper[v] = ld.x_max[h] - ld.desired[h];
        if (ld.type == LoadType::type2)
          tq.emplace_back(v, v, 2.0 * ld.omega_h[h]);
      } else {
        p.lower[v] = 0.0;
        p.upper[v] = ld.x_max[h];
        p.c[v] += ld.omega_out[h];
      }
      p.c[v] += prices.size() ? prices[h] : 0.0;
    }
    // Total-energy window.
    {
      const int up_row = static_cast<int>(hin.size());
      const int lo_row = up_row + 1;
      for (int h = 0; h < hours; ++h) {
        const int v = lay.var_of_hour[a][h];
        if (v < 0) continue;
        tg.emplace_back(up_row, v, 1.0);
        tg.emplace_back(lo_row, v, -1.0);
      }
      hin.push_back(ld.total_max - shift_sum);
      hin.push_back(-(ld.total_min - shift_sum));
    }
  }

  p.Q.setFromTriplets(tq.begin(), tq.end());
  p.A_eq.resize(static_cast<int>(beq.size()), nv);
  p.A_eq.setFromTriplets(ta.begin(), ta.end());
  p.b_eq = Eigen::Map<Eigen::VectorXd>(beq.data(), beq.size());
  p.G_ineq.resize(static_cast<int>(hin.size()), nv);
  p.G_ineq.setFromTriplets(tg.begin(), tg.end());
  p.h_ineq = Eigen::Map<Eigen::VectorXd>(hin.data(), hin.size());
  *out = std::move(p);
  return lay;
}

LoadSchedule schedule_from_solution(const AggregatorConfig& config,
                                    const AggregatorQpLayout& layout,
                                    const Eigen::VectorXd& x) {
  const int hours = config.hours();
  LoadSchedule s;
  s.x = Eigen::MatrixXd::Zero(config.loads.size(), hours);
  for (size_t a = 0; a < config.loads.size(); ++a)
    for (int h = 0; h < hours; ++h) {
      const int v = layout.var_of_hour[a][h];
      if (v >= 0) s.x(a, h) = x[v] + layout.shift(a, h);
    }
  // Snap to the box so downstream feasibility checks hold exactly.
  for (size_t a = 0; a < config.loads.size(); ++a) {
    const ControllableLoad& ld = config.loads[a];
    for (int h = 0; h < hours; ++h) {
      if (layout.var_of_hour[a][h] < 0) continue;
      const double lo = ld.in_horizon(h) ? ld.x_min[h] : 0.0;
      const double hi = ld.x_max[h];
      s.x(a, h) = std::clamp(s.x(a, h), lo, hi);
    }
  }
  return s;
}

LoadSchedule solve_aggregator_local(const AggregatorConfig& config,
                                    const Eigen::VectorXd& prices,
                                    AgentSolveInfo* info) {
  const std::string err = validate_aggregator(config, config.hours());
  if (!err.empty())
    throw std::runtime_error("aggregator at bus " +
                             std::to_string(config.bus) + ": " + err);
  // Loads couple only through the common price signal, so each one solves
  // as its own small program.
  LoadSchedule s;
  s.x = Eigen::MatrixXd::Zero(config.loads.size(), config.hours());
  double worst_kkt = 0.0;
  QpStatus worst_status = QpStatus::optimal;
  for (size_t l = 0; l < config.loads.size(); ++l) {
    AggregatorConfig one;
    one.bus = config.bus;
    one.baseload = Eigen::VectorXd::Zero(config.hours());
    one.loads = {config.loads[l]};
    QpProblem p;
    const AggregatorQpLayout lay = build_aggregator_qp(one, prices, &p);
    const QpSolution sol = solve_qp(p);
    if (sol.status == QpStatus::infeasible)
      throw std::runtime_error("aggregator at bus " +
                               std::to_string(config.bus) + ": load '" +
                               config.loads[l].id + "' infeasible");
    const LoadSchedule row = schedule_from_solution(one, lay, sol.x);
    s.x.row(l) = row.x.row(0);
    worst_kkt = std::max(worst_kkt, sol.kkt_residual);
    if (sol.status != QpStatus::optimal) worst_status = sol.status;
  }
  if (info) {
    info->status = worst_status;
    info->kkt_residual = worst_kkt;
    info->objective = total_cost(config, s, prices);
  }
  return s;
}

}  // namespace daymarket

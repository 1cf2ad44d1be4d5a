#include "daymarket/sim.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "daymarket/scenario.hpp"

namespace daymarket {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Deterministic uniform in [0,1) independent of library distribution
// internals.
double next_u(std::mt19937& rng) {
  return static_cast<double>(rng()) / 4294967296.0;
}

LoadSchedule random_feasible_schedule(const AggregatorConfig& cfg, int hours,
                                      std::mt19937& rng) {
  LoadSchedule s;
  s.x = MatrixXd::Zero(cfg.loads.size(), hours);
  for (size_t l = 0; l < cfg.loads.size(); ++l) {
    const ControllableLoad& ld = cfg.loads[l];
    double lo_sum = 0.0, hi_sum = 0.0;
    for (int h : ld.horizon) {
      lo_sum += ld.x_min[h];
      hi_sum += ld.x_max[h];
    }
    // One uniform per load keeps the total-energy window feasible.
    double t_lo = 0.0, t_hi = 1.0;
    if (hi_sum > lo_sum + 1e-12) {
      t_lo = std::clamp((ld.total_min - lo_sum) / (hi_sum - lo_sum), 0.0, 1.0);
      t_hi = std::clamp((ld.total_max - lo_sum) / (hi_sum - lo_sum), 0.0, 1.0);
    }
    const double t = t_lo + next_u(rng) * (t_hi - t_lo);
    for (int h : ld.horizon)
      s.x(l, h) = ld.x_min[h] + t * (ld.x_max[h] - ld.x_min[h]);
  }
  return s;
}

GeneratorDecision random_feasible_decision(const GeneratorConfig& g,
                                           int hours, std::mt19937& rng) {
  GeneratorDecision d;
  d.p_conv.resize(hours);
  d.p_ren = VectorXd::Zero(hours);
  for (int h = 0; h < hours; ++h)
    d.p_conv[h] = g.p_min + next_u(rng) * (g.p_max - g.p_min);
  if (g.has_renewable)
    for (int h = 0; h < hours; ++h) d.p_ren[h] = next_u(rng) * g.offer_cap[h];
  d.alpha = VectorXd::Zero(g.has_renewable ? hours : 0);
  d.eta = MatrixXd::Zero(g.has_renewable ? g.num_samples() : 0, hours);
  return d;
}

AgentReports make_reports(const Scenario& sc,
                          const std::vector<LoadSchedule>& schedules,
                          const std::vector<GeneratorDecision>& decisions) {
  const int H = sc.horizon;
  AgentReports r;
  r.load_kw.resize(sc.aggregators.size(), H);
  for (size_t a = 0; a < sc.aggregators.size(); ++a) {
    VectorXd l = sc.aggregators[a].baseload;
    if (schedules[a].x.rows()) l += schedules[a].controllable();
    r.load_kw.row(a) = l.transpose();
  }
  r.p_conv_kw.resize(sc.generators.size(), H);
  r.p_ren_kw.resize(sc.generators.size(), H);
  for (size_t j = 0; j < sc.generators.size(); ++j) {
    r.p_conv_kw.row(j) = decisions[j].p_conv.transpose();
    r.p_ren_kw.row(j) = decisions[j].p_ren.transpose();
  }
  r.schedules = schedules;
  r.decisions = decisions;
  return r;
}

}  // namespace

double step_size(const StepSchedule& schedule, int q) {
  return schedule.step(q);
}

IterationTrace run(const Scenario& sc, const WarmStart* warm) {
  const auto problems = validate_scenario(sc);
  if (!problems.empty()) {
    std::string msg = "invalid scenario:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw std::runtime_error(msg);
  }
  const int H = sc.horizon;
  const MarketIndex index =
      MarketIndex::build(sc.grid, sc.aggregators, sc.generators, H);

  std::mt19937 rng(sc.sim.seed);
  std::vector<LoadSchedule> schedules(sc.aggregators.size());
  std::vector<GeneratorDecision> decisions(sc.generators.size());
  IsoState state;
  state.angles = AngleProfile::zeros(sc.grid.num_buses(), H);
  state.duals = DualState::zeros(sc.grid, index, sc.generators);
  if (warm) {
    schedules = warm->schedules;
    decisions = warm->decisions;
    state.angles = warm->angles;
    state.duals = warm->duals;
  } else {
    for (size_t a = 0; a < sc.aggregators.size(); ++a)
      schedules[a] = random_feasible_schedule(sc.aggregators[a], H, rng);
    for (size_t j = 0; j < sc.generators.size(); ++j)
      decisions[j] = random_feasible_decision(sc.generators[j], H, rng);
  }

  VectorXd betas(sc.generators.size());
  for (size_t j = 0; j < sc.generators.size(); ++j)
    betas[j] = sc.generators[j].beta;

  IterationTrace trace;
  for (int q = 1; q <= sc.sim.max_iter; ++q) {
    const double eps = sc.sim.schedule.step(q);
    AgentReports reports = make_reports(sc, schedules, decisions);
    const MatrixXd delta_prev = state.angles.delta;

    update_primal_dual(state, reports, sc.iso, sc.grid, index, sc.generators,
                       eps);
    const MarketSignals signals = compute_signals(
        state.duals, sc.iso, betas, sc.grid, index, sc.generators);

    IterationRecord rec;
    rec.iter = q;
    rec.step_size = eps;
    rec.max_angle_change =
        (state.angles.delta - delta_prev).cwiseAbs().maxCoeff();
    rec.lagrangian = lagrangian_value(state, reports, sc.iso, sc.grid, index,
                                      sc.aggregators, sc.generators);
    rec.reports = std::move(reports);
    rec.angles = state.angles;
    rec.duals = state.duals;
    rec.signals = signals;
    trace.records.push_back(std::move(rec));

    if (q >= 2 && trace.records.back().max_angle_change <= sc.sim.xi) {
      trace.status = RunStatus::converged;
      break;
    }
    if (q == sc.sim.max_iter) {
      trace.status = RunStatus::max_iter_reached;
      break;
    }

    for (size_t a = 0; a < sc.aggregators.size(); ++a) {
      AgentSolveInfo info;
      schedules[a] = solve_aggregator_local(
          sc.aggregators[a],
          signals.rho.row(index.aggregator_bus[a]).transpose(), &info);
      trace.max_kkt_residual =
          std::max(trace.max_kkt_residual, info.kkt_residual);
    }
    for (size_t j = 0; j < sc.generators.size(); ++j) {
      AgentSolveInfo info;
      decisions[j] = solve_generator_local(
          sc.generators[j], signals.rho.row(index.generator_bus[j]).transpose(),
          signals.theta.row(j).transpose(), &info);
      trace.max_kkt_residual =
          std::max(trace.max_kkt_residual, info.kkt_residual);
    }
  }

  const AgentReports& fin = trace.final_record().reports;
  trace.final_objective_cents =
      iso_objective_cents(sc.grid, sc.aggregators, sc.generators, sc.iso,
                          fin.schedules, fin.decisions);
  return trace;
}

double par(const VectorXd& profile) {
  if (profile.size() == 0 || profile.minCoeff() < 0)
    throw std::domain_error("par: profile must be nonnegative");
  const double mean = profile.mean();
  if (mean <= 0) throw std::domain_error("par: all-zero profile");
  return profile.maxCoeff() / mean;
}

double load_shift_pct(const VectorXd& desired, const VectorXd& scheduled) {
  if (desired.size() != scheduled.size())
    throw std::domain_error("load_shift_pct: length mismatch");
  if (desired.minCoeff() < 0 || scheduled.minCoeff() < 0)
    throw std::domain_error("load_shift_pct: profiles must be nonnegative");
  const double total = desired.sum();
  if (total <= 0) throw std::domain_error("load_shift_pct: zero aggregate");
  return 100.0 * 0.5 * (scheduled - desired).cwiseAbs().sum() / total;
}

MarketMetrics compute_metrics(const IterationTrace& trace,
                              const Scenario& sc,
                              const IterationTrace* baseline) {
  MarketMetrics m;
  m.provisional = trace.status != RunStatus::converged ||
                  (baseline && baseline->status != RunStatus::converged);
  const int H = sc.horizon;
  const MarketIndex index =
      MarketIndex::build(sc.grid, sc.aggregators, sc.generators, H);

  const auto fill = [&](const IterationTrace& t, MarketMetrics& out,
                        bool primary) {
    const IterationRecord& fr = t.final_record();
    double total_cost_sum = 0.0;
    std::vector<double> pars;
    for (size_t j = 0; j < sc.generators.size(); ++j) {
      const VectorXd conv = fr.reports.p_conv_kw.row(j);
      if (conv.maxCoeff() > 0 && conv.minCoeff() >= 0) {
        const double v = par(conv);
        if (primary) out.par_per_generator.push_back(v);
        pars.push_back(v);
      }
      if (primary) {
        const VectorXd rho =
            fr.signals.rho.row(index.generator_bus[j]).transpose();
        const VectorXd theta = fr.signals.theta.row(j).transpose();
        out.generator_profits.push_back(
            profit(sc.generators[j], fr.reports.decisions[j], rho, theta));
      }
    }
    for (size_t a = 0; a < sc.aggregators.size(); ++a) {
      const AggregatorConfig& cfg = sc.aggregators[a];
      const bool empty = cfg.loads.empty() && cfg.baseload.maxCoeff() <= 0;
      if (empty) continue;
      const VectorXd rho =
          fr.signals.rho.row(index.aggregator_bus[a]).transpose();
      const double cost = total_cost(cfg, fr.reports.schedules[a], rho);
      total_cost_sum += cost;
      if (primary) {
        out.aggregator_costs.push_back(cost);
        VectorXd desired = VectorXd::Zero(H);
        for (const auto& ld : cfg.loads) desired += ld.desired;
        if (desired.sum() > 0)
          out.load_shift_pct.push_back(load_shift_pct(
              desired, fr.reports.schedules[a].controllable()));
        else if (!cfg.loads.empty())
          out.load_shift_pct.push_back(0.0);
      }
    }
    double mean_par = 0.0;
    for (double v : pars) mean_par += v;
    if (!pars.empty()) mean_par /= static_cast<double>(pars.size());
    if (primary) {
      out.mean_par = mean_par;
      out.total_aggregator_cost = total_cost_sum;
    } else {
      out.mean_par_baseline = mean_par;
      out.total_aggregator_cost_baseline = total_cost_sum;
    }
  };

  fill(trace, m, true);
  if (baseline) {
    m.has_baseline = true;
    fill(*baseline, m, false);
    if (m.mean_par_baseline > 0)
      m.par_reduction_pct =
          100.0 * (m.mean_par_baseline - m.mean_par) / m.mean_par_baseline;
    // Mean per-aggregator peak-load reduction.
    double acc = 0.0;
    int count = 0;
    const auto& fr = trace.final_record().reports;
    const auto& fb = baseline->final_record().reports;
    for (size_t a = 0; a < sc.aggregators.size(); ++a) {
      const double peak_b = fb.load_kw.row(a).maxCoeff();
      const double peak_d = fr.load_kw.row(a).maxCoeff();
      if (peak_b > 0) {
        acc += 100.0 * (peak_b - peak_d) / peak_b;
        ++count;
      }
    }
    m.peak_reduction_pct = count ? acc / count : 0.0;
  }
  return m;
}

}  // namespace daymarket

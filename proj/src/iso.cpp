#include "daymarket/iso.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace daymarket {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Triplet = Eigen::Triplet<double>;

double conv_cost_unchecked(const GeneratorConfig& g, double p) {
  return g.a2 * p * p + g.a1 * p + g.a0;
}

}  // namespace

MarketIndex MarketIndex::build(const GridCase& grid,
                               const std::vector<AggregatorConfig>& aggs,
                               const std::vector<GeneratorConfig>& gens,
                               int hours) {
  MarketIndex ix;
  ix.hours = hours;
  const int n = grid.num_buses();
  ix.agg_row_of_bus.assign(n, -1);
  ix.gen_row_of_bus.assign(n, -1);
  ix.colocated_agg_of_gen_bus.assign(n, -1);

  std::vector<int> agg_at_bus(n, -1), gen_at_bus(n, -1);
  for (size_t a = 0; a < aggs.size(); ++a) {
    const int b = aggs[a].bus - 1;
    if (b < 0 || b >= n)
      throw std::runtime_error("aggregator references missing bus " +
                               std::to_string(aggs[a].bus));
    if (agg_at_bus[b] >= 0)
      throw std::runtime_error("two aggregators at bus " +
                               std::to_string(aggs[a].bus));
    agg_at_bus[b] = static_cast<int>(a);
    ix.aggregator_bus.push_back(b);
  }
  for (size_t j = 0; j < gens.size(); ++j) {
    const int b = gens[j].bus - 1;
    if (b < 0 || b >= n)
      throw std::runtime_error("generator references missing bus " +
                               std::to_string(gens[j].bus));
    if (gen_at_bus[b] >= 0)
      throw std::runtime_error("two generators at bus " +
                               std::to_string(gens[j].bus));
    gen_at_bus[b] = static_cast<int>(j);
    ix.generator_bus.push_back(b);
  }
  for (int b = 0; b < n; ++b) {
    if (gen_at_bus[b] >= 0) {
      ix.gen_row_of_bus[b] = static_cast<int>(ix.gen_bus_of_row.size());
      ix.gen_bus_of_row.push_back(b);
      ix.colocated_agg_of_gen_bus[b] = agg_at_bus[b];
    } else if (agg_at_bus[b] >= 0) {
      ix.agg_row_of_bus[b] = static_cast<int>(ix.agg_bus_of_row.size());
      ix.agg_bus_of_row.push_back(b);
    } else {
      throw std::runtime_error(
          "bus " + std::to_string(b + 1) +
          " has no entity (virtual aggregators not materialized)");
    }
  }
  return ix;
}

DualState DualState::zeros(const GridCase& grid, const MarketIndex& index,
                           const std::vector<GeneratorConfig>& gens) {
  DualState d;
  const int H = index.hours;
  d.lambda_agg =
      MatrixXd::Zero(static_cast<int>(index.agg_bus_of_row.size()), H);
  d.lambda_gen =
      MatrixXd::Zero(static_cast<int>(index.gen_bus_of_row.size()), H);
  d.mu_upper = MatrixXd::Zero(grid.num_lines(), H);
  d.mu_lower = MatrixXd::Zero(grid.num_lines(), H);
  d.gamma_iso.resize(gens.size());
  d.alpha_iso.resize(gens.size());
  d.eta_iso.resize(gens.size());
  for (size_t j = 0; j < gens.size(); ++j) {
    const int K = gens[j].has_renewable ? gens[j].num_samples() : 0;
    d.gamma_iso[j] = MatrixXd::Zero(K, H);
    d.eta_iso[j] = MatrixXd::Zero(K, H);
    d.alpha_iso[j] = VectorXd::Zero(K > 0 ? H : 0);
  }
  return d;
}

void materialize_virtual_aggregators(GridCase& grid,
                                     std::vector<AggregatorConfig>& aggs,
                                     int hours) {
  std::vector<bool> has_agg(grid.num_buses(), false),
      has_gen(grid.num_buses(), false);
  for (const auto& a : aggs)
    if (a.bus >= 1 && a.bus <= grid.num_buses()) has_agg[a.bus - 1] = true;
  for (Bus& b : grid.buses) {
    if (b.generator_index >= 0) has_gen[b.id - 1] = true;
  }
  for (Bus& b : grid.buses) {
    if (!has_agg[b.id - 1] && !has_gen[b.id - 1]) {
      AggregatorConfig v;
      v.bus = b.id;
      v.baseload = VectorXd::Zero(hours);
      b.kind = BusKind::aggregator;
      b.aggregator_index = static_cast<int>(aggs.size());
      aggs.push_back(std::move(v));
    }
  }
}

double default_theta_max(const std::vector<GeneratorConfig>& gens) {
  double m = 0.0;
  for (const auto& g : gens) m = std::max(m, g.a1);
  return std::max(10.0 * m, 1e-6);
}

Eigen::MatrixXd injections_pu(const GridCase& grid, const MarketIndex& index,
                              const AgentReports& reports) {
  const int H = index.hours;
  const double S = grid.power_base_kw();
  MatrixXd inj = MatrixXd::Zero(grid.num_buses(), H);
  for (size_t a = 0; a < index.aggregator_bus.size(); ++a)
    inj.row(index.aggregator_bus[a]) -= reports.load_kw.row(a) / S;
  for (size_t j = 0; j < index.generator_bus.size(); ++j)
    inj.row(index.generator_bus[j]) +=
        (reports.p_conv_kw.row(j) + reports.p_ren_kw.row(j)) / S;
  return inj;
}

namespace {

// Oriented balance residuals: injection - flow at aggregator-oriented buses,
// flow - injection at generator-oriented buses.
MatrixXd oriented_residuals(const GridCase& grid, const MarketIndex& index,
                            const AngleProfile& angles, const MatrixXd& inj) {
  MatrixXd flow_out = grid.laplacian() * angles.delta;  // bus x hour
  MatrixXd r = flow_out - inj;
  for (int b = 0; b < grid.num_buses(); ++b)
    if (index.agg_row_of_bus[b] >= 0) r.row(b) = -r.row(b);
  return r;
}

}  // namespace

double lagrangian_value(const IsoState& state, const AgentReports& reports,
                        const IsoConfig& iso, const GridCase& grid,
                        const MarketIndex& index,
                        const std::vector<AggregatorConfig>& aggs,
                        const std::vector<GeneratorConfig>& gens) {
  const int H = index.hours;
  const double S = grid.power_base_kw();
  if (reports.schedules.size() != aggs.size() ||
      reports.decisions.size() != gens.size() ||
      state.angles.delta.cols() != H)
    throw std::domain_error("lagrangian_value: dimension mismatch");

  // Scaled objective f_ISO / S.
  double f = 0.0;
  for (size_t a = 0; a < aggs.size(); ++a)
    for (size_t l = 0; l < aggs[a].loads.size(); ++l)
      f += discomfort_cost(aggs[a].loads[l], reports.schedules[a].x.row(l));
  for (size_t j = 0; j < gens.size(); ++j)
    for (int h = 0; h < H; ++h)
      f += conv_cost_unchecked(gens[j], reports.p_conv_kw(j, h));
  f /= S;
  for (size_t j = 0; j < gens.size(); ++j) {
    if (!gens[j].has_renewable) continue;
    const int K = gens[j].num_samples();
    for (int h = 0; h < H; ++h) {
      double c = state.duals.alpha_iso[j][h];
      for (int k = 0; k < K; ++k)
        c += state.duals.eta_iso[j](k, h) / (K * (1.0 - gens[j].beta_iso));
      f += iso.vartheta_c * c;
    }
  }

  // Balance relaxation terms.
  const MatrixXd inj = injections_pu(grid, index, reports);
  const MatrixXd res = oriented_residuals(grid, index, state.angles, inj);
  for (int b = 0; b < grid.num_buses(); ++b) {
    if (index.agg_row_of_bus[b] >= 0)
      f += state.duals.lambda_agg.row(index.agg_row_of_bus[b]).dot(res.row(b));
    else
      f += state.duals.lambda_gen.row(index.gen_row_of_bus[b]).dot(res.row(b));
  }

  // Flow-limit terms.
  for (int l = 0; l < grid.num_lines(); ++l) {
    const Line& ln = grid.lines[l];
    for (int h = 0; h < H; ++h) {
      const double flow = ln.susceptance_b *
                          (state.angles.delta(ln.from_bus - 1, h) -
                           state.angles.delta(ln.to_bus - 1, h));
      f += state.duals.mu_upper(l, h) * (flow - ln.flow_limit);
      f += state.duals.mu_lower(l, h) * (-flow - ln.flow_limit);
    }
  }

  // ISO-side CVaR coupling terms.
  for (size_t j = 0; j < gens.size(); ++j) {
    if (!gens[j].has_renewable) continue;
    const int K = gens[j].num_samples();
    for (int h = 0; h < H; ++h)
      for (int k = 0; k < K; ++k) {
        const double resid =
            (reports.p_ren_kw(j, h) - gens[j].samples(k, h)) / S -
            state.duals.alpha_iso[j][h] - state.duals.eta_iso[j](k, h);
        f += state.duals.gamma_iso[j](k, h) * resid;
      }
  }
  return f;
}

void update_primal_dual(IsoState& state, const AgentReports& reports,
                        const IsoConfig& iso, const GridCase& grid,
                        const MarketIndex& index,
                        const std::vector<GeneratorConfig>& gens,
                        double step) {
  if (step <= 0) throw std::domain_error("update_primal_dual: step <= 0");
  const int H = index.hours;
  const int n = grid.num_buses();
  const double S = grid.power_base_kw();

  const MatrixXd inj = injections_pu(grid, index, reports);
  const MatrixXd res = oriented_residuals(grid, index, state.angles, inj);

  // Gradient of the Lagrangian in the angles: Laplacian acting on the
  // orientation-signed multipliers, plus the flow-limit terms.
  MatrixXd w(n, H);
  for (int b = 0; b < n; ++b) {
    if (index.agg_row_of_bus[b] >= 0)
      w.row(b) = -state.duals.lambda_agg.row(index.agg_row_of_bus[b]);
    else
      w.row(b) = state.duals.lambda_gen.row(index.gen_row_of_bus[b]);
  }
  MatrixXd grad_delta = grid.laplacian() * w;
  for (int l = 0; l < grid.num_lines(); ++l) {
    const Line& ln = grid.lines[l];
    const auto mu_net = state.duals.mu_upper.row(l) - state.duals.mu_lower.row(l);
    grad_delta.row(ln.from_bus - 1) += ln.susceptance_b * mu_net;
    grad_delta.row(ln.to_bus - 1) -= ln.susceptance_b * mu_net;
  }

  // Flows at the pre-update angles.
  MatrixXd flow(grid.num_lines(), H);
  for (int l = 0; l < grid.num_lines(); ++l) {
    const Line& ln = grid.lines[l];
    flow.row(l) = ln.susceptance_b * (state.angles.delta.row(ln.from_bus - 1) -
                                      state.angles.delta.row(ln.to_bus - 1));
  }

  // Primal descent: angles and ISO-side CVaR variables.
  state.angles.delta -= step * grad_delta;
  state.angles.delta.row(grid.slack_bus - 1).setZero();

  std::vector<VectorXd> alpha_prev = state.duals.alpha_iso;
  std::vector<MatrixXd> eta_prev = state.duals.eta_iso;
  for (size_t j = 0; j < gens.size(); ++j) {
    if (!gens[j].has_renewable) continue;
    const int K = gens[j].num_samples();
    for (int h = 0; h < H; ++h) {
      const double gsum = state.duals.gamma_iso[j].col(h).sum();
      state.duals.alpha_iso[j][h] = std::max(
          0.0, alpha_prev[j][h] - step * (iso.vartheta_c - gsum));
      for (int k = 0; k < K; ++k) {
        const double g =
            iso.vartheta_c / (K * (1.0 - gens[j].beta_iso)) -
            state.duals.gamma_iso[j](k, h);
        state.duals.eta_iso[j](k, h) =
            std::max(0.0, eta_prev[j](k, h) - step * g);
      }
    }
  }

  // Dual ascent with projection.
  for (int b = 0; b < n; ++b) {
    if (index.agg_row_of_bus[b] >= 0)
      state.duals.lambda_agg.row(index.agg_row_of_bus[b]) +=
          step * res.row(b);
    else
      state.duals.lambda_gen.row(index.gen_row_of_bus[b]) +=
          step * res.row(b);
  }
  for (int l = 0; l < grid.num_lines(); ++l) {
    const double cap = grid.lines[l].flow_limit;
    state.duals.mu_upper.row(l) =
        (state.duals.mu_upper.row(l) + step * (flow.row(l).array() - cap).matrix())
            .cwiseMax(0.0);
    state.duals.mu_lower.row(l) =
        (state.duals.mu_lower.row(l) + step * (-flow.row(l).array() - cap).matrix())
            .cwiseMax(0.0);
  }
  for (size_t j = 0; j < gens.size(); ++j) {
    if (!gens[j].has_renewable) continue;
    const int K = gens[j].num_samples();
    for (int h = 0; h < H; ++h)
      for (int k = 0; k < K; ++k) {
        const double resid =
            (reports.p_ren_kw(j, h) - gens[j].samples(k, h)) / S -
            alpha_prev[j][h] - eta_prev[j](k, h);
        // Floor slightly above zero: an all-zero multiplier column would
        // pin the penalty formula at its removable 0/0 point and freeze the
        // offer dynamics there.
        state.duals.gamma_iso[j](k, h) =
            std::max(1e-7, state.duals.gamma_iso[j](k, h) + step * resid);
      }
  }
}

MarketSignals compute_signals(const DualState& duals, const IsoConfig& iso,
                              const Eigen::VectorXd& betas,
                              const GridCase& grid, const MarketIndex& index,
                              const std::vector<GeneratorConfig>& gens) {
  const int H = index.hours;
  MarketSignals s;
  s.rho = MatrixXd::Zero(grid.num_buses(), H);
  for (int b = 0; b < grid.num_buses(); ++b) {
    if (index.agg_row_of_bus[b] >= 0)
      s.rho.row(b) = -duals.lambda_agg.row(index.agg_row_of_bus[b]);
    else
      s.rho.row(b) = duals.lambda_gen.row(index.gen_row_of_bus[b]);
  }
  s.theta = MatrixXd::Zero(static_cast<int>(gens.size()), H);
  const double theta_max =
      iso.theta_max > 0 ? iso.theta_max : default_theta_max(gens);
  for (size_t j = 0; j < gens.size(); ++j) {
    if (!gens[j].has_renewable) continue;
    const double ratio = (1.0 - betas[j]) / (1.0 - gens[j].beta_iso);
    for (int h = 0; h < H; ++h) {
      const double gsum = duals.gamma_iso[j].col(h).sum();
      const double denom = 1.0 - iso.vartheta_c + gsum;
      double theta;
      if (std::abs(denom) < 1e-9) {  // removable singularity of the formula
        theta = theta_max;
        ++s.degenerate_penalty_events;
      } else {
        theta = (gsum / denom) * ratio;  // negative past the pole; clamped
      }
      s.theta(j, h) = std::clamp(theta, 0.0, theta_max);
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Centralized reference solve.

namespace {

struct CentralAssembly {
  QpProblem qp;
  std::vector<AggregatorQpLayout> agg_layouts;
  std::vector<int> agg_off;   // column offset per aggregator block
  std::vector<int> conv_off;  // per generator
  std::vector<int> ren_off;   // per generator (-1 when conventional-only)
  std::vector<int> alpha_off;
  std::vector<int> eta_off;
  int delta_off = 0;
  std::vector<int> delta_col_of_bus;  // -1 for the slack bus
  int balance_row0 = 0;               // within A_eq, bus-major x hour
  int flow_up_row0 = 0;               // within G, line-major x hour
  int flow_lo_row0 = 0;
  std::vector<int> gamma_row0;        // per generator within G
};

CentralAssembly assemble_central(const GridCase& grid,
                                 const std::vector<AggregatorConfig>& aggs,
                                 const std::vector<GeneratorConfig>& gens,
                                 const IsoConfig& iso, int H) {
  CentralAssembly out;
  const double S = grid.power_base_kw();
  const int n = grid.num_buses();

  // Column layout.
  int nv = 0;
  out.agg_layouts.resize(aggs.size());
  std::vector<QpProblem> agg_qp(aggs.size());
  for (size_t a = 0; a < aggs.size(); ++a) {
    out.agg_layouts[a] = build_aggregator_qp(aggs[a], VectorXd(), &agg_qp[a]);
    out.agg_off.push_back(nv);
    nv += out.agg_layouts[a].num_vars;
  }
  for (size_t j = 0; j < gens.size(); ++j) {
    out.conv_off.push_back(nv);
    nv += H;
    if (gens[j].has_renewable) {
      const int K = gens[j].num_samples();
      out.ren_off.push_back(nv);
      nv += H;
      out.alpha_off.push_back(nv);
      nv += H;
      out.eta_off.push_back(nv);
      nv += K * H;
    } else {
      out.ren_off.push_back(-1);
      out.alpha_off.push_back(-1);
      out.eta_off.push_back(-1);
    }
  }
  out.delta_off = nv;
  out.delta_col_of_bus.assign(n, -1);
  for (int b = 0; b < n; ++b) {
    if (b + 1 == grid.slack_bus) continue;
    out.delta_col_of_bus[b] = nv;
    nv += H;
  }

  QpProblem p = QpProblem::make(nv);
  std::vector<Triplet> tq, ta, tg;
  std::vector<double> beq, hin;

  // Aggregator blocks: objective scaled by 1/S, constraints verbatim.
  for (size_t a = 0; a < aggs.size(); ++a) {
    const int off = out.agg_off[a];
    const QpProblem& q = agg_qp[a];
    for (int k = 0; k < q.Q.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(q.Q, k); it; ++it)
        tq.emplace_back(off + it.row(), off + it.col(), it.value() / S);
    for (int v = 0; v < q.num_vars(); ++v) {
      p.c[off + v] = q.c[v] / S;
      p.lower[off + v] = q.lower[v];
      p.upper[off + v] = q.upper[v];
    }
    for (int k = 0; k < q.A_eq.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(q.A_eq, k); it; ++it)
        ta.emplace_back(static_cast<int>(beq.size()) + it.row(), off + it.col(),
                        it.value());
    for (int r = 0; r < q.b_eq.size(); ++r) beq.push_back(q.b_eq[r]);
    for (int k = 0; k < q.G_ineq.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(q.G_ineq, k); it; ++it)
        tg.emplace_back(static_cast<int>(hin.size()) + it.row(), off + it.col(),
                        it.value());
    for (int r = 0; r < q.h_ineq.size(); ++r) hin.push_back(q.h_ineq[r]);
  }

  // Generator variables.
  for (size_t j = 0; j < gens.size(); ++j) {
    const GeneratorConfig& g = gens[j];
    for (int h = 0; h < H; ++h) {
      const int v = out.conv_off[j] + h;
      tq.emplace_back(v, v, 2.0 * g.a2 / S);
      p.c[v] = g.a1 / S;
      p.lower[v] = g.p_min;
      p.upper[v] = g.p_max;
    }
    if (!g.has_renewable) continue;
    const int K = g.num_samples();
    for (int h = 0; h < H; ++h) {
      p.lower[out.ren_off[j] + h] = 0.0;
      p.upper[out.ren_off[j] + h] = g.offer_cap[h];
      p.c[out.alpha_off[j] + h] = iso.vartheta_c;
      p.lower[out.alpha_off[j] + h] = 0.0;
      for (int k = 0; k < K; ++k) {
        const int v = out.eta_off[j] + k * H + h;
        p.c[v] = iso.vartheta_c / (K * (1.0 - g.beta_iso));
        p.lower[v] = 0.0;
      }
    }
  }

  // Nodal balance rows, bus-major by hour, matching the decentralized
  // per-bus orientation so extracted duals share the signal sign convention.
  out.balance_row0 = static_cast<int>(beq.size());
  const auto lap = grid.laplacian();
  std::vector<int> agg_at_bus(n, -1), gen_at_bus(n, -1);
  for (size_t a = 0; a < aggs.size(); ++a) agg_at_bus[aggs[a].bus - 1] = static_cast<int>(a);
  for (size_t j = 0; j < gens.size(); ++j) gen_at_bus[gens[j].bus - 1] = static_cast<int>(j);

  for (int b = 0; b < n; ++b) {
    const bool gen_oriented = gen_at_bus[b] >= 0;
    const double sgn = gen_oriented ? 1.0 : -1.0;
    for (int h = 0; h < H; ++h) {
      const int row = out.balance_row0 + b * H + h;
      double rhs = 0.0;
      for (Eigen::SparseMatrix<double>::InnerIterator it(lap, b); it; ++it) {
        const int col = out.delta_col_of_bus[it.row()];
        if (col >= 0) ta.emplace_back(row, col + h, sgn * it.value());
      }
      if (gen_oriented) {
        const int j = gen_at_bus[b];
        ta.emplace_back(row, out.conv_off[j] + h, -1.0 / S);
        if (out.ren_off[j] >= 0)
          ta.emplace_back(row, out.ren_off[j] + h, -1.0 / S);
      }
      if (agg_at_bus[b] >= 0) {
        const int a = agg_at_bus[b];
        double shifted = aggs[a].baseload[h];
        for (size_t l = 0; l < aggs[a].loads.size(); ++l) {
          const int v = out.agg_layouts[a].var_of_hour[l][h];
          if (v >= 0) ta.emplace_back(row, out.agg_off[a] + v, sgn / S);
          shifted += out.agg_layouts[a].shift(l, h);
        }
        rhs = -sgn * shifted / S;
      }
      beq.push_back(rhs);
    }
  }

  // Line-flow limit rows.
  out.flow_up_row0 = static_cast<int>(hin.size());
  for (int l = 0; l < grid.num_lines(); ++l) {
    const Line& ln = grid.lines[l];
    const int cf = out.delta_col_of_bus[ln.from_bus - 1];
    const int ct = out.delta_col_of_bus[ln.to_bus - 1];
    for (int h = 0; h < H; ++h) {
      const int row = static_cast<int>(hin.size());
      if (cf >= 0) tg.emplace_back(row, cf + h, ln.susceptance_b);
      if (ct >= 0) tg.emplace_back(row, ct + h, -ln.susceptance_b);
      hin.push_back(ln.flow_limit);
    }
  }
  out.flow_lo_row0 = static_cast<int>(hin.size());
  for (int l = 0; l < grid.num_lines(); ++l) {
    const Line& ln = grid.lines[l];
    const int cf = out.delta_col_of_bus[ln.from_bus - 1];
    const int ct = out.delta_col_of_bus[ln.to_bus - 1];
    for (int h = 0; h < H; ++h) {
      const int row = static_cast<int>(hin.size());
      if (cf >= 0) tg.emplace_back(row, cf + h, -ln.susceptance_b);
      if (ct >= 0) tg.emplace_back(row, ct + h, ln.susceptance_b);
      hin.push_back(ln.flow_limit);
    }
  }

  // ISO-side CVaR coupling rows, per unit.
  out.gamma_row0.assign(gens.size(), -1);
  for (size_t j = 0; j < gens.size(); ++j) {
    if (!gens[j].has_renewable) continue;
    const int K = gens[j].num_samples();
    out.gamma_row0[j] = static_cast<int>(hin.size());
    for (int k = 0; k < K; ++k)
      for (int h = 0; h < H; ++h) {
        const int row = static_cast<int>(hin.size());
        tg.emplace_back(row, out.ren_off[j] + h, 1.0 / S);
        tg.emplace_back(row, out.alpha_off[j] + h, -1.0);
        tg.emplace_back(row, out.eta_off[j] + k * H + h, -1.0);
        hin.push_back(gens[j].samples(k, h) / S);
      }
  }

  p.Q.setFromTriplets(tq.begin(), tq.end());
  p.A_eq.resize(static_cast<int>(beq.size()), nv);
  p.A_eq.setFromTriplets(ta.begin(), ta.end());
  p.b_eq = Eigen::Map<VectorXd>(beq.data(), beq.size());
  p.G_ineq.resize(static_cast<int>(hin.size()), nv);
  p.G_ineq.setFromTriplets(tg.begin(), tg.end());
  p.h_ineq = Eigen::Map<VectorXd>(hin.data(), hin.size());
  out.qp = std::move(p);
  return out;
}

// Elastic feasibility diagnosis: relax the balance equalities and flow
// limits, minimize total violation, report the worst offender.
std::string diagnose_infeasibility(const GridCase& grid,
                                   const std::vector<AggregatorConfig>& aggs,
                                   const CentralAssembly& asm_in, int H) {
  const QpProblem& base = asm_in.qp;
  const int nv = base.num_vars();
  const int n_bal = grid.num_buses() * H;
  const int n_flow = 2 * grid.num_lines() * H;
  QpProblem p = base;
  const int nv2 = nv + 2 * n_bal + n_flow;
  p.c.conservativeResize(nv2);
  p.lower.conservativeResize(nv2);
  p.upper.conservativeResize(nv2);
  for (int v = nv; v < nv2; ++v) {
    p.c[v] = 1.0;
    p.lower[v] = 0.0;
    p.upper[v] = std::numeric_limits<double>::infinity();
  }
  p.c.head(nv).setZero();
  p.Q.resize(nv2, nv2);  // feasibility only
  std::vector<Triplet> ta, tg;
  for (int k = 0; k < base.A_eq.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(base.A_eq, k); it; ++it)
      ta.emplace_back(it.row(), it.col(), it.value());
  for (int i = 0; i < n_bal; ++i) {
    ta.emplace_back(asm_in.balance_row0 + i, nv + 2 * i, 1.0);
    ta.emplace_back(asm_in.balance_row0 + i, nv + 2 * i + 1, -1.0);
  }
  p.A_eq.resize(base.A_eq.rows(), nv2);
  p.A_eq.setFromTriplets(ta.begin(), ta.end());
  for (int k = 0; k < base.G_ineq.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(base.G_ineq, k); it; ++it)
      tg.emplace_back(it.row(), it.col(), it.value());
  for (int i = 0; i < n_flow; ++i)
    tg.emplace_back(asm_in.flow_up_row0 + i, nv + 2 * n_bal + i, -1.0);
  p.G_ineq.resize(base.G_ineq.rows(), nv2);
  p.G_ineq.setFromTriplets(tg.begin(), tg.end());

  const QpSolution sol = solve_qp(p, 1e-8, 150);
  double worst = 0.0;
  std::string what = "unlocated violation";
  for (int i = 0; i < n_bal; ++i) {
    const double v = sol.x[nv + 2 * i] + sol.x[nv + 2 * i + 1];
    if (v > worst) {
      worst = v;
      what = "nodal balance at bus " + std::to_string(i / H + 1) + " hour " +
             std::to_string(i % H + 1);
    }
  }
  for (int i = 0; i < n_flow; ++i) {
    const double v = sol.x[nv + 2 * n_bal + i];
    if (v > worst) {
      worst = v;
      const int li = (i % (grid.num_lines() * H)) / H;
      what = "flow limit on line " + std::to_string(grid.lines[li].from_bus) +
             "-" + std::to_string(grid.lines[li].to_bus) + " hour " +
             std::to_string(i % H + 1);
    }
  }
  (void)aggs;
  std::ostringstream os;
  os << what << " (minimum violation " << worst << " pu)";
  return os.str();
}

}  // namespace

double iso_objective_cents(const GridCase& grid,
                           const std::vector<AggregatorConfig>& aggs,
                           const std::vector<GeneratorConfig>& gens,
                           const IsoConfig& iso,
                           const std::vector<LoadSchedule>& schedules,
                           const std::vector<GeneratorDecision>& decisions) {
  (void)grid;
  double f = 0.0;
  for (size_t a = 0; a < aggs.size(); ++a)
    for (size_t l = 0; l < aggs[a].loads.size(); ++l)
      f += discomfort_cost(aggs[a].loads[l], schedules[a].x.row(l));
  const int H =
      gens.empty() ? 0 : static_cast<int>(decisions[0].p_conv.size());
  for (size_t j = 0; j < gens.size(); ++j) {
    for (int h = 0; h < H; ++h)
      f += conv_cost_unchecked(gens[j], decisions[j].p_conv[h]);
    if (gens[j].has_renewable) {
      const int K = gens[j].num_samples();
      for (int h = 0; h < H; ++h) {
        std::vector<double> col(K);
        for (int k = 0; k < K; ++k) col[k] = gens[j].samples(k, h);
        f += iso.vartheta_c *
             cvar_saa(decisions[j].p_ren[h], 1.0, col, gens[j].beta_iso).cvar;
      }
    }
  }
  return f;
}

CentralizedSolution centralized_solve(const GridCase& grid,
                                      const std::vector<AggregatorConfig>& aggs,
                                      const std::vector<GeneratorConfig>& gens,
                                      const IsoConfig& iso) {
  CentralizedSolution out;
  const int H = aggs.empty() ? (gens.empty() ? 0 : 24)
                             : static_cast<int>(aggs[0].baseload.size());
  const MarketIndex index = MarketIndex::build(grid, aggs, gens, H);
  CentralAssembly cassm = assemble_central(grid, aggs, gens, iso, H);

  const QpSolution sol = solve_qp(cassm.qp, 1e-8, 200);
  out.status = sol.status;
  out.kkt_residual = sol.kkt_residual;
  if (sol.status == QpStatus::infeasible) {
    out.infeasibility = diagnose_infeasibility(grid, aggs, cassm, H);
    return out;
  }

  // Primal extraction.
  out.schedules.resize(aggs.size());
  for (size_t a = 0; a < aggs.size(); ++a)
    out.schedules[a] = schedule_from_solution(
        aggs[a], cassm.agg_layouts[a],
        sol.x.segment(cassm.agg_off[a], cassm.agg_layouts[a].num_vars));
  out.decisions.resize(gens.size());
  out.duals = DualState::zeros(grid, index, gens);
  for (size_t j = 0; j < gens.size(); ++j) {
    GeneratorDecision& d = out.decisions[j];
    d.p_conv = sol.x.segment(cassm.conv_off[j], H)
                   .cwiseMax(gens[j].p_min)
                   .cwiseMin(gens[j].p_max);
    if (gens[j].has_renewable) {
      const int K = gens[j].num_samples();
      d.p_ren = sol.x.segment(cassm.ren_off[j], H)
                    .cwiseMax(0.0)
                    .cwiseMin(gens[j].offer_cap);
      out.duals.alpha_iso[j] =
          sol.x.segment(cassm.alpha_off[j], H).cwiseMax(0.0);
      out.duals.eta_iso[j].resize(K, H);
      for (int k = 0; k < K; ++k)
        for (int h = 0; h < H; ++h)
          out.duals.eta_iso[j](k, h) =
              std::max(0.0, sol.x[cassm.eta_off[j] + k * H + h]);
    } else {
      d.p_ren = VectorXd::Zero(H);
    }
    d.alpha = VectorXd::Zero(0);
    d.eta.resize(0, H);
  }
  out.angles.delta = MatrixXd::Zero(grid.num_buses(), H);
  for (int b = 0; b < grid.num_buses(); ++b) {
    const int col = cassm.delta_col_of_bus[b];
    if (col >= 0) out.angles.delta.row(b) = sol.x.segment(col, H).transpose();
  }

  // Dual extraction.
  for (int b = 0; b < grid.num_buses(); ++b)
    for (int h = 0; h < H; ++h) {
      const double lam = sol.eq_duals[cassm.balance_row0 + b * H + h];
      if (index.agg_row_of_bus[b] >= 0)
        out.duals.lambda_agg(index.agg_row_of_bus[b], h) = lam;
      else
        out.duals.lambda_gen(index.gen_row_of_bus[b], h) = lam;
    }
  for (int l = 0; l < grid.num_lines(); ++l)
    for (int h = 0; h < H; ++h) {
      out.duals.mu_upper(l, h) = sol.ineq_duals[cassm.flow_up_row0 + l * H + h];
      out.duals.mu_lower(l, h) = sol.ineq_duals[cassm.flow_lo_row0 + l * H + h];
    }
  for (size_t j = 0; j < gens.size(); ++j) {
    if (!gens[j].has_renewable) continue;
    const int K = gens[j].num_samples();
    for (int k = 0; k < K; ++k)
      for (int h = 0; h < H; ++h)
        out.duals.gamma_iso[j](k, h) =
            sol.ineq_duals[cassm.gamma_row0[j] + k * H + h];
  }

  out.objective_cents =
      iso_objective_cents(grid, aggs, gens, iso, out.schedules, out.decisions);
  return out;
}

Theorem2Report verify_theorem2(const GridCase& grid,
                               const std::vector<AggregatorConfig>& aggs,
                               const std::vector<GeneratorConfig>& gens,
                               const IsoConfig& iso, double tol,
                               const MarketSignals* signal_override) {
  Theorem2Report rep;
  const int H = aggs.empty() ? 24 : static_cast<int>(aggs[0].baseload.size());
  const MarketIndex index = MarketIndex::build(grid, aggs, gens, H);
  const CentralizedSolution central = centralized_solve(grid, aggs, gens, iso);
  if (central.status != QpStatus::optimal)
    throw std::runtime_error("verify_theorem2: centralized solve failed: " +
                             central.infeasibility);

  VectorXd betas(gens.size());
  for (size_t j = 0; j < gens.size(); ++j) betas[j] = gens[j].beta;
  rep.signals =
      compute_signals(central.duals, iso, betas, grid, index, gens);
  if (signal_override) rep.signals = *signal_override;

  for (size_t a = 0; a < aggs.size(); ++a) {
    const VectorXd prices = rep.signals.rho.row(index.aggregator_bus[a]);
    AgentSolveInfo info;
    (void)solve_aggregator_local(aggs[a], prices, &info);
    const double restricted = total_cost(aggs[a], central.schedules[a], prices);
    Theorem2Entity e;
    e.name = "aggregator@bus" + std::to_string(aggs[a].bus);
    e.local_objective = info.objective;
    e.restricted_objective = restricted;
    e.relative_deviation = (restricted - info.objective) /
                           std::max(1.0, std::abs(info.objective));
    rep.entities.push_back(e);
  }
  for (size_t j = 0; j < gens.size(); ++j) {
    const VectorXd prices = rep.signals.rho.row(index.generator_bus[j]);
    const VectorXd thetas = rep.signals.theta.row(j);
    AgentSolveInfo info;
    (void)solve_generator_local(gens[j], prices, thetas, &info);
    // Entity objective at the centralized point, with the threshold
    // variables inner-minimized.
    GeneratorDecision d = central.decisions[j];
    const int K = gens[j].has_renewable ? gens[j].num_samples() : 0;
    d.alpha = VectorXd::Zero(H);
    d.eta = MatrixXd::Zero(K, H);
    if (gens[j].has_renewable) {
      for (int h = 0; h < H; ++h) {
        std::vector<double> col(K);
        for (int k = 0; k < K; ++k) col[k] = gens[j].samples(k, h);
        d.alpha[h] = cvar_saa(d.p_ren[h], thetas[h], col, gens[j].beta).alpha_star;
        for (int k = 0; k < K; ++k)
          d.eta(k, h) = std::max(
              0.0, thetas[h] * (d.p_ren[h] - gens[j].samples(k, h)) - d.alpha[h]);
      }
    }
    const double restricted = profit(gens[j], d, prices, thetas);
    Theorem2Entity e;
    e.name = "generator@bus" + std::to_string(gens[j].bus);
    e.local_objective = info.objective;
    e.restricted_objective = restricted;
    e.relative_deviation = (info.objective - restricted) /
                           std::max(1.0, std::abs(info.objective));
    rep.entities.push_back(e);
  }
  rep.max_relative_deviation = 0.0;
  for (const auto& e : rep.entities)
    rep.max_relative_deviation =
        std::max(rep.max_relative_deviation, e.relative_deviation);
  rep.passed = rep.max_relative_deviation <= tol;
  return rep;
}

}  // namespace daymarket

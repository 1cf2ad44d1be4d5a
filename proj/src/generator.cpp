#include "daymarket/generator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace daymarket {

std::string validate_generator(const GeneratorConfig& g, int hours) {
  if (g.a2 < 0) return "a2 must be nonnegative";
  if (g.p_min < 0 || g.p_min > g.p_max)
    return "conventional limits violate 0 <= p_min <= p_max";
  if (g.has_renewable) {
    if (g.samples.rows() < 1) return "renewable unit without samples";
    if (g.samples.cols() != hours) return "sample matrix column count != horizon";
    if (g.samples.minCoeff() < 0) return "negative renewable sample";
    if (!(g.beta > 0 && g.beta < 1)) return "beta must lie in (0,1)";
    if (!(g.beta_iso > 0 && g.beta_iso < 1))
      return "beta_iso must lie in (0,1)";
    if (g.offer_cap.size() != hours) return "offer_cap length mismatch";
    if (g.offer_cap.minCoeff() < 0) return "offer_cap must be nonnegative";
  }
  return {};
}

double conventional_cost(const GeneratorConfig& g, double p) {
  if (p < g.p_min - 1e-9 || p > g.p_max + 1e-9)
    throw std::domain_error("conventional_cost: output outside unit limits");
  return g.a2 * p * p + g.a1 * p + g.a0;
}

double shortfall_penalty(double theta, double offer, double actual) {
  return theta * std::max(offer - actual, 0.0);
}

double empirical_var(std::span<const double> penalties, double beta) {
  if (penalties.empty()) throw std::domain_error("empirical_var: no samples");
  if (!(beta > 0 && beta < 1))
    throw std::domain_error("empirical_var: beta outside (0,1)");
  std::vector<double> sorted(penalties.begin(), penalties.end());
  std::sort(sorted.begin(), sorted.end());
  const int k = static_cast<int>(
      std::ceil(beta * static_cast<double>(sorted.size()) - 1e-12));
  return std::max(0.0, sorted[std::max(0, k - 1)]);
}

CvarResult cvar_saa(double offer, double theta,
                    std::span<const double> samples_row, double beta) {
  if (samples_row.empty()) throw std::domain_error("cvar_saa: no samples");
  if (!(beta > 0 && beta < 1))
    throw std::domain_error("cvar_saa: beta outside (0,1)");
  if (theta < 0) throw std::domain_error("cvar_saa: negative theta");
  const int k_count = static_cast<int>(samples_row.size());
  std::vector<double> pen(k_count);
  for (int k = 0; k < k_count; ++k)
    pen[k] = shortfall_penalty(theta, offer, samples_row[k]);
  // Minimizer of alpha + sum [pen_k - alpha]^+ / (K(1-beta)) over alpha >= 0
  // is the beta-quantile of the penalties (any point of the flat optimal
  // set works; the order statistic is canonical).
  CvarResult r;
  r.alpha_star = empirical_var(pen, beta);
  double tail = 0.0;
  for (double d : pen) tail += std::max(d - r.alpha_star, 0.0);
  r.cvar = r.alpha_star + tail / (k_count * (1.0 - beta));
  return r;
}

double profit(const GeneratorConfig& g, const GeneratorDecision& d,
              const Eigen::VectorXd& prices, const Eigen::VectorXd& thetas) {
  const int hours = static_cast<int>(d.p_conv.size());
  if (prices.size() != hours ||
      (g.has_renewable &&
       (d.p_ren.size() != hours || thetas.size() != hours ||
        d.alpha.size() != hours || d.eta.cols() != hours)))
    throw std::domain_error("profit: dimension mismatch");
  const int K = g.num_samples();
  double val = 0.0;
  for (int h = 0; h < hours; ++h) {
    const double ren = g.has_renewable ? d.p_ren[h] : 0.0;
    val += (d.p_conv[h] + ren) * prices[h];
    val -= conventional_cost(g, d.p_conv[h]);
    if (g.has_renewable) {
      double risk = d.alpha[h];
      for (int k = 0; k < K; ++k)
        risk += d.eta(k, h) / (K * (1.0 - g.beta));
      val -= risk;
    }
  }
  return val;
}

GeneratorDecision solve_generator_local(const GeneratorConfig& g,
                                        const Eigen::VectorXd& prices,
                                        const Eigen::VectorXd& thetas,
                                        AgentSolveInfo* info) {
  const int hours = static_cast<int>(prices.size());
  const std::string err = validate_generator(g, hours);
  if (!err.empty())
    throw std::runtime_error("generator at bus " + std::to_string(g.bus) +
                             ": " + err);
  if (g.has_renewable && thetas.minCoeff() < 0)
    throw std::runtime_error("generator at bus " + std::to_string(g.bus) +
                             ": negative penalty signal");
  const int K = g.has_renewable ? g.num_samples() : 0;

  GeneratorDecision d;
  d.p_conv.resize(hours);
  d.p_ren = Eigen::VectorXd::Zero(hours);
  d.alpha = Eigen::VectorXd::Zero(g.has_renewable ? hours : 0);
  d.eta.resize(K, hours);
  double worst_kkt = 0.0;
  QpStatus worst_status = QpStatus::optimal;

  // The program separates by hour: variables p_conv, p_ren, alpha and the
  // per-sample eta column, minimizing the negated profit.
  for (int h = 0; h < hours; ++h) {
    const int nv = g.has_renewable ? 3 + K : 1;
    QpProblem p = QpProblem::make(nv);
    std::vector<Eigen::Triplet<double>> tq, tg;
    std::vector<double> hin;
    tq.emplace_back(0, 0, 2.0 * g.a2);
    p.c[0] = g.a1 - prices[h];
    p.lower[0] = g.p_min;
    p.upper[0] = g.p_max;
    if (g.has_renewable) {
      p.c[1] = -prices[h];
      p.lower[1] = 0.0;
      p.upper[1] = g.offer_cap[h];
      p.c[2] = 1.0;
      p.lower[2] = 0.0;
      for (int k = 0; k < K; ++k) {
        p.c[3 + k] = 1.0 / (K * (1.0 - g.beta));
        p.lower[3 + k] = 0.0;
        const int row = static_cast<int>(hin.size());
        if (thetas[h] != 0.0) tg.emplace_back(row, 1, thetas[h]);
        tg.emplace_back(row, 2, -1.0);
        tg.emplace_back(row, 3 + k, -1.0);
        hin.push_back(thetas[h] * g.samples(k, h));
      }
    }
    p.Q.setFromTriplets(tq.begin(), tq.end());
    p.G_ineq.resize(static_cast<int>(hin.size()), nv);
    p.G_ineq.setFromTriplets(tg.begin(), tg.end());
    p.h_ineq = Eigen::Map<Eigen::VectorXd>(hin.data(), hin.size());

    const QpSolution sol = solve_qp(p);
    if (sol.status == QpStatus::infeasible)
      throw std::runtime_error("generator at bus " + std::to_string(g.bus) +
                               ": local problem infeasible");
    worst_kkt = std::max(worst_kkt, sol.kkt_residual);
    if (sol.status != QpStatus::optimal) worst_status = sol.status;
    d.p_conv[h] = std::clamp(sol.x[0], g.p_min, g.p_max);
    if (g.has_renewable) {
      d.p_ren[h] = std::clamp(sol.x[1], 0.0, g.offer_cap[h]);
      d.alpha[h] = std::max(sol.x[2], 0.0);
      for (int k = 0; k < K; ++k)
        d.eta(k, h) = std::max(
            {sol.x[3 + k], 0.0,
             thetas[h] * (d.p_ren[h] - g.samples(k, h)) - d.alpha[h]});
    }
  }
  if (info) {
    info->status = worst_status;
    info->kkt_residual = worst_kkt;
    info->objective = profit(
        g, d, prices,
        g.has_renewable ? thetas : Eigen::VectorXd::Zero(hours));
  }
  return d;
}

}  // namespace daymarket

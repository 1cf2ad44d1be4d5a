#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>
#include <vector>

#include "daymarket/generator.hpp"

using namespace daymarket;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Independent oracle: sort penalties descending and average the top
// (1-beta)K probability mass with fractional weighting on the boundary
// sample.
double cvar_tail_average(std::vector<double> penalties, double beta) {
  std::sort(penalties.begin(), penalties.end(), std::greater<>());
  const double mass = (1.0 - beta) * static_cast<double>(penalties.size());
  double acc = 0.0, used = 0.0;
  for (double p : penalties) {
    const double w = std::min(1.0, mass - used);
    if (w <= 0) break;
    acc += w * p;
    used += w;
  }
  return acc / mass;
}

GeneratorConfig conventional_gen(double a2, double a1, double a0, double pmin,
                                 double pmax) {
  GeneratorConfig g;
  g.bus = 1;
  g.a2 = a2;
  g.a1 = a1;
  g.a0 = a0;
  g.p_min = pmin;
  g.p_max = pmax;
  return g;
}

// 1-D brute force over the renewable offer at fixed theta/rho, using the
// closed-form inner minimization over the threshold variables.
double best_offer_scan(const std::vector<double>& samples, double rho,
                       double theta, double beta, double cap, double resol) {
  double best_p = 0.0, best_v = 1e300;
  for (double p = 0.0; p <= cap + 1e-12; p += resol) {
    const double risk = cvar_saa(p, theta, samples, beta).cvar;
    const double v = risk - rho * p;
    if (v < best_v - 1e-12) {
      best_v = v;
      best_p = p;
    }
  }
  return best_p;
}

}  // namespace

TEST_CASE("conventional_cost") {
  GeneratorConfig g = conventional_gen(0.1, 2.0, 5.0, 0.0, 100.0);
  CHECK(conventional_cost(g, 10.0) == doctest::Approx(35.0));
  CHECK(conventional_cost(g, 0.0) == doctest::Approx(5.0));
  GeneratorConfig lin = conventional_gen(0.0, 3.0, 0.0, 0.0, 100.0);
  CHECK(conventional_cost(lin, 4.0) == doctest::Approx(12.0));
  CHECK_THROWS_AS(conventional_cost(g, 101.0), std::domain_error);
}

TEST_CASE("shortfall_penalty") {
  CHECK(shortfall_penalty(1.0, 3.0, 1.0) == doctest::Approx(2.0));
  CHECK(shortfall_penalty(2.5, 1.0, 4.0) == doctest::Approx(0.0));
  CHECK(shortfall_penalty(0.0, 9.0, 1.0) == doctest::Approx(0.0));
}

TEST_CASE("empirical_var order statistics") {
  const std::vector<double> pen{2, 1, 0, 0};
  CHECK(empirical_var(pen, 0.5) == doctest::Approx(0.0));
  CHECK(empirical_var(pen, 0.75) == doctest::Approx(1.0));
  const std::vector<double> flat{3, 3, 3};
  CHECK(empirical_var(flat, 0.6) == doctest::Approx(3.0));
  CHECK_THROWS_AS(empirical_var(std::vector<double>{}, 0.5),
                  std::domain_error);
  CHECK_THROWS_AS(empirical_var(pen, 1.5), std::domain_error);
}

TEST_CASE("cvar_saa worked examples") {
  const std::vector<double> samples{1, 2, 3, 4};
  SUBCASE("tail mean of the worst half") {
    const CvarResult r = cvar_saa(3.0, 1.0, samples, 0.5);
    CHECK(r.cvar == doctest::Approx(1.5));
  }
  SUBCASE("offer below every sample has no risk") {
    CHECK(cvar_saa(0.5, 2.0, samples, 0.9).cvar == doctest::Approx(0.0));
  }
  SUBCASE("degenerate distribution") {
    const std::vector<double> flat{5, 5, 5, 5, 5};
    for (double beta : {0.3, 0.5, 0.9})
      CHECK(cvar_saa(6.0, 2.0, flat, beta).cvar == doctest::Approx(2.0));
  }
  SUBCASE("beta outside (0,1) raises") {
    CHECK_THROWS_AS(cvar_saa(1.0, 1.0, samples, 0.0), std::domain_error);
  }
}

TEST_CASE("cvar_saa equals the sorted-tail-average oracle on random data") {
  std::mt19937 rng(123);
  auto u = [&] { return std::uniform_real_distribution<>(0.0, 1.0)(rng); };
  const double betas[] = {0.5, 0.75, 0.9, 0.95};
  for (int trial = 0; trial < 1000; ++trial) {
    const int K = 1 + static_cast<int>(rng() % 100);
    std::vector<double> samples(K);
    for (double& s : samples) s = 10.0 * u();
    const double theta = 3.0 * u();
    const double offer = 12.0 * u();
    const double beta = betas[rng() % 4];
    std::vector<double> pen(K);
    for (int k = 0; k < K; ++k)
      pen[k] = shortfall_penalty(theta, offer, samples[k]);
    const double oracle = cvar_tail_average(pen, beta);
    const CvarResult r = cvar_saa(offer, theta, samples, beta);
    CHECK(r.cvar == doctest::Approx(oracle).epsilon(1e-9));
  }
}

TEST_CASE("cvar_saa is convex and nondecreasing in the offer") {
  const std::vector<double> samples{0.5, 1.2, 2.0, 2.8, 3.3, 4.1};
  const double beta = 0.75, theta = 1.7, dp = 1e-3;
  double prev_slope = -1e300;
  for (double p = 0.1; p < 5.0; p += 0.1) {
    const double f0 = cvar_saa(p, theta, samples, beta).cvar;
    const double f1 = cvar_saa(p + dp, theta, samples, beta).cvar;
    const double slope = (f1 - f0) / dp;
    CHECK(slope >= -1e-9);
    CHECK(slope >= prev_slope - 1e-6);
    prev_slope = slope;
  }
}

TEST_CASE("profit evaluation") {
  const int H = 1;
  SUBCASE("conventional only, optimum from 2p = rho") {
    GeneratorConfig g = conventional_gen(1.0, 0.0, 0.0, 0.0, 10.0);
    GeneratorDecision d;
    d.p_conv = VectorXd::Constant(H, 2.0);
    d.p_ren = VectorXd::Zero(H);
    d.alpha = VectorXd::Zero(0);
    d.eta.resize(0, H);
    CHECK(profit(g, d, VectorXd::Constant(H, 4.0), VectorXd::Zero(H)) ==
          doctest::Approx(4.0));
  }
  SUBCASE("zero prices and zero output leave only the fixed cost") {
    GeneratorConfig g = conventional_gen(0.5, 1.0, 7.0, 0.0, 10.0);
    GeneratorDecision d;
    d.p_conv = VectorXd::Zero(3);
    d.p_ren = VectorXd::Zero(3);
    d.alpha = VectorXd::Zero(0);
    d.eta.resize(0, 3);
    CHECK(profit(g, d, VectorXd::Zero(3), VectorXd::Zero(3)) ==
          doctest::Approx(-21.0));
  }
  SUBCASE("auxiliary risk term reproduces cvar_saa at the tight point") {
    GeneratorConfig g = conventional_gen(0.0, 0.0, 0.0, 0.0, 10.0);
    g.has_renewable = true;
    g.beta = 0.5;
    g.beta_iso = 0.5;
    g.samples.resize(4, 1);
    g.samples << 1, 2, 3, 4;
    g.offer_cap = VectorXd::Constant(1, 5.0);
    const double theta = 1.0, offer = 3.0;
    std::vector<double> col{1, 2, 3, 4};
    const CvarResult r = cvar_saa(offer, theta, col, g.beta);
    GeneratorDecision d;
    d.p_conv = VectorXd::Zero(1);
    d.p_ren = VectorXd::Constant(1, offer);
    d.alpha = VectorXd::Constant(1, r.alpha_star);
    d.eta.resize(4, 1);
    for (int k = 0; k < 4; ++k)
      d.eta(k, 0) =
          std::max(0.0, theta * (offer - g.samples(k, 0)) - r.alpha_star);
    // zero prices: profit = -(risk term) = -cvar
    CHECK(profit(g, d, VectorXd::Zero(1), VectorXd::Constant(1, theta)) ==
          doctest::Approx(-r.cvar).epsilon(1e-12));
  }
}

TEST_CASE("solve_local conventional stationarity") {
  GeneratorConfig g = conventional_gen(1.0, 0.0, 0.0, 0.0, 10.0);
  AgentSolveInfo info;
  const GeneratorDecision d = solve_generator_local(
      g, VectorXd::Constant(1, 4.0), VectorXd::Zero(1), &info);
  CHECK(d.p_conv[0] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(info.kkt_residual <= 1e-6);
}

TEST_CASE("solve_local renewable offer against the 1-D scan oracle") {
  GeneratorConfig g = conventional_gen(0.0, 0.0, 0.0, 0.0, 0.0);
  g.has_renewable = true;
  g.beta = 0.5;
  g.beta_iso = 0.5;
  g.samples.resize(4, 1);
  g.samples << 1.0, 1.0, 1.0, 1.0;
  g.offer_cap = VectorXd::Constant(1, 5.0);

  SUBCASE("flat samples, revenue slope below the risk slope beyond them") {
    const GeneratorDecision d = solve_generator_local(
        g, VectorXd::Constant(1, 0.5), VectorXd::Constant(1, 1.0));
    CHECK(d.p_ren[0] == doctest::Approx(1.0).epsilon(1e-5));
    std::vector<double> col{1, 1, 1, 1};
    CHECK(best_offer_scan(col, 0.5, 1.0, 0.5, 5.0, 1e-3) ==
          doctest::Approx(1.0).epsilon(1e-3));
  }
  SUBCASE("zero penalty pushes the offer to its cap") {
    const GeneratorDecision d = solve_generator_local(
        g, VectorXd::Constant(1, 0.5), VectorXd::Zero(1));
    CHECK(d.p_ren[0] == doctest::Approx(5.0).epsilon(1e-6));
  }
  SUBCASE("random instances match the scan") {
    std::mt19937 rng(77);
    auto u = [&] { return std::uniform_real_distribution<>(0.0, 1.0)(rng); };
    for (int trial = 0; trial < 15; ++trial) {
      GeneratorConfig r = g;
      const int K = 5 + static_cast<int>(rng() % 6);
      r.samples.resize(K, 1);
      std::vector<double> col(K);
      for (int k = 0; k < K; ++k) {
        col[k] = 0.5 + 4.0 * u();
        r.samples(k, 0) = col[k];
      }
      r.beta = 0.5 + 0.4 * u();
      r.offer_cap = VectorXd::Constant(1, 6.0);
      const double rho = 0.2 + 1.5 * u();
      const double theta = rho + 0.2 + 2.0 * u();  // penalty above price
      const GeneratorDecision d = solve_generator_local(
          r, VectorXd::Constant(1, rho), VectorXd::Constant(1, theta));
      const double scan =
          best_offer_scan(col, rho, theta, r.beta, 6.0, 1e-3);
      // compare objective values, not argmins (flat segments are possible)
      const double v_qp =
          cvar_saa(d.p_ren[0], theta, col, r.beta).cvar - rho * d.p_ren[0];
      const double v_scan = cvar_saa(scan, theta, col, r.beta).cvar - rho * scan;
      CHECK(v_qp <= v_scan + 1e-5);
    }
  }
}

TEST_CASE("offer is nonincreasing in the penalty") {
  GeneratorConfig g = conventional_gen(0.0, 0.0, 0.0, 0.0, 0.0);
  g.has_renewable = true;
  g.beta = 0.8;
  g.beta_iso = 0.8;
  g.samples.resize(5, 1);
  g.samples << 1.0, 2.0, 3.0, 4.0, 5.0;
  g.offer_cap = VectorXd::Constant(1, 5.0);
  const double rho = 1.0;
  double prev = 1e300;
  for (double theta : {0.0, 0.5, 1.0, 2.0, 4.0, 8.0}) {
    const GeneratorDecision d = solve_generator_local(
        g, VectorXd::Constant(1, rho), VectorXd::Constant(1, theta));
    CHECK(d.p_ren[0] <= prev + 1e-6);
    prev = d.p_ren[0];
  }
}

TEST_CASE("zero penalty makes zero risk variables optimal") {
  GeneratorConfig g = conventional_gen(0.01, 1.0, 0.0, 0.0, 10.0);
  g.has_renewable = true;
  g.beta = 0.9;
  g.beta_iso = 0.9;
  g.samples.resize(3, 2);
  g.samples << 1, 2, 2, 3, 3, 4;
  g.offer_cap = VectorXd::Constant(2, 6.0);
  const GeneratorDecision d = solve_generator_local(
      g, VectorXd::Constant(2, 2.0), VectorXd::Zero(2));
  CHECK(d.alpha.cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(d.eta.cwiseAbs().maxCoeff() <= 1e-6);
  CHECK((d.p_ren - g.offer_cap).cwiseAbs().maxCoeff() <= 1e-5);
}

TEST_CASE("solve_local profit dominates random feasible points") {
  std::mt19937 rng(9);
  auto u = [&] { return std::uniform_real_distribution<>(0.0, 1.0)(rng); };
  GeneratorConfig g = conventional_gen(0.05, 1.0, 2.0, 1.0, 8.0);
  g.has_renewable = true;
  g.beta = 0.75;
  g.beta_iso = 0.75;
  g.samples.resize(6, 2);
  for (int k = 0; k < 6; ++k)
    for (int h = 0; h < 2; ++h) g.samples(k, h) = 4.0 * u();
  g.offer_cap = g.samples.colwise().maxCoeff();
  VectorXd rho(2), theta(2);
  rho << 2.0, 1.2;
  theta << 1.5, 2.5;
  AgentSolveInfo info;
  const GeneratorDecision d = solve_generator_local(g, rho, theta, &info);
  for (int trial = 0; trial < 300; ++trial) {
    GeneratorDecision r;
    r.p_conv = VectorXd::Zero(2);
    r.p_ren = VectorXd::Zero(2);
    r.alpha = VectorXd::Zero(2);
    r.eta.resize(6, 2);
    for (int h = 0; h < 2; ++h) {
      r.p_conv[h] = 1.0 + 7.0 * u();
      r.p_ren[h] = g.offer_cap[h] * u();
      std::vector<double> col(6);
      for (int k = 0; k < 6; ++k) col[k] = g.samples(k, h);
      r.alpha[h] = cvar_saa(r.p_ren[h], theta[h], col, g.beta).alpha_star;
      for (int k = 0; k < 6; ++k)
        r.eta(k, h) = std::max(
            0.0, theta[h] * (r.p_ren[h] - g.samples(k, h)) - r.alpha[h]);
    }
    CHECK(info.objective >= profit(g, r, rho, theta) - 1e-6);
  }
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "daymarket/grid.hpp"

using namespace daymarket;
using Eigen::MatrixXd;

namespace {

GridCase two_bus(double b = 10.0, double cap = 5.0) {
  GridCase g;
  g.base_mva = 10.0;
  g.slack_bus = 2;
  g.buses = {{1, BusKind::generator, -1, 0}, {2, BusKind::aggregator, 0, -1}};
  g.lines = {{1, 2, b, cap}};
  return g;
}

GridCase ring3() {
  GridCase g;
  g.base_mva = 10.0;
  g.slack_bus = 1;
  g.buses = {{1, BusKind::generator, -1, 0},
             {2, BusKind::aggregator, 0, -1},
             {3, BusKind::aggregator, 1, -1}};
  g.lines = {{1, 2, 5.0, 2.0}, {2, 3, 5.0, 2.0}, {1, 3, 5.0, 2.0}};
  return g;
}

}  // namespace

TEST_CASE("line_flow basics") {
  GridCase g = two_bus();
  AngleProfile a = AngleProfile::zeros(2, 1);

  SUBCASE("equal angles carry no flow") {
    a.delta(0, 0) = 0.3;
    a.delta(1, 0) = 0.3;
    CHECK(line_flow(g, a, g.lines[0], 0) == doctest::Approx(0.0));
  }
  SUBCASE("direct evaluation and antisymmetry") {
    a.delta(0, 0) = 0.1;
    CHECK(line_flow(g, a, g.lines[0], 0) == doctest::Approx(1.0));
    Line swapped{2, 1, 10.0, 5.0};
    CHECK(line_flow(g, a, swapped, 0) == doctest::Approx(-1.0));
  }
  SUBCASE("unknown line or hour raise domain errors") {
    CHECK_THROWS_AS(line_flow(g, a, Line{1, 3, 1.0, 1.0}, 0),
                    std::domain_error);
    CHECK_THROWS_AS(line_flow(g, a, g.lines[0], 3), std::domain_error);
  }
  SUBCASE("flow is linear in the angles") {
    a.delta(0, 0) = 0.07;
    a.delta(1, 0) = -0.02;
    const double f1 = line_flow(g, a, g.lines[0], 0);
    a.delta *= 3.5;
    CHECK(line_flow(g, a, g.lines[0], 0) == doctest::Approx(3.5 * f1));
  }
}

TEST_CASE("nodal_imbalance") {
  GridCase g = two_bus();
  SUBCASE("2-bus solved by hand: 10*(d1-d2)=1") {
    AngleProfile a = AngleProfile::zeros(2, 1);
    a.delta(0, 0) = 0.1;
    MatrixXd inj(2, 1);
    inj << 1.0, -1.0;
    const MatrixXd r = nodal_imbalance(g, a, inj);
    CHECK(r.cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("zero case") {
    AngleProfile a = AngleProfile::zeros(2, 2);
    const MatrixXd r = nodal_imbalance(g, a, MatrixXd::Zero(2, 2));
    CHECK(r.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("no flow, full imbalance") {
    AngleProfile a = AngleProfile::zeros(2, 1);
    MatrixXd inj(2, 1);
    inj << 1.0, -1.0;
    const MatrixXd r = nodal_imbalance(g, a, inj);
    CHECK(r(0, 0) == doctest::Approx(1.0));
    CHECK(r(1, 0) == doctest::Approx(-1.0));
  }
  SUBCASE("dimension mismatch") {
    AngleProfile a = AngleProfile::zeros(2, 1);
    CHECK_THROWS_AS(nodal_imbalance(g, a, MatrixXd::Zero(3, 1)),
                    std::domain_error);
  }
}

TEST_CASE("flow-term column sums cancel and gauge invariance holds") {
  GridCase g = ring3();
  std::mt19937 rng(3);
  auto u = [&] { return std::uniform_real_distribution<>(-0.5, 0.5)(rng); };
  for (int trial = 0; trial < 50; ++trial) {
    AngleProfile a = AngleProfile::zeros(3, 2);
    for (int b = 0; b < 3; ++b)
      for (int h = 0; h < 2; ++h) a.delta(b, h) = u();
    MatrixXd inj = MatrixXd::Zero(3, 2);
    const MatrixXd r = nodal_imbalance(g, a, inj);
    // total imbalance equals total injection (zero here)
    CHECK(r.colwise().sum().cwiseAbs().maxCoeff() <= 1e-12);

    AngleProfile shifted = a;
    shifted.delta.array() += 0.37;
    const MatrixXd r2 = nodal_imbalance(g, shifted, inj);
    CHECK((r - r2).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("validate_case") {
  SUBCASE("connected ring is valid") {
    CHECK(validate_case(ring3()).empty());
  }
  SUBCASE("disconnected components are flagged") {
    GridCase g = ring3();
    g.buses.push_back({4, BusKind::empty, -1, -1});
    bool found = false;
    for (const auto& v : validate_case(g)) found |= v.rule == "connectivity";
    CHECK(found);
  }
  SUBCASE("zero susceptance is flagged") {
    GridCase g = ring3();
    g.lines[0].susceptance_b = 0.0;
    bool found = false;
    for (const auto& v : validate_case(g)) found |= v.rule == "susceptance";
    CHECK(found);
  }
  SUBCASE("duplicate unordered pair is flagged") {
    GridCase g = ring3();
    g.lines.push_back({3, 2, 1.0, 1.0});
    bool found = false;
    for (const auto& v : validate_case(g)) found |= v.rule == "parallel-lines";
    CHECK(found);
  }
  SUBCASE("missing slack is flagged") {
    GridCase g = ring3();
    g.slack_bus = 9;
    bool found = false;
    for (const auto& v : validate_case(g)) found |= v.rule == "slack";
    CHECK(found);
  }
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "daymarket/scenario.hpp"

using namespace daymarket;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures{FIXTURE_DIR};

fs::path temp_dir(const char* tag) {
  const fs::path d = fs::temp_directory_path() / (std::string("daymarket_scn_") + tag);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("bundled fixtures parse and validate") {
  for (const char* name : {"twobus.scn", "sixbus.scn", "case30.scn"}) {
    const Scenario sc = load_scenario(kFixtures / name);
    CHECK(validate_scenario(sc).empty());
    CHECK(sc.horizon == 24);
    // every bus is covered by an entity after loading
    const MarketIndex ix =
        MarketIndex::build(sc.grid, sc.aggregators, sc.generators, sc.horizon);
    CHECK(static_cast<int>(ix.agg_bus_of_row.size() + ix.gen_bus_of_row.size()) ==
          sc.grid.num_buses());
  }
}

TEST_CASE("case30 fixture mirrors the reference layout") {
  const Scenario sc = load_scenario(kFixtures / "case30.scn");
  CHECK(sc.grid.num_buses() == 30);
  CHECK(sc.generators.size() == 6);
  int real_aggs = 0;
  for (const auto& a : sc.aggregators)
    if (!a.loads.empty() || a.baseload.maxCoeff() > 0) ++real_aggs;
  CHECK(real_aggs == 21);
  int renewables = 0;
  for (const auto& g : sc.generators)
    if (g.has_renewable) {
      ++renewables;
      CHECK(g.beta == doctest::Approx(0.9));
      CHECK(g.samples.cols() == 24);
      CHECK(g.samples.minCoeff() >= 0.0);
    }
  CHECK(renewables == 2);
}

TEST_CASE("validation failures are named individually") {
  const auto dir = temp_dir("bad");
  SUBCASE("dangling bus reference") {
    std::ofstream f(dir / "bad.scn");
    f << "scenario v1\nhorizon 2\nbase_mva 1\n"
      << "grid { slack 1\n buses 2\n line 1 2 1.0 5.0\n}\n"
      << "aggregator { bus 99\n baseload 1 1\n}\n"
      << "generator { bus 1\n cost 0.1 1 0\n pmin 0\n pmax 10\n}\n";
    f.close();
    CHECK_THROWS_WITH_AS(load_scenario(dir / "bad.scn"),
                         doctest::Contains("missing bus"), ScenarioError);
  }
  SUBCASE("sample matrix horizon mismatch") {
    std::ofstream csv(dir / "r.csv");
    csv << "1,2,3\n2,3,4\n";  // 3 columns for a 2-hour scenario
    csv.close();
    std::ofstream f(dir / "bad2.scn");
    f << "scenario v1\nhorizon 2\nbase_mva 1\n"
      << "grid { slack 1\n buses 2\n line 1 2 1.0 5.0\n}\n"
      << "aggregator { bus 2\n baseload 1 1\n}\n"
      << "generator { bus 1\n cost 0.1 1 0\n pmin 0\n pmax 10\n"
      << " renewable { samples r.csv\n beta 0.9\n beta_iso 0.9\n cap auto\n}\n}\n";
    f.close();
    CHECK_THROWS_WITH_AS(load_scenario(dir / "bad2.scn"),
                         doctest::Contains("column count"), ScenarioError);
  }
  SUBCASE("parse error carries the line number") {
    std::ofstream f(dir / "bad3.scn");
    f << "scenario v1\nhorizon 2\nbase_mva 1\n"
      << "grid { slack 1\n buses 2\n line 1 2 oops 5.0\n}\n";
    f.close();
    CHECK_THROWS_WITH_AS(load_scenario(dir / "bad3.scn"),
                         doctest::Contains("line 6"), ScenarioError);
  }
}

TEST_CASE("parallel lines merge by summing susceptance and limit") {
  const auto dir = temp_dir("par");
  std::ofstream f(dir / "p.scn");
  f << "scenario v1\nhorizon 1\nbase_mva 1\n"
    << "grid { slack 1\n buses 2\n line 1 2 1.0 2.0\n line 2 1 0.5 1.0\n}\n"
    << "aggregator { bus 2\n baseload 1\n}\n"
    << "generator { bus 1\n cost 0.1 1 0\n pmin 0\n pmax 10\n}\n";
  f.close();
  const Scenario sc = load_scenario(dir / "p.scn");
  REQUIRE(sc.grid.num_lines() == 1);
  CHECK(sc.grid.lines[0].susceptance_b == doctest::Approx(1.5));
  CHECK(sc.grid.lines[0].flow_limit == doctest::Approx(3.0));
}

TEST_CASE("truncated normal sampler") {
  SUBCASE("empirical mean within [13,17] at mean 15 sd 5, all nonnegative") {
    std::mt19937 rng(4);
    double acc = 0.0;
    const int n = 4000;
    for (int i = 0; i < n; ++i) {
      const double u = (rng() + 0.5) / 4294967296.0;
      const double x = truncated_normal(15.0, 5.0, u);
      CHECK(x >= 0.0);
      acc += x;
    }
    CHECK(acc / n > 13.0);
    CHECK(acc / n < 17.0);
  }
  SUBCASE("draws are monotone in the mean for a fixed uniform") {
    for (double u : {0.05, 0.3, 0.6, 0.95})
      CHECK(truncated_normal(15.0, 5.0, u) < truncated_normal(30.0, 5.0, u));
  }
}

TEST_CASE("generate_synthetic determinism and bound construction") {
  SyntheticSpec spec;
  spec.seed = 11;
  spec.loads_per_bus_min = 40;
  spec.loads_per_bus_max = 60;
  spec.blocks_per_bus = 3;
  const GridCase base = builtin_base_case("sixbus");
  const Scenario s1 = generate_synthetic(spec, base);
  const Scenario s2 = generate_synthetic(spec, base);

  REQUIRE(s1.aggregators.size() == s2.aggregators.size());
  for (size_t a = 0; a < s1.aggregators.size(); ++a) {
    CHECK((s1.aggregators[a].baseload - s2.aggregators[a].baseload)
              .cwiseAbs()
              .maxCoeff() == 0.0);
    REQUIRE(s1.aggregators[a].loads.size() == s2.aggregators[a].loads.size());
    for (size_t l = 0; l < s1.aggregators[a].loads.size(); ++l) {
      const auto& l1 = s1.aggregators[a].loads[l];
      const auto& l2 = s2.aggregators[a].loads[l];
      CHECK((l1.desired - l2.desired).cwiseAbs().maxCoeff() == 0.0);
      CHECK(l1.omega == l2.omega);
      // per-hour bounds at +-30% of desired inside the horizon
      for (int h : l1.horizon) {
        CHECK(l1.x_min[h] == doctest::Approx(0.7 * l1.desired[h]));
        CHECK(l1.x_max[h] == doctest::Approx(1.3 * l1.desired[h]));
      }
      CHECK(l1.total_min == doctest::Approx(0.95 * l1.desired.sum()));
      CHECK(l1.total_max == doctest::Approx(1.05 * l1.desired.sum()));
    }
  }
  CHECK(validate_scenario(s1).empty());
}

TEST_CASE("generated scenarios round-trip through the text format") {
  SyntheticSpec spec;
  spec.seed = 3;
  spec.loads_per_bus_min = 30;
  spec.loads_per_bus_max = 50;
  spec.blocks_per_bus = 2;
  Scenario sc = generate_synthetic(spec, builtin_base_case("twobus"));
  sc.name = "rt";
  const auto dir = temp_dir("rt");
  save_scenario(sc, dir / "rt.scn");
  const Scenario back = load_scenario(dir / "rt.scn");

  CHECK(back.horizon == sc.horizon);
  CHECK(back.grid.num_buses() == sc.grid.num_buses());
  CHECK(back.grid.num_lines() == sc.grid.num_lines());
  REQUIRE(back.generators.size() == sc.generators.size());
  for (size_t j = 0; j < sc.generators.size(); ++j) {
    CHECK(back.generators[j].a2 == sc.generators[j].a2);
    CHECK(back.generators[j].p_max == sc.generators[j].p_max);
    if (sc.generators[j].has_renewable)
      CHECK((back.generators[j].samples - sc.generators[j].samples)
                .cwiseAbs()
                .maxCoeff() == 0.0);
  }
  size_t real_a = 0;
  for (const auto& a : back.aggregators)
    if (!a.loads.empty() || a.baseload.maxCoeff() > 0) ++real_a;
  size_t real_b = 0;
  for (const auto& a : sc.aggregators)
    if (!a.loads.empty() || a.baseload.maxCoeff() > 0) ++real_b;
  CHECK(real_a == real_b);
  for (size_t a = 0; a < sc.aggregators.size(); ++a) {
    if (sc.aggregators[a].loads.empty()) continue;
    int idx = -1;
    for (size_t b = 0; b < back.aggregators.size(); ++b)
      if (back.aggregators[b].bus == sc.aggregators[a].bus)
        idx = static_cast<int>(b);
    REQUIRE(idx >= 0);
    CHECK((back.aggregators[idx].baseload - sc.aggregators[a].baseload)
              .cwiseAbs()
              .maxCoeff() == 0.0);
    REQUIRE(back.aggregators[idx].loads.size() ==
            sc.aggregators[a].loads.size());
    for (size_t l = 0; l < sc.aggregators[a].loads.size(); ++l) {
      const auto& lo = sc.aggregators[a].loads[l];
      const auto& lb = back.aggregators[idx].loads[l];
      CHECK(lb.type == lo.type);
      CHECK(lb.horizon == lo.horizon);
      CHECK((lb.desired - lo.desired).cwiseAbs().maxCoeff() == 0.0);
      CHECK((lb.x_min - lo.x_min).cwiseAbs().maxCoeff() == 0.0);
      CHECK((lb.x_max - lo.x_max).cwiseAbs().maxCoeff() == 0.0);
      CHECK(lb.omega == lo.omega);
      CHECK(lb.total_min == lo.total_min);
      CHECK(lb.total_max == lo.total_max);
    }
  }
}

TEST_CASE("baseline transform pins loads and strips renewables") {
  SyntheticSpec spec;
  spec.seed = 5;
  spec.loads_per_bus_min = 20;
  spec.loads_per_bus_max = 30;
  spec.blocks_per_bus = 2;
  const Scenario sc = generate_synthetic(spec, builtin_base_case("sixbus"));
  const Scenario base = make_baseline(sc);
  for (const auto& a : base.aggregators)
    for (const auto& ld : a.loads)
      for (int h : ld.horizon) {
        CHECK(ld.x_min[h] == ld.desired[h]);
        CHECK(ld.x_max[h] == ld.desired[h]);
      }
  for (const auto& g : base.generators) CHECK(!g.has_renewable);
  CHECK(validate_scenario(base).empty());
}

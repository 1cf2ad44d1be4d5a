#include "daymarket/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "daymarket/trace_io.hpp"

namespace daymarket {

namespace {

namespace fs = std::filesystem;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Token {
  std::string text;
  int line = 0;
};

std::vector<Token> tokenize(std::istream& in) {
  std::vector<Token> toks;
  std::string line;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string t;
    while (ls >> t) toks.push_back({t, ln});
  }
  return toks;
}

struct Parser {
  std::vector<Token> toks;
  size_t pos = 0;
  std::vector<std::string> errors;
  fs::path base_dir;

  bool done() const { return pos >= toks.size(); }
  const Token& peek() const { return toks[pos]; }
  Token take() { return toks[pos++]; }

  void fail(const std::string& msg, int line) {
    errors.push_back("line " + std::to_string(line) + ": " + msg);
  }

  bool expect(const std::string& want) {
    if (done()) {
      errors.push_back("unexpected end of file, expected '" + want + "'");
      return false;
    }
    Token t = take();
    if (t.text != want) {
      fail("expected '" + want + "', got '" + t.text + "'", t.line);
      return false;
    }
    return true;
  }

  double number(const std::string& what) {
    if (done()) {
      errors.push_back("unexpected end of file reading " + what);
      return 0.0;
    }
    Token t = take();
    try {
      size_t used = 0;
      const double v = std::stod(t.text, &used);
      if (used != t.text.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      fail("bad number '" + t.text + "' for " + what, t.line);
      return 0.0;
    }
  }

  int integer(const std::string& what) {
    return static_cast<int>(std::llround(number(what)));
  }

  VectorXd vector(int n, const std::string& what) {
    VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = number(what);
    return v;
  }

  void skip_block() {  // consume a balanced { ... }
    int depth = 0;
    while (!done()) {
      Token t = take();
      if (t.text == "{") ++depth;
      if (t.text == "}" && --depth <= 0) return;
    }
  }
};

VectorXd default_omega_vec(int hours) { return VectorXd::Zero(hours); }

ControllableLoad parse_load(Parser& ps, int hours) {
  ControllableLoad ld;
  ld.x_min = VectorXd::Zero(hours);
  ld.x_max = VectorXd::Zero(hours);
  ld.desired = VectorXd::Zero(hours);
  ld.omega_h = default_omega_vec(hours);
  ld.omega_out = default_omega_vec(hours);
  ps.expect("{");
  while (!ps.done() && ps.peek().text != "}") {
    Token key = ps.take();
    if (key.text == "id") {
      ld.id = ps.take().text;
    } else if (key.text == "type") {
      const int t = ps.integer("load type");
      if (t != 1 && t != 2) ps.fail("load type must be 1 or 2", key.line);
      ld.type = t == 2 ? LoadType::type2 : LoadType::type1;
    } else if (key.text == "hours") {
      const int a = ps.integer("horizon start");
      const int b = ps.integer("horizon end");
      if (a < 1 || b > hours || a > b)
        ps.fail("horizon range out of bounds", key.line);
      else
        for (int h = a; h <= b; ++h) ld.horizon.push_back(h - 1);
    } else if (key.text == "omega") {
      ld.omega = ps.number("omega");
    } else if (key.text == "omega_h") {
      ld.omega_h = ps.vector(hours, "omega_h");
    } else if (key.text == "omega_out") {
      ld.omega_out = ps.vector(hours, "omega_out");
    } else if (key.text == "desired") {
      ld.desired = ps.vector(hours, "desired profile");
    } else if (key.text == "xmin") {
      ld.x_min = ps.vector(hours, "xmin profile");
    } else if (key.text == "xmax") {
      ld.x_max = ps.vector(hours, "xmax profile");
    } else if (key.text == "total_min") {
      ld.total_min = ps.number("total_min");
    } else if (key.text == "total_max") {
      ld.total_max = ps.number("total_max");
    } else {
      ps.fail("unknown load field '" + key.text + "'", key.line);
    }
  }
  ps.expect("}");
  return ld;
}

}  // namespace

Eigen::MatrixXd read_samples_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ScenarioError("cannot open sample file " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  int ln = 0;
  while (std::getline(f, line)) {
    ++ln;
    if (line.empty()) continue;
    std::vector<double> row;
    std::string cell;
    std::istringstream ls(line);
    bool numeric = true;
    while (std::getline(ls, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (...) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      if (ln == 1) continue;  // header row
      throw ScenarioError(path.string() + ": bad numeric row at line " +
                          std::to_string(ln));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ScenarioError(path.string() + ": no sample rows");
  const size_t w = rows[0].size();
  for (const auto& r : rows)
    if (r.size() != w)
      throw ScenarioError(path.string() + ": ragged sample rows");
  MatrixXd m(rows.size(), w);
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < w; ++j) m(i, j) = rows[i][j];
  return m;
}

void write_samples_csv(const Eigen::MatrixXd& samples, const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw ScenarioError("cannot write " + path.string());
  for (int k = 0; k < samples.rows(); ++k) {
    for (int h = 0; h < samples.cols(); ++h) {
      if (h) f << ',';
      f << format_double(samples(k, h));
    }
    f << '\n';
  }
}

Scenario load_scenario(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ScenarioError("cannot open scenario " + path.string());
  Parser ps;
  ps.toks = tokenize(f);
  ps.base_dir = path.parent_path();

  Scenario sc;
  sc.name = path.stem().string();
  sc.iso.theta_max = 0.0;
  int declared_buses = 0;

  if (!ps.done() && ps.peek().text == "scenario") {
    ps.take();
    ps.take();  // version tag
  }
  while (!ps.done()) {
    Token key = ps.take();
    if (key.text == "name") {
      sc.name = ps.take().text;
    } else if (key.text == "horizon") {
      sc.horizon = ps.integer("horizon");
    } else if (key.text == "base_mva") {
      sc.grid.base_mva = ps.number("base_mva");
    } else if (key.text == "grid") {
      ps.expect("{");
      while (!ps.done() && ps.peek().text != "}") {
        Token k2 = ps.take();
        if (k2.text == "slack") {
          sc.grid.slack_bus = ps.integer("slack bus");
        } else if (k2.text == "buses") {
          declared_buses = ps.integer("bus count");
        } else if (k2.text == "line") {
          Line l;
          l.from_bus = ps.integer("line from");
          l.to_bus = ps.integer("line to");
          l.susceptance_b = ps.number("susceptance");
          l.flow_limit = ps.number("flow limit");
          sc.grid.lines.push_back(l);
        } else {
          ps.fail("unknown grid field '" + k2.text + "'", k2.line);
        }
      }
      ps.expect("}");
    } else if (key.text == "aggregator") {
      AggregatorConfig a;
      a.baseload = VectorXd::Zero(sc.horizon);
      ps.expect("{");
      while (!ps.done() && ps.peek().text != "}") {
        Token k2 = ps.take();
        if (k2.text == "bus")
          a.bus = ps.integer("aggregator bus");
        else if (k2.text == "baseload")
          a.baseload = ps.vector(sc.horizon, "baseload");
        else if (k2.text == "load")
          a.loads.push_back(parse_load(ps, sc.horizon));
        else
          ps.fail("unknown aggregator field '" + k2.text + "'", k2.line);
      }
      ps.expect("}");
      sc.aggregators.push_back(std::move(a));
    } else if (key.text == "generator") {
      GeneratorConfig g;
      ps.expect("{");
      while (!ps.done() && ps.peek().text != "}") {
        Token k2 = ps.take();
        if (k2.text == "bus") {
          g.bus = ps.integer("generator bus");
        } else if (k2.text == "cost") {
          g.a2 = ps.number("a2");
          g.a1 = ps.number("a1");
          g.a0 = ps.number("a0");
        } else if (k2.text == "pmin") {
          g.p_min = ps.number("pmin");
        } else if (k2.text == "pmax") {
          g.p_max = ps.number("pmax");
        } else if (k2.text == "renewable") {
          g.has_renewable = true;
          ps.expect("{");
          bool cap_auto = true;
          while (!ps.done() && ps.peek().text != "}") {
            Token k3 = ps.take();
            if (k3.text == "samples") {
              const std::string file = ps.take().text;
              try {
                g.samples = read_samples_csv(ps.base_dir / file);
              } catch (const ScenarioError& e) {
                ps.fail(e.what(), k3.line);
              }
            } else if (k3.text == "beta") {
              g.beta = ps.number("beta");
            } else if (k3.text == "beta_iso") {
              g.beta_iso = ps.number("beta_iso");
            } else if (k3.text == "cap") {
              if (!ps.done() && ps.peek().text == "auto") {
                ps.take();
                cap_auto = true;
              } else {
                g.offer_cap = ps.vector(sc.horizon, "offer cap");
                cap_auto = false;
              }
            } else {
              ps.fail("unknown renewable field '" + k3.text + "'", k3.line);
            }
          }
          ps.expect("}");
          if (cap_auto && g.samples.rows() > 0 &&
              g.samples.cols() == sc.horizon)
            g.offer_cap = g.samples.colwise().maxCoeff();
        } else {
          ps.fail("unknown generator field '" + k2.text + "'", k2.line);
        }
      }
      ps.expect("}");
      sc.generators.push_back(std::move(g));
    } else if (key.text == "iso") {
      ps.expect("{");
      while (!ps.done() && ps.peek().text != "}") {
        Token k2 = ps.take();
        if (k2.text == "vartheta")
          sc.iso.vartheta_c = ps.number("vartheta");
        else if (k2.text == "theta_max")
          sc.iso.theta_max = ps.number("theta_max");
        else
          ps.fail("unknown iso field '" + k2.text + "'", k2.line);
      }
      ps.expect("}");
    } else if (key.text == "sim") {
      ps.expect("{");
      while (!ps.done() && ps.peek().text != "}") {
        Token k2 = ps.take();
        if (k2.text == "step") {
          sc.sim.schedule.a = ps.number("step a");
          sc.sim.schedule.b = ps.number("step b");
        } else if (k2.text == "xi") {
          sc.sim.xi = ps.number("xi");
        } else if (k2.text == "max_iter") {
          sc.sim.max_iter = ps.integer("max_iter");
        } else if (k2.text == "seed") {
          sc.sim.seed = static_cast<unsigned>(ps.integer("seed"));
        } else {
          ps.fail("unknown sim field '" + k2.text + "'", k2.line);
        }
      }
      ps.expect("}");
    } else {
      ps.fail("unknown top-level section '" + key.text + "'", key.line);
      if (!ps.done() && ps.peek().text == "{") ps.skip_block();
    }
  }

  // Build buses.
  if (declared_buses <= 0) {
    for (const Line& l : sc.grid.lines)
      declared_buses = std::max({declared_buses, l.from_bus, l.to_bus});
    for (const auto& a : sc.aggregators)
      declared_buses = std::max(declared_buses, a.bus);
    for (const auto& g : sc.generators)
      declared_buses = std::max(declared_buses, g.bus);
  }
  sc.grid.buses.resize(declared_buses);
  for (int b = 0; b < declared_buses; ++b) {
    sc.grid.buses[b].id = b + 1;
    sc.grid.buses[b].kind = BusKind::empty;
  }
  for (size_t a = 0; a < sc.aggregators.size(); ++a) {
    const int b = sc.aggregators[a].bus;
    if (b < 1 || b > declared_buses) {
      ps.errors.push_back("aggregator references missing bus " +
                          std::to_string(b));
      continue;
    }
    sc.grid.buses[b - 1].aggregator_index = static_cast<int>(a);
    sc.grid.buses[b - 1].kind = BusKind::aggregator;
  }
  for (size_t j = 0; j < sc.generators.size(); ++j) {
    const int b = sc.generators[j].bus;
    if (b < 1 || b > declared_buses) {
      ps.errors.push_back("generator references missing bus " +
                          std::to_string(b));
      continue;
    }
    sc.grid.buses[b - 1].generator_index = static_cast<int>(j);
    sc.grid.buses[b - 1].kind = sc.grid.buses[b - 1].aggregator_index >= 0
                                    ? BusKind::both
                                    : BusKind::generator;
  }

  // Merge parallel lines: susceptances and limits add.
  {
    std::map<std::pair<int, int>, Line> merged;
    for (const Line& l : sc.grid.lines) {
      auto key = std::minmax(l.from_bus, l.to_bus);
      auto it = merged.find({key.first, key.second});
      if (it == merged.end()) {
        merged[{key.first, key.second}] = l;
      } else {
        it->second.susceptance_b += l.susceptance_b;
        it->second.flow_limit += l.flow_limit;
      }
    }
    sc.grid.lines.clear();
    for (const auto& [k, l] : merged) sc.grid.lines.push_back(l);
  }

  if (sc.iso.theta_max <= 0)
    sc.iso.theta_max = default_theta_max(sc.generators);
  materialize_virtual_aggregators(sc.grid, sc.aggregators, sc.horizon);
  sc.iso.beta_iso.resize(sc.generators.size());
  for (size_t j = 0; j < sc.generators.size(); ++j)
    sc.iso.beta_iso[j] = sc.generators[j].beta_iso;

  auto errs = validate_scenario(sc);
  for (const auto& e : ps.errors) errs.insert(errs.begin(), e);
  if (!errs.empty()) {
    std::string msg = path.string() + ": invalid scenario:";
    for (const auto& e : errs) msg += "\n  " + e;
    throw ScenarioError(msg);
  }
  return sc;
}

std::vector<std::string> validate_scenario(const Scenario& sc) {
  std::vector<std::string> errs;
  if (sc.horizon < 1) errs.push_back("horizon must be >= 1");
  for (const auto& v : validate_case(sc.grid))
    errs.push_back(v.rule + ": " + v.detail);
  for (const auto& a : sc.aggregators) {
    if (a.bus < 1 || a.bus > sc.grid.num_buses()) {
      errs.push_back("aggregator references missing bus " +
                     std::to_string(a.bus));
      continue;
    }
    const std::string err = validate_aggregator(a, sc.horizon);
    if (!err.empty())
      errs.push_back("aggregator at bus " + std::to_string(a.bus) + ": " +
                     err);
  }
  for (const auto& g : sc.generators) {
    if (g.bus < 1 || g.bus > sc.grid.num_buses()) {
      errs.push_back("generator references missing bus " +
                     std::to_string(g.bus));
      continue;
    }
    const std::string err = validate_generator(g, sc.horizon);
    if (!err.empty())
      errs.push_back("generator at bus " + std::to_string(g.bus) + ": " + err);
  }
  if (!(sc.iso.vartheta_c > 0)) errs.push_back("vartheta_c must be positive");
  if (!(sc.sim.xi > 0)) errs.push_back("xi must be positive");
  if (sc.sim.max_iter < 1) errs.push_back("max_iter must be >= 1");
  if (!(sc.sim.schedule.a > 0) || !(sc.sim.schedule.b > 0))
    errs.push_back("step schedule coefficients must be positive");
  return errs;
}

std::vector<std::string> scenario_warnings(const Scenario& sc);
std::vector<std::string> scenario_warnings(const Scenario& sc) {
  std::vector<std::string> w;
  for (const auto& a : sc.aggregators)
    for (const auto& ld : a.loads)
      if (ld.type == LoadType::type2) {
        double max_in = 0.0, min_out = std::numeric_limits<double>::infinity();
        for (int h = 0; h < sc.horizon; ++h) {
          if (ld.in_horizon(h))
            max_in = std::max(max_in, ld.omega_h[h]);
          else
            min_out = std::min(min_out, ld.omega_out[h]);
        }
        if (min_out < max_in)
          w.push_back("load '" + ld.id + "' at bus " + std::to_string(a.bus) +
                      ": out-of-horizon coefficient below in-horizon maximum");
      }
  return w;
}

void save_scenario(const Scenario& sc, const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw ScenarioError("cannot write " + path.string());
  const auto vec = [&](const VectorXd& v) {
    std::string s;
    for (int i = 0; i < v.size(); ++i) {
      s += ' ';
      s += format_double(v[i]);
    }
    return s;
  };
  f << "scenario v1\n";
  f << "name " << sc.name << "\n";
  f << "horizon " << sc.horizon << "\n";
  f << "base_mva " << format_double(sc.grid.base_mva) << "\n\n";
  f << "grid {\n  slack " << sc.grid.slack_bus << "\n  buses "
    << sc.grid.num_buses() << "\n";
  for (const Line& l : sc.grid.lines)
    f << "  line " << l.from_bus << ' ' << l.to_bus << ' '
      << format_double(l.susceptance_b) << ' ' << format_double(l.flow_limit)
      << "\n";
  f << "}\n\n";
  for (const auto& a : sc.aggregators) {
    if (a.loads.empty() && a.baseload.maxCoeff() <= 0) continue;  // virtual
    f << "aggregator {\n  bus " << a.bus << "\n  baseload" << vec(a.baseload)
      << "\n";
    for (const auto& ld : a.loads) {
      f << "  load {\n    id " << ld.id << "\n    type "
        << (ld.type == LoadType::type1 ? 1 : 2) << "\n    hours "
        << ld.horizon.front() + 1 << ' ' << ld.horizon.back() + 1 << "\n";
      if (ld.type == LoadType::type1)
        f << "    omega " << format_double(ld.omega) << "\n";
      else
        f << "    omega_h" << vec(ld.omega_h) << "\n    omega_out"
          << vec(ld.omega_out) << "\n";
      f << "    desired" << vec(ld.desired) << "\n";
      f << "    xmin" << vec(ld.x_min) << "\n    xmax" << vec(ld.x_max)
        << "\n";
      f << "    total_min " << format_double(ld.total_min) << "\n";
      f << "    total_max " << format_double(ld.total_max) << "\n  }\n";
    }
    f << "}\n\n";
  }
  for (const auto& g : sc.generators) {
    f << "generator {\n  bus " << g.bus << "\n  cost " << format_double(g.a2)
      << ' ' << format_double(g.a1) << ' ' << format_double(g.a0) << "\n";
    f << "  pmin " << format_double(g.p_min) << "\n  pmax "
      << format_double(g.p_max) << "\n";
    if (g.has_renewable) {
      const std::string csv =
          sc.name + "_ren_bus" + std::to_string(g.bus) + ".csv";
      write_samples_csv(g.samples, path.parent_path() / csv);
      f << "  renewable {\n    samples " << csv << "\n    beta "
        << format_double(g.beta) << "\n    beta_iso "
        << format_double(g.beta_iso) << "\n    cap" << vec(g.offer_cap)
        << "\n  }\n";
    }
    f << "}\n\n";
  }
  f << "iso {\n  vartheta " << format_double(sc.iso.vartheta_c)
    << "\n  theta_max " << format_double(sc.iso.theta_max) << "\n}\n\n";
  f << "sim {\n  step " << format_double(sc.sim.schedule.a) << ' '
    << format_double(sc.sim.schedule.b) << "\n  xi "
    << format_double(sc.sim.xi) << "\n  max_iter " << sc.sim.max_iter
    << "\n  seed " << sc.sim.seed << "\n}\n";
}

Scenario make_baseline(const Scenario& sc) {
  Scenario b = sc;
  b.name = sc.name + "_baseline";
  for (auto& a : b.aggregators)
    for (auto& ld : a.loads) {
      for (int h = 0; h < b.horizon; ++h) {
        if (ld.in_horizon(h)) {
          ld.x_min[h] = ld.desired[h];
          ld.x_max[h] = ld.desired[h];
        } else {
          ld.x_max[h] = 0.0;
        }
      }
      const double tot = ld.desired.sum();
      ld.total_min = tot - 1.0;
      ld.total_max = tot + 1.0;
    }
  for (auto& g : b.generators) {
    g.has_renewable = false;
    g.samples.resize(0, b.horizon);
    g.offer_cap.resize(0);
  }
  b.iso.beta_iso.resize(b.generators.size());
  for (size_t j = 0; j < b.generators.size(); ++j)
    b.iso.beta_iso[j] = b.generators[j].beta_iso;
  return b;
}

// ---------------------------------------------------------------------------
// Truncated normal via inverse CDF (Acklam's rational approximation).

namespace {

double inv_phi(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double q, r;
  if (p < plow) {
    q = std::sqrt(-2 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q +
            c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  if (p <= 1 - plow) {
    q = p - 0.5;
    r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r +
            a[5]) *
           q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  }
  q = std::sqrt(-2 * std::log(1 - p));
  return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q +
           c[5]) /
         ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
}

double phi_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

double truncated_normal(double mean, double sd, double u01) {
  if (sd <= 0) return std::max(mean, 0.0);
  const double lo = phi_cdf(-mean / sd);
  const double p =
      std::clamp(lo + u01 * (1.0 - lo), 1e-12, 1.0 - 1e-12);
  return std::max(0.0, mean + sd * inv_phi(p));
}

// ---------------------------------------------------------------------------
// Built-in base cases. Bus annotations carry entity placement; the
// aggregator/generator indices are filled by the synthetic generator.

GridCase builtin_base_case(const std::string& name) {
  GridCase g;
  const auto bus = [&](int id, BusKind kind) {
    Bus b;
    b.id = id;
    b.kind = kind;
    g.buses.push_back(b);
  };
  const auto line = [&](int f, int t, double b, double cap) {
    g.lines.push_back({f, t, b, cap});
  };
  // Susceptances are normalized by endpoint degrees so the angle-update
  // spectrum stays inside the stable region of the coordinator iteration.
  const auto degree_normalized_lines =
      [&g](const std::vector<std::pair<int, int>>& topo, double scale,
           double cap) {
        std::vector<int> deg(g.buses.size() + 1, 0);
        for (const auto& [f, t] : topo) {
          ++deg[f];
          ++deg[t];
        }
        int i = 0;
        for (const auto& [f, t] : topo) {
          const double jitter = 0.9 + 0.02 * ((i * 7) % 11);
          g.lines.push_back(
              {f, t, scale * jitter / std::sqrt(double(deg[f] * deg[t])),
               cap});
          ++i;
        }
      };
  if (name == "twobus") {
    g.base_mva = 10.0;
    g.slack_bus = 1;
    bus(1, BusKind::generator);
    bus(2, BusKind::aggregator);
    degree_normalized_lines({{1, 2}}, 3.0, 25.0);
    return g;
  }
  if (name == "sixbus") {
    g.base_mva = 10.0;
    g.slack_bus = 1;
    bus(1, BusKind::generator);
    bus(2, BusKind::generator);
    bus(3, BusKind::both);
    bus(4, BusKind::aggregator);
    bus(5, BusKind::aggregator);
    bus(6, BusKind::aggregator);
    degree_normalized_lines(
        {{1, 2}, {1, 4}, {2, 3}, {2, 5}, {3, 6}, {4, 5}, {5, 6}}, 3.0, 40.0);
    return g;
  }
  if (name == "case30") {
    g.base_mva = 10.0;
    g.slack_bus = 1;
    // 30-bus test-system topology; generators at 1,2,5,8,11,13 with loads
    // co-located at 2,5,8; renewable units at 11 and 13.
    const std::vector<int> gens = {1, 2, 5, 8, 11, 13};
    const std::vector<int> loads = {2,  3,  4,  5,  7,  8,  10, 12, 14, 15, 16,
                                    17, 18, 19, 20, 21, 23, 24, 26, 29, 30};
    for (int id = 1; id <= 30; ++id) {
      const bool isg = std::count(gens.begin(), gens.end(), id) > 0;
      const bool isl = std::count(loads.begin(), loads.end(), id) > 0;
      bus(id, isg && isl ? BusKind::both
                         : (isg ? BusKind::generator
                                : (isl ? BusKind::aggregator : BusKind::empty)));
    }
    degree_normalized_lines(
        {{1, 2},   {1, 3},   {2, 4},   {3, 4},   {2, 5},   {2, 6},   {4, 6},
         {5, 7},   {6, 7},   {6, 8},   {6, 9},   {6, 10},  {9, 11},  {9, 10},
         {4, 12},  {12, 13}, {12, 14}, {12, 15}, {12, 16}, {14, 15}, {16, 17},
         {15, 18}, {18, 19}, {19, 20}, {10, 20}, {10, 17}, {10, 21}, {10, 22},
         {21, 22}, {15, 23}, {22, 24}, {23, 24}, {24, 25}, {25, 26}, {25, 27},
         {28, 27}, {27, 29}, {27, 30}, {29, 30}, {8, 28},  {6, 28}},
        3.0, 60.0);
    return g;
  }
  throw ScenarioError("unknown base case '" + name + "'");
}

// ---------------------------------------------------------------------------
// Synthetic scenario construction.

namespace {

double next_u(std::mt19937& rng) {
  return static_cast<double>(rng()) / 4294967296.0;
}

// Double-peaked daily demand shape, mean one.
VectorXd daily_shape(int hours, std::mt19937& rng) {
  VectorXd s(hours);
  const double jitter = 0.9 + 0.2 * next_u(rng);
  for (int h = 0; h < hours; ++h) {
    const double t = 24.0 * h / hours;
    s[h] = 0.75 + 0.45 * std::exp(-std::pow((t - 8.5) / 2.6, 2)) +
           0.75 * std::exp(-std::pow((t - 19.0) / 3.0, 2));
  }
  s *= jitter;
  return s * (hours / s.sum());
}

}  // namespace

Scenario generate_synthetic(const SyntheticSpec& spec,
                            const GridCase& base_case) {
  Scenario sc;
  sc.horizon = spec.horizon;
  sc.grid = base_case;
  sc.name = "synthetic";
  std::mt19937 rng(spec.seed);
  const int H = spec.horizon;

  for (Bus& b : sc.grid.buses) {
    b.aggregator_index = -1;
    b.generator_index = -1;
  }

  // Aggregators with blocks of identical conceptual loads.
  int load_serial = 0;
  for (Bus& b : sc.grid.buses) {
    if (b.kind != BusKind::aggregator && b.kind != BusKind::both) continue;
    AggregatorConfig agg;
    agg.bus = b.id;
    const int n_loads =
        spec.loads_per_bus_min +
        static_cast<int>(next_u(rng) * (spec.loads_per_bus_max -
                                        spec.loads_per_bus_min + 1));
    const int blocks = std::max(1, spec.blocks_per_bus);
    VectorXd desired_total = VectorXd::Zero(H);
    for (int blk = 0; blk < blocks; ++blk) {
      int mult = n_loads / blocks;
      if (blk == blocks - 1) mult += n_loads % blocks;
      ControllableLoad ld;
      ld.id = "b" + std::to_string(b.id) + "_" + std::to_string(load_serial++);
      ld.type = next_u(rng) < spec.type1_share ? LoadType::type1
                                               : LoadType::type2;
      const int len =
          spec.horizon_len_min +
          static_cast<int>(next_u(rng) *
                           (spec.horizon_len_max - spec.horizon_len_min + 1));
      const int start = static_cast<int>(next_u(rng) * (H - len));
      for (int h = start; h < start + len && h < H; ++h)
        ld.horizon.push_back(h);
      const double avg_kw =
          spec.demand_min_kw +
          next_u(rng) * (spec.demand_max_kw - spec.demand_min_kw);
      ld.desired = VectorXd::Zero(H);
      ld.x_min = VectorXd::Zero(H);
      ld.x_max = VectorXd::Zero(H);
      double in_mean = 0.0;
      for (int h : ld.horizon) {
        ld.desired[h] = mult * avg_kw * (0.6 + 0.8 * next_u(rng));
        in_mean += ld.desired[h];
      }
      in_mean /= static_cast<double>(ld.horizon.size());
      for (int h = 0; h < H; ++h) {
        if (ld.in_horizon(h)) {
          ld.x_min[h] = (1.0 - spec.hour_bound_frac) * ld.desired[h];
          ld.x_max[h] = (1.0 + spec.hour_bound_frac) * ld.desired[h];
        } else if (ld.type == LoadType::type2) {
          ld.x_max[h] = spec.hour_bound_frac * in_mean;
        }
      }
      const double tot = ld.desired.sum();
      ld.total_min = (1.0 - spec.total_bound_frac) * tot;
      ld.total_max = (1.0 + spec.total_bound_frac) * tot;
      const double omega_draw =
          truncated_normal(spec.omega_avg, spec.omega_sd, next_u(rng));
      if (ld.type == LoadType::type1) {
        ld.omega = omega_draw / mult;
        ld.omega_h = VectorXd::Zero(H);
        ld.omega_out = VectorXd::Zero(H);
      } else {
        ld.omega_h = VectorXd::Zero(H);
        ld.omega_out = VectorXd::Zero(H);
        for (int h = 0; h < H; ++h) {
          if (ld.in_horizon(h))
            ld.omega_h[h] =
                truncated_normal(spec.omega_avg, spec.omega_sd, next_u(rng)) /
                mult;
          else
            ld.omega_out[h] = spec.omega_out;
        }
      }
      desired_total += ld.desired;
      agg.loads.push_back(std::move(ld));
    }
    // Baseload shaped so its share of the bus demand matches the spec.
    const double ctrl_mean = desired_total.mean();
    const double base_mean = ctrl_mean * spec.baseload_fraction /
                             std::max(1e-9, 1.0 - spec.baseload_fraction);
    agg.baseload = base_mean * daily_shape(H, rng);
    b.aggregator_index = static_cast<int>(sc.aggregators.size());
    sc.aggregators.push_back(std::move(agg));
  }

  // System scale drives generator sizing and the per-unit base; a mean bus
  // demand near two per unit keeps the coordinator's dual climb fast.
  double system_peak_kw = 0.0;
  {
    VectorXd total = VectorXd::Zero(H);
    int real_buses = 0;
    for (const auto& a : sc.aggregators) {
      total += a.baseload;
      for (const auto& ld : a.loads) total += ld.desired;
      ++real_buses;
    }
    system_peak_kw = total.maxCoeff();
    const double mean_bus_kw =
        total.mean() / std::max(1, real_buses);
    sc.grid.base_mva = mean_bus_kw / 1.2 / 1000.0;
  }

  std::vector<int> gen_buses;
  for (const Bus& b : sc.grid.buses)
    if (b.kind == BusKind::generator || b.kind == BusKind::both)
      gen_buses.push_back(b.id);
  const int ng = static_cast<int>(gen_buses.size());
  int renewables_placed = 0;
  for (int j = 0; j < ng; ++j) {
    GeneratorConfig g;
    g.bus = gen_buses[j];
    const double share = (0.8 + 0.4 * next_u(rng)) / ng;
    g.p_max = 1.8 * system_peak_kw * share;
    g.p_min = 0.0;
    g.a1 = 2.0 + 3.0 * j / std::max(1, ng - 1) + 0.3 * next_u(rng);
    const double S = sc.grid.power_base_kw();
    // price response of 3..7 per-unit per cent keeps the coordinator's
    // explicit iteration well inside its stable region
    g.a2 = 1.0 / (2.0 * (5.0 + 4.0 * next_u(rng)) * S);
    g.a0 = 0.15 * g.a1 * g.p_max;  // no-load cost
    // Renewable units at the highest-numbered generator buses.
    if (renewables_placed < spec.renewable_count &&
        j >= ng - spec.renewable_count) {
      g.has_renewable = true;
      g.beta = spec.beta;
      g.beta_iso = spec.beta_iso;
      const int K = spec.renewable_samples;
      g.samples.resize(K, H);
      const bool pv = renewables_placed == 0;
      for (int k = 0; k < K; ++k) {
        const double scale = 0.55 + 0.9 * next_u(rng);
        double drift = 0.0;
        for (int h = 0; h < H; ++h) {
          const double t = 24.0 * h / H;
          double v;
          if (pv) {
            v = std::exp(-std::pow((t - 13.0) / 3.3, 2));
            v = v < 0.02 ? 0.0 : v;
          } else {
            drift = 0.7 * drift + 0.6 * (next_u(rng) - 0.5);
            v = std::clamp(0.55 + drift, 0.05, 1.1);
          }
          g.samples(k, h) = scale * v;
        }
      }
      const double mean = g.samples.mean();
      if (mean > 0) g.samples *= spec.renewable_mean_kw / mean;
      g.offer_cap = g.samples.colwise().maxCoeff();
      ++renewables_placed;
    }
    sc.grid.buses[g.bus - 1].generator_index =
        static_cast<int>(sc.generators.size());
    sc.generators.push_back(std::move(g));
  }

  sc.iso.vartheta_c = spec.vartheta_c;
  sc.iso.theta_max = default_theta_max(sc.generators);
  sc.iso.beta_iso.resize(sc.generators.size());
  for (size_t j = 0; j < sc.generators.size(); ++j)
    sc.iso.beta_iso[j] = sc.generators[j].beta_iso;
  sc.sim.schedule = {10.0, 0.2};
  sc.sim.xi = spec.sim_xi;
  sc.sim.max_iter = spec.sim_max_iter;
  sc.sim.seed = spec.seed;
  materialize_virtual_aggregators(sc.grid, sc.aggregators, H);
  return sc;
}

}  // namespace daymarket

#include "daymarket/trace_io.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "daymarket/scenario.hpp"

namespace daymarket {

namespace {

namespace fs = std::filesystem;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  return f;
}

void put_row(std::ofstream& f, const std::string& prefix,
             const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  f << prefix;
  for (int h = 0; h < row.size(); ++h) f << ',' << format_double(row[h]);
  f << '\n';
}

std::string hour_header(int hours) {
  std::string s;
  for (int h = 1; h <= hours; ++h) s += ",h" + std::to_string(h);
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s) {
  try {
    return std::stod(s);
  } catch (...) {
    throw std::runtime_error("bad numeric field '" + s + "'");
  }
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_trace(const fs::path& dir, const Scenario& sc,
                 const IterationTrace& trace) {
  fs::create_directories(dir);
  const int H = sc.horizon;
  const MarketIndex index =
      MarketIndex::build(sc.grid, sc.aggregators, sc.generators, H);

  {
    auto f = open_out(dir / "prices.csv");
    f << "iter,bus" << hour_header(H) << '\n';
    for (const auto& r : trace.records)
      for (int b = 0; b < sc.grid.num_buses(); ++b)
        put_row(f, std::to_string(r.iter) + "," + std::to_string(b + 1),
                r.signals.rho.row(b));
  }
  {
    auto f = open_out(dir / "angles.csv");
    f << "iter,bus" << hour_header(H) << '\n';
    for (const auto& r : trace.records)
      for (int b = 0; b < sc.grid.num_buses(); ++b)
        put_row(f, std::to_string(r.iter) + "," + std::to_string(b + 1),
                r.angles.delta.row(b));
  }
  {
    auto f = open_out(dir / "loads.csv");
    f << "iter,bus" << hour_header(H) << '\n';
    for (const auto& r : trace.records)
      for (size_t a = 0; a < sc.aggregators.size(); ++a)
        put_row(f,
                std::to_string(r.iter) + "," +
                    std::to_string(sc.aggregators[a].bus),
                r.reports.load_kw.row(a));
  }
  {
    auto f = open_out(dir / "generation.csv");
    f << "iter,bus,kind" << hour_header(H) << '\n';
    for (const auto& r : trace.records)
      for (size_t j = 0; j < sc.generators.size(); ++j) {
        const std::string bus = std::to_string(sc.generators[j].bus);
        put_row(f, std::to_string(r.iter) + "," + bus + ",conv",
                r.reports.p_conv_kw.row(j));
        put_row(f, std::to_string(r.iter) + "," + bus + ",ren",
                r.reports.p_ren_kw.row(j));
      }
  }
  {
    auto f = open_out(dir / "signals.csv");
    f << "iter,bus" << hour_header(H) << '\n';
    for (const auto& r : trace.records)
      for (size_t j = 0; j < sc.generators.size(); ++j)
        if (sc.generators[j].has_renewable)
          put_row(f,
                  std::to_string(r.iter) + "," +
                      std::to_string(sc.generators[j].bus),
                  r.signals.theta.row(j));
  }
  {
    auto f = open_out(dir / "convergence.csv");
    f << "iter,step_size,max_angle_change,lagrangian\n";
    for (const auto& r : trace.records)
      f << r.iter << ',' << format_double(r.step_size) << ','
        << format_double(r.max_angle_change) << ','
        << format_double(r.lagrangian) << '\n';
  }
  {
    auto f = open_out(dir / "run_meta.csv");
    f << "status,iterations,final_objective_cents,max_kkt_residual\n";
    f << (trace.status == RunStatus::converged ? "converged" : "max_iter")
      << ',' << trace.iterations() << ','
      << format_double(trace.final_objective_cents) << ','
      << format_double(trace.max_kkt_residual) << '\n';
  }

  const IterationRecord& fin = trace.final_record();
  {
    auto f = open_out(dir / "final_schedules.csv");
    f << "bus,load" << hour_header(H) << '\n';
    for (size_t a = 0; a < sc.aggregators.size(); ++a)
      for (size_t l = 0; l < sc.aggregators[a].loads.size(); ++l)
        put_row(f,
                std::to_string(sc.aggregators[a].bus) + "," +
                    sc.aggregators[a].loads[l].id,
                fin.reports.schedules[a].x.row(l));
  }
  {
    auto f = open_out(dir / "final_decisions.csv");
    f << "bus,kind" << hour_header(H) << '\n';
    for (size_t j = 0; j < sc.generators.size(); ++j) {
      const std::string bus = std::to_string(sc.generators[j].bus);
      put_row(f, bus + ",conv", fin.reports.p_conv_kw.row(j));
      put_row(f, bus + ",ren", fin.reports.p_ren_kw.row(j));
    }
  }
  {
    auto f = open_out(dir / "final_signals.csv");
    f << "kind,id" << hour_header(H) << '\n';
    for (int b = 0; b < sc.grid.num_buses(); ++b)
      put_row(f, "rho," + std::to_string(b + 1), fin.signals.rho.row(b));
    for (size_t j = 0; j < sc.generators.size(); ++j)
      if (sc.generators[j].has_renewable)
        put_row(f, "theta," + std::to_string(sc.generators[j].bus),
                fin.signals.theta.row(j));
  }
  {
    auto f = open_out(dir / "summary.txt");
    f << "scenario: " << sc.name << '\n';
    f << "status: "
      << (trace.status == RunStatus::converged ? "converged" : "max_iter")
      << '\n';
    f << "iterations: " << trace.iterations() << '\n';
    f << "final_objective_cents: " << format_double(trace.final_objective_cents)
      << '\n';
    f << "max_kkt_residual: " << format_double(trace.max_kkt_residual) << '\n';
  }
  (void)index;
}

void write_metrics(const fs::path& path, const MarketMetrics& m) {
  auto f = open_out(path);
  f << "mean_par: " << format_double(m.mean_par) << '\n';
  f << "total_aggregator_cost_cents: "
    << format_double(m.total_aggregator_cost) << '\n';
  f << "provisional: " << (m.provisional ? "yes" : "no") << '\n';
  f << "par_per_generator:";
  for (double v : m.par_per_generator) f << ' ' << format_double(v);
  f << '\n';
  f << "load_shift_pct:";
  for (double v : m.load_shift_pct) f << ' ' << format_double(v);
  f << '\n';
  f << "aggregator_costs:";
  for (double v : m.aggregator_costs) f << ' ' << format_double(v);
  f << '\n';
  f << "generator_profits:";
  for (double v : m.generator_profits) f << ' ' << format_double(v);
  f << '\n';
  if (m.has_baseline) {
    f << "mean_par_baseline: " << format_double(m.mean_par_baseline) << '\n';
    f << "total_aggregator_cost_baseline_cents: "
      << format_double(m.total_aggregator_cost_baseline) << '\n';
    f << "par_reduction_pct: " << format_double(m.par_reduction_pct) << '\n';
    f << "peak_reduction_pct: " << format_double(m.peak_reduction_pct) << '\n';
  }
}

IterationTrace read_final_state(const fs::path& dir, const Scenario& sc) {
  const int H = sc.horizon;
  IterationTrace trace;
  IterationRecord rec;
  rec.signals.rho = MatrixXd::Zero(sc.grid.num_buses(), H);
  rec.signals.theta = MatrixXd::Zero(sc.generators.size(), H);
  rec.reports.schedules.resize(sc.aggregators.size());
  for (size_t a = 0; a < sc.aggregators.size(); ++a)
    rec.reports.schedules[a].x =
        MatrixXd::Zero(sc.aggregators[a].loads.size(), H);
  rec.reports.decisions.resize(sc.generators.size());
  rec.reports.p_conv_kw = MatrixXd::Zero(sc.generators.size(), H);
  rec.reports.p_ren_kw = MatrixXd::Zero(sc.generators.size(), H);

  const auto read_lines = [](const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw std::runtime_error("cannot read " + p.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line))
      if (!line.empty()) lines.push_back(line);
    return lines;
  };

  std::map<int, size_t> agg_of_bus, gen_of_bus;
  for (size_t a = 0; a < sc.aggregators.size(); ++a)
    agg_of_bus[sc.aggregators[a].bus] = a;
  for (size_t j = 0; j < sc.generators.size(); ++j)
    gen_of_bus[sc.generators[j].bus] = j;

  for (const auto& line : read_lines(dir / "final_schedules.csv")) {
    const auto cols = split_csv(line);
    if (cols[0] == "bus") continue;
    const int bus = std::stoi(cols[0]);
    const auto it = agg_of_bus.find(bus);
    if (it == agg_of_bus.end())
      throw std::runtime_error("final_schedules.csv: unknown bus " + cols[0]);
    const auto& loads = sc.aggregators[it->second].loads;
    int li = -1;
    for (size_t l = 0; l < loads.size(); ++l)
      if (loads[l].id == cols[1]) li = static_cast<int>(l);
    if (li < 0)
      throw std::runtime_error("final_schedules.csv: unknown load " + cols[1]);
    for (int h = 0; h < H; ++h)
      rec.reports.schedules[it->second].x(li, h) = parse_double(cols[2 + h]);
  }
  for (const auto& line : read_lines(dir / "final_decisions.csv")) {
    const auto cols = split_csv(line);
    if (cols[0] == "bus") continue;
    const size_t j = gen_of_bus.at(std::stoi(cols[0]));
    for (int h = 0; h < H; ++h) {
      const double v = parse_double(cols[2 + h]);
      if (cols[1] == "conv")
        rec.reports.p_conv_kw(j, h) = v;
      else
        rec.reports.p_ren_kw(j, h) = v;
    }
  }
  for (const auto& line : read_lines(dir / "final_signals.csv")) {
    const auto cols = split_csv(line);
    if (cols[0] == "kind") continue;
    if (cols[0] == "rho") {
      const int b = std::stoi(cols[1]) - 1;
      for (int h = 0; h < H; ++h)
        rec.signals.rho(b, h) = parse_double(cols[2 + h]);
    } else {
      const size_t j = gen_of_bus.at(std::stoi(cols[1]));
      for (int h = 0; h < H; ++h)
        rec.signals.theta(j, h) = parse_double(cols[2 + h]);
    }
  }
  for (size_t a = 0; a < sc.aggregators.size(); ++a) {
    VectorXd l = sc.aggregators[a].baseload;
    if (rec.reports.schedules[a].x.rows())
      l += rec.reports.schedules[a].controllable();
    rec.reports.load_kw.resize(sc.aggregators.size(), H);
    rec.reports.load_kw.row(a) = l.transpose();
  }
  for (size_t j = 0; j < sc.generators.size(); ++j) {
    rec.reports.decisions[j].p_conv = rec.reports.p_conv_kw.row(j);
    rec.reports.decisions[j].p_ren = rec.reports.p_ren_kw.row(j);
    const GeneratorConfig& g = sc.generators[j];
    const int K = g.has_renewable ? g.num_samples() : 0;
    rec.reports.decisions[j].alpha = VectorXd::Zero(g.has_renewable ? H : 0);
    rec.reports.decisions[j].eta = MatrixXd::Zero(K, H);
    if (g.has_renewable) {
      const VectorXd theta = rec.signals.theta.row(j);
      for (int h = 0; h < H; ++h) {
        std::vector<double> col(K);
        for (int k = 0; k < K; ++k) col[k] = g.samples(k, h);
        rec.reports.decisions[j].alpha[h] =
            cvar_saa(rec.reports.decisions[j].p_ren[h], theta[h], col, g.beta)
                .alpha_star;
        for (int k = 0; k < K; ++k)
          rec.reports.decisions[j].eta(k, h) = std::max(
              0.0, theta[h] * (rec.reports.decisions[j].p_ren[h] -
                               g.samples(k, h)) -
                       rec.reports.decisions[j].alpha[h]);
      }
    }
  }

  // Run meta.
  for (const auto& line : read_lines(dir / "run_meta.csv")) {
    const auto cols = split_csv(line);
    if (cols[0] == "status") continue;
    trace.status = cols[0] == "converged" ? RunStatus::converged
                                          : RunStatus::max_iter_reached;
    rec.iter = std::stoi(cols[1]);
    trace.final_objective_cents = parse_double(cols[2]);
    trace.max_kkt_residual = parse_double(cols[3]);
  }
  trace.records.push_back(std::move(rec));
  return trace;
}

}  // namespace daymarket

#include "daymarket/grid.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>

namespace daymarket {

Eigen::SparseMatrix<double> GridCase::laplacian() const {
  const int n = num_buses();
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(4 * lines.size());
  for (const Line& l : lines) {
    const int i = l.from_bus - 1;
    const int j = l.to_bus - 1;
    trips.emplace_back(i, i, l.susceptance_b);
    trips.emplace_back(j, j, l.susceptance_b);
    trips.emplace_back(i, j, -l.susceptance_b);
    trips.emplace_back(j, i, -l.susceptance_b);
  }
  Eigen::SparseMatrix<double> lap(n, n);
  lap.setFromTriplets(trips.begin(), trips.end());
  return lap;
}

double line_flow(const GridCase& grid, const AngleProfile& angles,
                 const Line& line, int hour) {
  if (hour < 0 || hour >= angles.hours())
    throw std::domain_error("line_flow: hour out of range");
  const bool known = std::any_of(
      grid.lines.begin(), grid.lines.end(), [&](const Line& l) {
        return (l.from_bus == line.from_bus && l.to_bus == line.to_bus) ||
               (l.from_bus == line.to_bus && l.to_bus == line.from_bus);
      });
  if (!known) throw std::domain_error("line_flow: unknown line");
  return line.susceptance_b *
         (angles.delta(line.from_bus - 1, hour) -
          angles.delta(line.to_bus - 1, hour));
}

Eigen::MatrixXd nodal_imbalance(const GridCase& grid,
                                const AngleProfile& angles,
                                const Eigen::MatrixXd& injections) {
  if (injections.rows() != grid.num_buses() ||
      angles.delta.rows() != grid.num_buses() ||
      injections.cols() != angles.delta.cols())
    throw std::domain_error("nodal_imbalance: dimension mismatch");
  return injections - Eigen::MatrixXd(grid.laplacian() * angles.delta);
}

std::vector<CaseViolation> validate_case(const GridCase& grid) {
  std::vector<CaseViolation> out;
  const int n = grid.num_buses();
  std::set<int> ids;
  for (const Bus& b : grid.buses) ids.insert(b.id);
  if (static_cast<int>(ids.size()) != n)
    out.push_back({"bus-ids", "duplicate bus ids"});
  for (int want = 1; want <= n; ++want)
    if (!ids.count(want)) {
      out.push_back({"bus-ids", "bus ids not contiguous from 1 (missing " +
                                    std::to_string(want) + ")"});
      break;
    }
  if (grid.slack_bus < 1 || grid.slack_bus > n)
    out.push_back({"slack", "slack bus " + std::to_string(grid.slack_bus) +
                                " does not exist"});
  if (grid.base_mva <= 0) out.push_back({"base", "base_mva must be positive"});

  std::map<std::pair<int, int>, int> seen;
  for (size_t k = 0; k < grid.lines.size(); ++k) {
    const Line& l = grid.lines[k];
    const std::string tag =
        "line " + std::to_string(l.from_bus) + "-" + std::to_string(l.to_bus);
    if (l.from_bus == l.to_bus)
      out.push_back({"line-endpoints", tag + ": self loop"});
    if (l.from_bus < 1 || l.from_bus > n || l.to_bus < 1 || l.to_bus > n)
      out.push_back({"line-endpoints", tag + ": endpoint bus missing"});
    if (l.susceptance_b <= 0)
      out.push_back({"susceptance", tag + ": susceptance must be > 0"});
    if (l.flow_limit <= 0)
      out.push_back({"flow-limit", tag + ": flow limit must be > 0"});
    auto key = std::minmax(l.from_bus, l.to_bus);
    if (seen.count({key.first, key.second}))
      out.push_back({"parallel-lines", tag + ": duplicate unordered pair"});
    seen[{key.first, key.second}] = static_cast<int>(k);
  }

  // Connectivity over the line graph.
  if (n > 0) {
    std::vector<int> stack{0};
    std::vector<bool> vis(n, false);
    vis[0] = true;
    int count = 1;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (const Line& l : grid.lines) {
        int v = -1;
        if (l.from_bus - 1 == u) v = l.to_bus - 1;
        if (l.to_bus - 1 == u) v = l.from_bus - 1;
        if (v >= 0 && v < n && !vis[v]) {
          vis[v] = true;
          ++count;
          stack.push_back(v);
        }
      }
    }
    if (count != n)
      out.push_back({"connectivity",
                     "line graph is disconnected (" + std::to_string(count) +
                         " of " + std::to_string(n) + " buses reachable)"});
  }
  return out;
}

}  // namespace daymarket

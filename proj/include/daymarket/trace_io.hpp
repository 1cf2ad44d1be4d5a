// Trace and result serialization: one CSV per quantity plus a run summary.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "daymarket/sim.hpp"

namespace daymarket {

struct Scenario;

// Files written: prices.csv, angles.csv, loads.csv, generation.csv,
// signals.csv, convergence.csv, run_meta.csv, final_schedules.csv,
// final_decisions.csv, final_signals.csv, summary.txt.
void write_trace(const std::filesystem::path& dir, const Scenario& scenario,
                 const IterationTrace& trace);

void write_metrics(const std::filesystem::path& path, const MarketMetrics& m);

// Reconstructs the final state of a written trace as a single-record trace,
// sufficient for metric recomputation.
IterationTrace read_final_state(const std::filesystem::path& dir,
                                const Scenario& scenario);

// Full-precision decimal text (shortest round-trip form).
std::string format_double(double v);

}  // namespace daymarket

#pragma once

#include <string>

#include "epmc/config.hpp"
#include "epmc/solver.hpp"

namespace epmc {

/// Writes iterates.csv, terminal_density_<i>.csv, run.json and the
/// optional SVG charts into `dir`. All files are written to a temporary
/// name and renamed, so a crash never leaves partial artifacts.
void write_run_artifacts(const std::string& dir, const RunResult& result,
                         const ControlProblem& problem, const ExperimentConfig& cfg,
                         double wall_total_s);

}  // namespace epmc

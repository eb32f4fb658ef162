#pragma once

#include <chrono>
#include <ctime>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "beltopt/csv.hpp"
#include "beltopt/scenario_io.hpp"
#include "beltopt/solver.hpp"

namespace beltopt {

inline std::vector<std::string> solution_csv_header() {
  std::vector<std::string> h = {"t"};
  const char* state_names[kStateDim] = {
      "k1x", "k1y", "k1z", "k2x", "k2y", "k2z", "roll", "pitch", "yaw",
      "v1x", "v1y", "v1z", "v2x", "v2y", "v2z", "wx", "wy", "wz"};
  const char* input_names[kInputDim] = {"fx", "fy", "fz", "mx", "my", "mz"};
  for (const char* n : state_names) h.push_back(n);
  for (const char* n : input_names) h.push_back(n);
  h.push_back("lambda0");
  h.push_back("lambda1");
  return h;
}

// One row per knot: t, x[18], u[6], elastic and contact force magnitudes.
inline void write_solution_csv(const TrajectorySolution& sol, const std::string& path) {
  const int K = sol.horizon_N + 1;
  MatX rows(K, 1 + kStateDim + kInputDim + kForceDim);
  for (int k = 0; k < K; ++k) {
    rows(k, 0) = k * sol.step_h;
    rows.block(k, 1, 1, kStateDim) = sol.states.row(k);
    rows.block(k, 1 + kStateDim, 1, kInputDim) = sol.inputs.row(k);
    rows(k, 1 + kStateDim + kInputDim) = sol.force_magnitudes(k, 0);
    rows(k, 1 + kStateDim + kInputDim + 1) = sol.force_magnitudes(k, 1);
  }
  write_csv(path, solution_csv_header(), rows);
}

// Rebuilds the trajectory part of a solution from its CSV; solver diagnostics
// are not stored in the CSV and stay default.
inline TrajectorySolution read_solution_csv(const std::string& path) {
  const CsvTable table = read_csv(path);
  if (table.header != solution_csv_header())
    throw ParseError("solution csv '" + path + "': unexpected header");
  const int K = static_cast<int>(table.rows.rows());
  if (K < 2) throw ParseError("solution csv '" + path + "': needs at least two knots");
  TrajectorySolution sol;
  sol.horizon_N = K - 1;
  sol.step_h = table.rows(1, 0) - table.rows(0, 0);
  sol.states = table.rows.block(0, 1, K, kStateDim);
  sol.inputs = table.rows.block(0, 1 + kStateDim, K, kInputDim);
  sol.force_magnitudes = table.rows.block(0, 1 + kStateDim + kInputDim, K, kForceDim);
  return sol;
}

inline std::string iso8601_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

inline nlohmann::json options_to_json(const SolverOptions& opts) {
  nlohmann::json j;
  j["sigma_schedule"] = opts.sigma_schedule;
  j["constraint_tol"] = opts.constraint_tol;
  j["complementarity_tol"] = opts.complementarity_tol;
  j["optimality_tol"] = opts.optimality_tol;
  j["max_outer_iters"] = opts.max_outer_iters;
  j["max_inner_iters"] = opts.max_inner_iters;
  j["penalty_growth"] = opts.penalty_growth;
  j["initial_penalty"] = opts.initial_penalty;
  j["max_penalty"] = opts.max_penalty;
  j["cg_max_iters"] = opts.cg_max_iters;
  j["stage_relax_factor"] = opts.stage_relax_factor;
  j["wall_budget_s"] = opts.wall_budget_s;
  return j;
}

inline nlohmann::json diagnostics_to_json(const SolveDiagnostics& d) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : d.stages) {
    stages.push_back({{"sigma", s.sigma},
                      {"end_violation_rel", s.end_violation},
                      {"end_cost", s.end_cost},
                      {"inner_iterations", s.inner_iterations},
                      {"outer_iterations", s.outer_iterations},
                      {"wall_time_s", s.wall_time_s},
                      {"converged", s.converged}});
  }
  nlohmann::json j;
  j["stages"] = stages;
  j["final_violation"] = d.final_violation;
  j["final_violation_rel"] = d.final_violation_rel;
  j["final_cost"] = d.final_cost;
  j["final_sigma"] = d.final_sigma;
  j["projected_gradient"] = d.projected_gradient;
  j["max_bound_violation"] = d.max_bound_violation;
  j["total_inner_iterations"] = d.total_inner_iterations;
  j["wall_time_s"] = d.wall_time_s;
  return j;
}

// Sidecar manifest for one solved subtask: options, diagnostics, status, and
// the scenario needed to re-simulate the solution. Wall-clock fields live
// here, never in the deterministic artifacts.
inline void write_solution_manifest(const TrajectorySolution& sol, const Scenario& scenario,
                                    const SolverOptions& opts, const std::string& path) {
  nlohmann::json j;
  j["timestamp"] = iso8601_timestamp();
  j["subtask"] = to_string(sol.subtask);
  j["status"] = to_string(sol.status);
  j["horizon_n"] = sol.horizon_N;
  j["step_h_s"] = sol.step_h;
  j["options"] = options_to_json(opts);
  j["diagnostics"] = diagnostics_to_json(sol.diagnostics);
  j["scenario"] = scenario_to_json(scenario);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest '" + path + "'");
  out << j.dump(2) << "\n";
}

}  // namespace beltopt

#pragma once

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "beltopt/chain_plant.hpp"
#include "beltopt/csv.hpp"
#include "beltopt/rng.hpp"
#include "beltopt/scenario_io.hpp"
#include "beltopt/solution_io.hpp"
#include "beltopt/solver.hpp"
#include "beltopt/svg.hpp"

namespace beltopt {

// Gaussian K1-goal perturbation: mean + sqrt(cov) * normal draw per axis, in
// x, y, z order (six draws per run across the two subtasks).
inline Vec3 sample_goal(const Vec3& mean, const Vec3& cov_diag, CounterRng& rng) {
  if (cov_diag.minCoeff() < 0)
    throw std::invalid_argument("sample_goal: covariance diagonal must be >= 0");
  Vec3 out;
  for (int i = 0; i < 3; ++i) out[i] = mean[i] + std::sqrt(cov_diag[i]) * rng.gaussian();
  return out;
}

struct ExperimentPlan {
  Scenario scenario;
  std::string scenario_id;
  int runs = 10;
  Vec3 goal_noise_mean_s1 = Vec3::Zero();
  Vec3 goal_noise_mean_s2 = Vec3::Zero();
  Vec3 goal_noise_cov = Vec3(0.005, 0.005, 0.005);  // m^2
  std::uint64_t rng_seed = 0;
  int horizon_N = 100;
  double step_h = 0.05;
  SolverOptions solver;
  TranscriptionOptions transcription;
  ChainPlantParams chain;
  bool simulate = true;

  void validate() const {
    scenario.validate();
    if (runs < 1) throw ValidationError("ExperimentPlan runs >= 1");
    if (goal_noise_cov.minCoeff() < 0)
      throw ValidationError("ExperimentPlan covariance diagonal nonnegative");
  }

  static ExperimentPlan for_scenario(const Scenario& scenario, const std::string& id,
                                     int runs, std::uint64_t seed, int horizon_N = 100,
                                     double step_h = 0.05) {
    ExperimentPlan plan;
    plan.scenario = scenario;
    plan.scenario_id = id;
    plan.runs = runs;
    plan.rng_seed = seed;
    plan.horizon_N = horizon_N;
    plan.step_h = step_h;
    auto goals = default_goals(scenario, horizon_N, step_h);
    plan.goal_noise_mean_s1 = goals.first.goal_state.q.k1_pos;
    plan.goal_noise_mean_s2 = goals.second.goal_state.q.k1_pos;
    plan.scenario.subtask_s1 = goals.first;
    plan.scenario.subtask_s2 = goals.second;
    return plan;
  }
};

struct RunRecord {
  int run_index = 0;
  Vec3 goal_s1 = Vec3::Zero();
  Vec3 goal_s2 = Vec3::Zero();
  std::string status_s1 = "not-attempted";
  std::string status_s2 = "not-attempted";
  double violation_s1 = 0.0, violation_s2 = 0.0;
  double cost_s1 = 0.0, cost_s2 = 0.0;
  int iterations_s1 = 0, iterations_s2 = 0;
  double wall_s1 = 0.0, wall_s2 = 0.0;  // reported in the timing artifact only
  bool feasible = false;
  bool simulated = false;
  AssemblyOutcome outcome;
  std::string error;

  // kept in memory for artifact emission
  std::optional<TrajectorySolution> sol_s1, sol_s2;
  std::vector<double> sim_t;
  std::vector<Vec3> sim_k1;
};

struct ExperimentReport {
  ExperimentPlan plan;
  std::vector<RunRecord> records;
  int feasible_count = 0;
  int success_count = 0;
  double mean_wall_s1 = 0.0, sd_wall_s1 = 0.0;
  double mean_wall_s2 = 0.0, sd_wall_s2 = 0.0;

  void aggregate() {
    feasible_count = 0;
    success_count = 0;
    std::vector<double> w1, w2;
    for (const auto& r : records) {
      if (r.feasible) ++feasible_count;
      if (r.outcome.success) ++success_count;
      if (r.status_s1 != "not-attempted") w1.push_back(r.wall_s1);
      if (r.status_s2 != "not-attempted") w2.push_back(r.wall_s2);
    }
    auto mean_sd = [](const std::vector<double>& v, double& mean, double& sd) {
      mean = sd = 0.0;
      if (v.empty()) return;
      for (double x : v) mean += x;
      mean /= v.size();
      for (double x : v) sd += (x - mean) * (x - mean);
      sd = v.size() > 1 ? std::sqrt(sd / (v.size() - 1)) : 0.0;
    };
    mean_sd(w1, mean_wall_s1, sd_wall_s1);
    mean_sd(w2, mean_wall_s2, sd_wall_s2);
  }
};

namespace experiment_detail {

inline int thread_budget(int runs) {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("BELTOPT_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) n = v;
  }
  return std::max(1, std::min(n, runs));
}

inline void execute_run(const ExperimentPlan& plan, int run_index, RunRecord& rec) {
  rec.run_index = run_index;
  CounterRng rng = CounterRng::stream(plan.rng_seed, static_cast<std::uint64_t>(run_index));
  rec.goal_s1 = sample_goal(plan.goal_noise_mean_s1, plan.goal_noise_cov, rng);
  rec.goal_s2 = sample_goal(plan.goal_noise_mean_s2, plan.goal_noise_cov, rng);

  SubtaskSpec s1 = plan.scenario.subtask_s1;
  SubtaskSpec s2 = plan.scenario.subtask_s2;
  s1.horizon_N = s2.horizon_N = plan.horizon_N;
  s1.step_h = s2.step_h = plan.step_h;
  s1.goal_state.q.k1_pos = rec.goal_s1;
  s2.goal_state.q.k1_pos = rec.goal_s2;
  s2.desired_tension = s2_desired_tension(rec.goal_s2, plan.scenario);

  try {
    const SequenceResult seq =
        solve_subtask_sequence(plan.scenario, {s1, s2}, plan.solver, plan.transcription);
    rec.status_s1 = to_string(seq.s1.status);
    rec.violation_s1 = seq.s1.diagnostics.final_violation;
    rec.cost_s1 = seq.s1.diagnostics.final_cost;
    rec.iterations_s1 = seq.s1.diagnostics.total_inner_iterations;
    rec.wall_s1 = seq.s1.diagnostics.wall_time_s;
    rec.sol_s1 = seq.s1;
    if (seq.s2) {
      rec.status_s2 = to_string(seq.s2->status);
      rec.violation_s2 = seq.s2->diagnostics.final_violation;
      rec.cost_s2 = seq.s2->diagnostics.final_cost;
      rec.iterations_s2 = seq.s2->diagnostics.total_inner_iterations;
      rec.wall_s2 = seq.s2->diagnostics.wall_time_s;
      rec.sol_s2 = *seq.s2;
    }
    rec.feasible = seq.s1.status == SolveStatus::Converged && seq.s2 &&
                   seq.s2->status == SolveStatus::Converged;
    if (rec.feasible && plan.simulate) {
      const AssemblyReplay replay =
          simulate_assembly(*rec.sol_s1, *rec.sol_s2, plan.scenario, plan.chain);
      rec.outcome = replay.outcome;
      rec.simulated = true;
      for (const auto& frame : replay.trace.frames) {
        rec.sim_t.push_back(frame.t);
        rec.sim_k1.push_back(
            frame.positions.row(replay.final_state.grip_node).transpose());
      }
    }
  } catch (const std::exception& e) {
    rec.error = e.what();
  }
}

}  // namespace experiment_detail

// Runs the seeded goal-sampled batch: solve S1+S2 per run, replay converged
// pairs through the chain plant, aggregate Table-1-style counts. Individual
// run failures are recorded, never fatal.
inline ExperimentReport run_experiment(const ExperimentPlan& plan) {
  plan.validate();
  ExperimentReport report;
  report.plan = plan;
  report.records.resize(plan.runs);

  const int workers = experiment_detail::thread_budget(plan.runs);
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= plan.runs) return;
      experiment_detail::execute_run(plan, i, report.records[i]);
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  report.aggregate();
  return report;
}

// mean +- sd in the published format, e.g. "36.138+-5.747[s]"
inline std::string format_timing(double mean, double sd) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f+-%.3f[s]", mean, sd);
  return buf;
}

namespace experiment_detail {

inline nlohmann::json vec3_json(const Vec3& v) { return {v[0], v[1], v[2]}; }

inline nlohmann::json outcome_json(const AssemblyOutcome& o) {
  return {{"success", o.success},       {"wrapped_p1", o.wrapped_p1},
          {"wrapped_p2", o.wrapped_p2}, {"final_tension_n", o.final_tension},
          {"max_penetration_m", o.max_penetration}, {"dropped", o.dropped}};
}

}  // namespace experiment_detail

// Deterministic payload: everything except wall-clock timing.
inline nlohmann::json report_to_json(const ExperimentReport& report) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : report.records) {
    nlohmann::json jr;
    jr["run"] = r.run_index;
    jr["goal_s1_m"] = experiment_detail::vec3_json(r.goal_s1);
    jr["goal_s2_m"] = experiment_detail::vec3_json(r.goal_s2);
    jr["status_s1"] = r.status_s1;
    jr["status_s2"] = r.status_s2;
    jr["violation_s1"] = r.violation_s1;
    jr["violation_s2"] = r.violation_s2;
    jr["cost_s1"] = r.cost_s1;
    jr["cost_s2"] = r.cost_s2;
    jr["iterations_s1"] = r.iterations_s1;
    jr["iterations_s2"] = r.iterations_s2;
    jr["feasible"] = r.feasible;
    jr["simulated"] = r.simulated;
    jr["outcome"] = experiment_detail::outcome_json(r.outcome);
    if (!r.error.empty()) jr["error"] = r.error;
    runs.push_back(jr);
  }
  nlohmann::json j;
  j["scenario"] = report.plan.scenario_id;
  j["runs_requested"] = report.plan.runs;
  j["seed"] = report.plan.rng_seed;
  j["horizon_n"] = report.plan.horizon_N;
  j["step_h_s"] = report.plan.step_h;
  j["goal_noise_mean_s1"] = experiment_detail::vec3_json(report.plan.goal_noise_mean_s1);
  j["goal_noise_mean_s2"] = experiment_detail::vec3_json(report.plan.goal_noise_mean_s2);
  j["goal_noise_cov"] = experiment_detail::vec3_json(report.plan.goal_noise_cov);
  j["records"] = runs;
  j["feasible_count"] = report.feasible_count;
  j["success_count"] = report.success_count;
  return j;
}

// Writes report.json, runs.csv, one trajectory CSV per solved run, per-run
// SVG plots, and the timing manifest. Only timing.json carries wall-clock
// data; every other artifact is a pure function of (plan, seed).
inline std::vector<std::string> emit_artifacts(const ExperimentReport& report,
                                               const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::vector<std::string> written;
  auto emit_path = [&](const std::string& name) {
    written.push_back((fs::path(out_dir) / name).string());
    return written.back();
  };

  {
    std::ofstream out(emit_path("report.json"), std::ios::binary);
    if (!out) throw std::runtime_error("cannot write report.json in '" + out_dir + "'");
    out << report_to_json(report).dump(2) << "\n";
  }

  {
    std::vector<std::string> header = {
        "run",          "goal_s1_x",    "goal_s1_y",  "goal_s1_z",  "goal_s2_x",
        "goal_s2_y",    "goal_s2_z",    "feasible",   "success",    "wrapped_p1",
        "wrapped_p2",   "final_tension", "dropped",   "violation_s1", "violation_s2",
        "cost_s1",      "cost_s2"};
    MatX rows(report.records.size(), header.size());
    for (std::size_t i = 0; i < report.records.size(); ++i) {
      const auto& r = report.records[i];
      int c = 0;
      rows(i, c++) = r.run_index;
      for (int k = 0; k < 3; ++k) rows(i, c++) = r.goal_s1[k];
      for (int k = 0; k < 3; ++k) rows(i, c++) = r.goal_s2[k];
      rows(i, c++) = r.feasible ? 1 : 0;
      rows(i, c++) = r.outcome.success ? 1 : 0;
      rows(i, c++) = r.outcome.wrapped_p1 ? 1 : 0;
      rows(i, c++) = r.outcome.wrapped_p2 ? 1 : 0;
      rows(i, c++) = r.outcome.final_tension;
      rows(i, c++) = r.outcome.dropped ? 1 : 0;
      rows(i, c++) = r.violation_s1;
      rows(i, c++) = r.violation_s2;
      rows(i, c++) = r.cost_s1;
      rows(i, c++) = r.cost_s2;
    }
    write_csv(emit_path("runs.csv"), header, rows);
  }

  for (const auto& r : report.records) {
    if (!r.sol_s1) continue;
    const std::string name = "run_" + std::to_string(r.run_index) + "_trajectory.csv";
    const TrajectorySolution& s1 = *r.sol_s1;
    const int k1 = s1.horizon_N + 1;
    const int k2 = r.sol_s2 ? r.sol_s2->horizon_N + 1 : 0;
    MatX rows(k1 + k2, 1 + kStateDim + kInputDim + kForceDim);
    for (int k = 0; k < k1; ++k) {
      rows(k, 0) = k * s1.step_h;
      rows.block(k, 1, 1, kStateDim) = s1.states.row(k);
      rows.block(k, 1 + kStateDim, 1, kInputDim) = s1.inputs.row(k);
      rows(k, 1 + kStateDim + kInputDim) = s1.force_magnitudes(k, 0);
      rows(k, 2 + kStateDim + kInputDim) = s1.force_magnitudes(k, 1);
    }
    if (r.sol_s2) {
      const TrajectorySolution& s2 = *r.sol_s2;
      const double t1 = s1.horizon_N * s1.step_h;
      for (int k = 0; k < k2; ++k) {
        rows(k1 + k, 0) = t1 + k * s2.step_h;
        rows.block(k1 + k, 1, 1, kStateDim) = s2.states.row(k);
        rows.block(k1 + k, 1 + kStateDim, 1, kInputDim) = s2.inputs.row(k);
        rows(k1 + k, 1 + kStateDim + kInputDim) = s2.force_magnitudes(k, 0);
        rows(k1 + k, 2 + kStateDim + kInputDim) = s2.force_magnitudes(k, 1);
      }
    }
    write_csv(emit_path(name), solution_csv_header(), rows);

    // reference vs simulated K1 position, and force magnitudes over time
    if (r.simulated && !r.sim_t.empty()) {
      std::vector<SvgSeries> pos_series;
      const char* comp_names[3] = {"x", "y", "z"};
      const char* ref_colors[3] = {"#1f77b4", "#2ca02c", "#d62728"};
      for (int c = 0; c < 3; ++c) {
        SvgSeries ref;
        ref.label = std::string("ref ") + comp_names[c];
        ref.color = ref_colors[c];
        ref.dashed = true;
        for (int k = 0; k < rows.rows(); ++k) {
          ref.x.push_back(rows(k, 0));
          ref.y.push_back(rows(k, 1 + c));
        }
        SvgSeries sim;
        sim.label = std::string("sim ") + comp_names[c];
        sim.color = ref_colors[c];
        for (std::size_t k = 0; k < r.sim_t.size(); ++k) {
          sim.x.push_back(r.sim_t[k]);
          sim.y.push_back(r.sim_k1[k][c]);
        }
        pos_series.push_back(std::move(ref));
        pos_series.push_back(std::move(sim));
      }
      write_svg_plot(emit_path("run_" + std::to_string(r.run_index) + "_k1_position.svg"),
                     "K1 position, run " + std::to_string(r.run_index), "time [s]",
                     "position [m]", pos_series);

      std::vector<SvgSeries> force_series(2);
      force_series[0].label = "elastic magnitude";
      force_series[0].color = "#1f77b4";
      force_series[1].label = "contact magnitude";
      force_series[1].color = "#d62728";
      for (int k = 0; k < rows.rows(); ++k) {
        force_series[0].x.push_back(rows(k, 0));
        force_series[0].y.push_back(rows(k, 1 + kStateDim + kInputDim));
        force_series[1].x.push_back(rows(k, 0));
        force_series[1].y.push_back(rows(k, 2 + kStateDim + kInputDim));
      }
      write_svg_plot(emit_path("run_" + std::to_string(r.run_index) + "_forces.svg"),
                     "Force magnitudes, run " + std::to_string(r.run_index), "time [s]",
                     "force [N]", force_series);
    }
  }

  {
    nlohmann::json j;
    j["timestamp"] = iso8601_timestamp();
    j["solve_time_s1"] = format_timing(report.mean_wall_s1, report.sd_wall_s1);
    j["solve_time_s2"] = format_timing(report.mean_wall_s2, report.sd_wall_s2);
    j["mean_wall_s1_s"] = report.mean_wall_s1;
    j["sd_wall_s1_s"] = report.sd_wall_s1;
    j["mean_wall_s2_s"] = report.mean_wall_s2;
    j["sd_wall_s2_s"] = report.sd_wall_s2;
    nlohmann::json per_run = nlohmann::json::array();
    for (const auto& r : report.records)
      per_run.push_back({{"run", r.run_index}, {"wall_s1_s", r.wall_s1},
                         {"wall_s2_s", r.wall_s2}});
    j["per_run"] = per_run;
    std::ofstream out(emit_path("timing.json"), std::ios::binary);
    out << j.dump(2) << "\n";
  }
  return written;
}

}  // namespace beltopt

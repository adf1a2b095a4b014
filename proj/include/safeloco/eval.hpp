#pragma once

// Trial runner, safety/comfort band metrics, ablation tables and SVG plots.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "safeloco/env.hpp"
#include "safeloco/trainer.hpp"

namespace safeloco::eval {

inline constexpr double kUnsafeDistance = 0.6;
inline constexpr double kComfortDistance = 1.2;

struct ComfortTimes {
  double t_unsafe = 0.0;
  double t_uncomfortable = 0.0;
};

// dt * #{d < 0.6} and dt * #{0.6 <= d < 1.2}.
ComfortTimes comfort_metrics(std::span<const double> d_obs, double dt);

struct TrajectoryStep {
  int k = 0;
  double x = 0.0, y = 0.0, yaw = 0.0, vx = 0.0, vy = 0.0, omega = 0.0, height = 0.0;
  env::PolicyAction action{};
  double reward = 0.0;
  std::vector<double> reward_terms;  // aligned with env::reward_term_names()
  std::array<double, env::kNumCosts> costs{};
  double h_d = 0.0;
  double d_obs = 0.0;
  bool collision = false;
};

struct Trajectory {
  std::string scenario;
  std::uint64_t seed = 0;
  double dt = 0.05;
  sim::RobotBody start;
  std::vector<TrajectoryStep> steps;
  sim::WorldState world;  // layout at reset
};

// Maps the current observation to a normalized action.
using Controller = std::function<env::PolicyAction(const env::StepResult&, const env::SafeLocoEnv&)>;

// Deterministic controller: normalizer + actor mean.
Controller policy_controller(const rl::PolicyBundle& bundle);

struct TrialResult {
  std::uint64_t seed = 0;
  bool success = false;
  bool collided = false;
  int steps = 0;
  double t_unsafe = 0.0;
  double t_uncomfortable = 0.0;
  double tracking_error = 0.0;
};

TrialResult run_trial(env::SafeLocoEnv& env, const Controller& ctl, std::uint64_t seed, Trajectory* traj = nullptr);

struct EvalReport {
  std::string scenario;
  std::string mode;
  int n_trials = 0;
  double success_rate = 0.0;
  double mean_t_unsafe = 0.0;
  double mean_t_uncomfortable = 0.0;
  double mean_episode_length = 0.0;  // seconds
  std::vector<TrialResult> trials;
};

// Trial i uses seed derive_seed(base_seed, i). Evaluation env: level 2, no
// training-only randomization.
EvalReport run_trials(const Controller& ctl, const env::EnvConfig& env_cfg, const sim::Scenario& scenario, int n,
                      std::uint64_t base_seed, const std::string& mode = "", int jobs = 1);

env::EnvConfig eval_env_config(env::EnvConfig base);

void write_report_csv(const std::filesystem::path& path, const EvalReport& r);

// Trajectory CSV (one row per step) and its reader.
void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& t);
std::vector<TrajectoryStep> read_trajectory_csv(const std::filesystem::path& path);

struct PlotSeries {
  std::string label;
  std::vector<sim::Vec2> points;
  std::vector<bool> collision;
};

// Top-down SVG: obstacles, 0.6 m and 1.2 m bands, one polyline per series.
void emit_trajectory_svg(const std::vector<PlotSeries>& series, const sim::WorldState& world,
                         const sim::Scenario& scenario, const std::filesystem::path& path);
PlotSeries series_from(const std::string& label, const std::vector<TrajectoryStep>& steps);
// Level-2 layout without jitter and agents at t = 0.
sim::WorldState nominal_world(const sim::Scenario& s);
std::string mode_color(const std::string& mode);

struct AblationConfig {
  std::vector<rl::Mode> modes = {rl::Mode::kPpoRewardShaping, rl::Mode::kP3o, rl::Mode::kP3oCbf};
  std::vector<std::string> scenarios = {"cluttered_static", "narrow_passage", "dynamic_agents", "suspended_obstacle"};
  std::string timing_scenario = "cluttered_static";
  int timing_trials = 10;
  int success_trials = 30;
  std::uint64_t eval_seed = 1000;
  int jobs = 1;
  // Reuse an existing final checkpoint when its config matches.
  bool reuse = true;
};

struct AblationResult {
  std::vector<EvalReport> timing;                  // one per mode
  std::vector<std::vector<EvalReport>> success;    // [mode][scenario]
  std::vector<std::filesystem::path> checkpoints;  // one per mode
  std::vector<double> train_seconds;               // wall time per mode; -1 when unknown
};

// Trains every mode from base (identical seed and budget), then evaluates.
// Writes <out>/<mode>/..., table2.csv, table3.csv and traj_<scenario>_<mode>.svg.
AblationResult run_ablation(const rl::RunConfig& base, const AblationConfig& cfg, const std::filesystem::path& out,
                            const std::function<void(const std::string&)>& log = {});

// Trains (or reuses) a single mode; returns the final checkpoint stem. The
// training wall time is kept in <run_dir>/train_wall_s.txt.
std::filesystem::path train_or_reuse(const rl::RunConfig& cfg, const std::filesystem::path& run_dir, bool reuse,
                                     int jobs, const std::function<void(const std::string&)>& log = {},
                                     double* wall_seconds = nullptr);

}  // namespace safeloco::eval

// Command-line front end: train / eval / ablate / replay / plot.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "safeloco/errors.hpp"
#include "safeloco/eval.hpp"
#include "safeloco/trainer.hpp"

namespace fs = std::filesystem;
using namespace safeloco;

namespace {

enum Exit { kOk = 0, kConfig = 2, kNumerical = 3, kMissing = 4 };

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback) {
  if (flag) return *flag;
  if (const char* s = std::getenv("SAFELOCO_SEED"); s && *s) {
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      throw ConfigError("SAFELOCO_SEED: not an unsigned integer: '" + std::string(s) + "'");
    }
  }
  return fallback;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

rl::RunConfig load_config(const std::string& path) {
  if (path.empty()) return rl::run_config_from_json(nlohmann::json::object());
  return rl::load_run_config(path);
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

int default_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Safe locomotion learning: CBF-derived costs with penalized PPO"};
  app.require_subcommand(1);

  // train
  std::string train_config, train_mode, train_scenario, train_out, train_name;
  std::optional<std::uint64_t> train_seed;
  std::optional<long> train_steps;
  int jobs = default_jobs();
  auto* train = app.add_subcommand("train", "Train a policy");
  train->add_option("--config", train_config, "Run config JSON");
  train->add_option("--mode", train_mode, "p3o_cbf | p3o | ppo_reward_shaping");
  train->add_option("--scenario", train_scenario, "Training scenario(s), comma separated");
  train->add_option("--seed", train_seed, "Seed (falls back to SAFELOCO_SEED, then the config)");
  train->add_option("--steps", train_steps, "Total environment steps");
  train->add_option("--out", train_out, "Run directory (default runs/<name>)");
  train->add_option("--name", train_name, "Run name");
  train->add_option("--jobs", jobs, "Environment worker threads");

  // eval
  std::string eval_ckpt, eval_scenario = "cluttered_static", eval_out;
  int eval_trials = 30;
  std::optional<std::uint64_t> eval_seed;
  std::vector<int> eval_mask;
  auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint");
  evalc->add_option("--ckpt", eval_ckpt, "Checkpoint stem or manifest")->required();
  evalc->add_option("--scenario", eval_scenario, "Scenario name or JSON path");
  evalc->add_option("--trials", eval_trials, "Number of trials");
  evalc->add_option("--seed", eval_seed, "Base evaluation seed");
  evalc->add_option("--out", eval_out, "Report directory (default reports/<run name>)");
  evalc->add_option("--mask-ring", eval_mask, "LiDAR ring index to blank out (repeatable)");
  evalc->add_option("--jobs", jobs, "Trial worker threads");

  // ablate
  std::string abl_config, abl_out = "reports/ablation";
  std::optional<long> abl_budget;
  int abl_trials = 30, abl_timing_trials = 10;
  bool abl_fresh = false;
  auto* ablate = app.add_subcommand("ablate", "Train all modes and emit comparison tables");
  ablate->add_option("--config", abl_config, "Run config JSON");
  ablate->add_option("--budget", abl_budget, "Environment steps per mode");
  ablate->add_option("--out", abl_out, "Output directory");
  ablate->add_option("--trials", abl_trials, "Trials per scenario for success rates");
  ablate->add_option("--timing-trials", abl_timing_trials, "Trials for the unsafe/uncomfortable timing table");
  ablate->add_flag("--fresh", abl_fresh, "Retrain even when a matching checkpoint exists");
  ablate->add_option("--jobs", jobs, "Worker threads");

  // replay
  std::string rep_ckpt, rep_scenario = "cluttered_static", rep_dump;
  std::optional<std::uint64_t> rep_seed;
  std::vector<int> rep_mask;
  auto* replay = app.add_subcommand("replay", "Run one episode and dump a per-step trajectory CSV");
  replay->add_option("--ckpt", rep_ckpt, "Checkpoint stem or manifest")->required();
  replay->add_option("--scenario", rep_scenario, "Scenario name or JSON path");
  replay->add_option("--seed", rep_seed, "Episode seed");
  replay->add_option("--dump", rep_dump, "Output CSV path")->required();
  replay->add_option("--mask-ring", rep_mask, "LiDAR ring index to blank out (repeatable)");

  // plot
  std::string plot_traj, plot_scenario = "cluttered_static", plot_out, plot_label = "policy";
  auto* plot = app.add_subcommand("plot", "Render a trajectory CSV as SVG");
  plot->add_option("--traj", plot_traj, "Trajectory CSV from replay")->required();
  plot->add_option("--scenario", plot_scenario, "Scenario name or JSON path");
  plot->add_option("--out", plot_out, "Output SVG path")->required();
  plot->add_option("--label", plot_label, "Series label (a mode name selects its colour)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*train) {
      rl::RunConfig cfg = load_config(train_config);
      cfg.seed = resolve_seed(train_seed, cfg.seed);
      if (!train_mode.empty()) cfg.train.mode = rl::parse_mode(train_mode);
      if (!train_scenario.empty()) cfg.train.scenarios = split(train_scenario);
      if (train_steps) cfg.train.total_steps = *train_steps;
      if (!train_name.empty()) cfg.name = train_name;
      cfg.train.validate();
      const fs::path out = train_out.empty() ? fs::path("runs") / cfg.name : fs::path(train_out);
      std::vector<sim::Scenario> scenarios;
      for (const auto& s : cfg.train.scenarios) scenarios.push_back(sim::load_scenario(s));
      rl::Trainer trainer(cfg, scenarios);
      trainer.set_jobs(jobs);
      std::cerr << "actor parameters: " << trainer.net().actor_param_count()
                << ", critic parameters: " << trainer.net().critic_param_count() << "\n";
      trainer.train(out, [](const rl::IterationMetrics& m) {
        std::cerr << "step " << m.step << " reward " << m.reward << " success " << m.success_rate << " J "
                  << m.j_cost[0] << "/" << m.j_cost[1] << "/" << m.j_cost[2] << " level " << m.level << "\n";
      });
      std::cout << out.string() << "\n";
      return kOk;
    }

    if (*evalc) {
      const auto loaded = rl::load_policy(eval_ckpt);
      auto env_cfg = loaded.config.env;
      env_cfg.masked_rings = eval_mask;
      const auto scenario = sim::load_scenario(eval_scenario);
      const std::uint64_t seed = resolve_seed(eval_seed, 0);
      const auto rep = eval::run_trials(eval::policy_controller(loaded.bundle), env_cfg, scenario, eval_trials, seed,
                                        rl::mode_name(loaded.config.train.mode), jobs);
      const fs::path out = eval_out.empty() ? fs::path("reports") / loaded.config.name : fs::path(eval_out);
      eval::write_report_csv(out / ("eval_" + scenario.name + ".csv"), rep);
      std::cout << "scenario " << rep.scenario << " mode " << rep.mode << " trials " << rep.n_trials << " success_rate "
                << rep.success_rate << " t_unsafe " << rep.mean_t_unsafe << " t_uncomfortable "
                << rep.mean_t_uncomfortable << " episode_s " << rep.mean_episode_length << "\n";
      return kOk;
    }

    if (*ablate) {
      rl::RunConfig cfg = load_config(abl_config);
      cfg.seed = resolve_seed(std::nullopt, cfg.seed);
      if (abl_budget) cfg.train.total_steps = *abl_budget;
      cfg.train.validate();
      eval::AblationConfig ac;
      ac.success_trials = abl_trials;
      ac.timing_trials = abl_timing_trials;
      ac.jobs = jobs;
      ac.reuse = !abl_fresh;
      eval::run_ablation(cfg, ac, abl_out, log_line);
      std::ifstream t2(fs::path(abl_out) / "table2.csv"), t3(fs::path(abl_out) / "table3.csv");
      std::cout << t2.rdbuf() << "\n" << t3.rdbuf();
      return kOk;
    }

    if (*replay) {
      const auto loaded = rl::load_policy(rep_ckpt);
      auto env_cfg = eval::eval_env_config(loaded.config.env);
      env_cfg.masked_rings = rep_mask;
      const auto scenario = sim::load_scenario(rep_scenario);
      env::SafeLocoEnv env(env_cfg, {scenario});
      eval::Trajectory traj;
      const auto tr = eval::run_trial(env, eval::policy_controller(loaded.bundle), resolve_seed(rep_seed, 0), &traj);
      eval::write_trajectory_csv(rep_dump, traj);
      std::cout << "steps " << tr.steps << " success " << tr.success << " collided " << tr.collided << " t_unsafe "
                << tr.t_unsafe << "\n";
      return kOk;
    }

    if (*plot) {
      const auto steps = eval::read_trajectory_csv(plot_traj);
      const auto scenario = sim::load_scenario(plot_scenario);
      eval::emit_trajectory_svg({eval::series_from(plot_label, steps)}, eval::nominal_world(scenario), scenario,
                                plot_out);
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const TrainingError& e) {
    std::cerr << "numerical fault: " << e.what() << "\n";
    return kNumerical;
  } catch (const MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return kMissing;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kConfig;
  }
  return kOk;
}

#pragma once

// Rollout collection and the penalized clipped-objective update.

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "safeloco/env.hpp"
#include "safeloco/nn.hpp"
#include "safeloco/policy.hpp"

namespace safeloco::rl {

enum class Mode { kP3oCbf, kP3o, kPpoRewardShaping };

std::string mode_name(Mode m);
Mode parse_mode(const std::string& s);  // ConfigError on unknown names

struct TrainConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip_eps = 0.2;
  std::array<double, env::kNumCosts> kappa = {1.0, 1.0, 1.0};
  std::array<double, env::kNumCosts> d = {0.0, 0.0, 0.0};
  double lr = 3e-4;
  double lr_final_frac = 1.0;  // lr decays linearly to lr * lr_final_frac over total_steps
  int epochs = 5;
  int minibatches = 4;
  int num_envs = 16;
  int horizon = 256;
  long total_steps = 2'000'000;
  Mode mode = Mode::kP3oCbf;
  double entropy_coef = 0.005;  // annealed linearly to zero over total_steps
  double w_c = 10.0;            // reward-shaping weight
  double value_coef = 0.5;
  double max_grad_norm = 1.0;   // per network (actor, critic)
  double log_std_floor = -5.0;
  long checkpoint_every = 0;    // env steps; 0 keeps only the final checkpoint
  // Mode-derived switches; unset means the mode default.
  std::optional<bool> cbf_cost;       // penalize C_D
  std::optional<bool> comfort_rewards;
  std::vector<std::string> scenarios = {"suspended_obstacle", "narrow_passage", "cluttered_static",
                                        "dynamic_agents"};
  int start_level = 0;
  NetConfig net;

  bool uses_cbf_cost() const { return cbf_cost.value_or(mode == Mode::kP3oCbf); }
  bool uses_comfort() const { return comfort_rewards.value_or(mode == Mode::kP3oCbf); }
  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

// Complete run configuration: {"seed", "name", "env", "train", "eval"}.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string name = "run";
  env::EnvConfig env;
  TrainConfig train;
  nlohmann::json eval = nlohmann::json::object();
};

nlohmann::json run_config_to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// Environment config as used for training in a given mode.
env::EnvConfig training_env_config(const env::EnvConfig& base, const TrainConfig& tc);

struct RolloutBatch {
  int num_envs = 0;
  int horizon = 0;
  // Row index = t * num_envs + e.
  ad::Matrix actor_obs;   // normalized
  ad::Matrix critic_obs;  // normalized
  ad::Matrix actions;
  ad::Matrix log_probs;   // n x 1
  ad::Matrix rewards;     // n x 1 (after shaping)
  ad::Matrix costs;       // n x 3
  ad::Matrix values;      // n x 4, unnormalized
  ad::Matrix next_values; // n x 4, V(s_{t+1}) or V(final obs) at truncation
  std::vector<std::uint8_t> terminal;
  std::vector<std::uint8_t> boundary;
  // Episode bookkeeping.
  std::vector<double> episode_returns;
  std::vector<std::uint8_t> episode_success;

  std::size_t size() const { return terminal.size(); }
};

struct UpdateStats {
  double reward_clip = 0.0;
  double p3o_objective = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  std::array<double, env::kNumCosts> j_cost{};
  std::array<double, env::kNumCosts> violation{};
};

struct IterationMetrics {
  long step = 0;
  double reward = 0.0;  // mean return of episodes finished in the batch
  std::array<double, env::kNumCosts> j_cost{};
  double success_rate = 0.0;
  int level = 0;
  UpdateStats update;
};

// Serialized policy: parameters plus normalizer state.
struct PolicyBundle {
  NetConfig net;
  Dims dims;
  ad::ParamStore params;
  RunningNorm obs_norm;
};

class Trainer {
 public:
  Trainer(RunConfig cfg, std::vector<sim::Scenario> scenarios);

  // One collect + update cycle.
  IterationMetrics iterate();
  // Runs until total_steps; writes metrics.csv / config.json / checkpoints
  // under out_dir when non-empty.
  void train(const std::filesystem::path& out_dir, const std::function<void(const IterationMetrics&)>& on_iter = {});

  RolloutBatch collect();
  UpdateStats update(const RolloutBatch& batch);

  const RunConfig& config() const { return cfg_; }
  ActorCritic& net() { return net_; }
  const RunningNorm& obs_norm() const { return obs_norm_; }
  long steps_done() const { return steps_; }
  int level() const { return curriculum_.level(); }
  // Schedules at the current step.
  double entropy_coef() const;
  double learning_rate() const;
  void set_jobs(int jobs) { jobs_ = std::max(1, jobs); }

  PolicyBundle bundle() const;
  void save(const std::filesystem::path& stem) const;

 private:
  ad::Matrix normalize(const ad::Matrix& critic_rows) const;
  ad::Matrix scaled_values(const ad::Matrix& critic_norm_rows) const;

  RunConfig cfg_;
  env::EnvConfig env_cfg_;
  std::vector<env::SafeLocoEnv> envs_;
  std::vector<env::StepResult> current_;
  std::vector<Rng> action_rngs_;
  std::vector<double> ep_return_;
  std::uint64_t episode_counter_ = 0;
  env::Curriculum curriculum_;
  ActorCritic net_;
  RunningNorm obs_norm_;
  std::array<double, 4> ret_scale_ = {1.0, 1.0, 1.0, 1.0};
  nn::Adam adam_;
  long steps_ = 0;
  long iteration_ = 0;
  int jobs_ = 1;
};

// Checkpoint helpers shared with evaluation.
void save_policy(const std::filesystem::path& stem, const PolicyBundle& b, long step, const nlohmann::json& config);
struct LoadedPolicy {
  PolicyBundle bundle;
  RunConfig config;
  long step = 0;
};
LoadedPolicy load_policy(const std::filesystem::path& path);

}  // namespace safeloco::rl

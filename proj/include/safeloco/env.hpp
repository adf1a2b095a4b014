#pragma once

// CMDP wrapper around the world: observation histories, reward terms, the
// three cost channels (C_safe, C_limit, C_D), episodes and curriculum.

#include <array>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "safeloco/cbf.hpp"
#include "safeloco/rng.hpp"
#include "safeloco/scenario.hpp"
#include "safeloco/world.hpp"

namespace safeloco::env {

using sim::Vec2;

inline constexpr int kPolicyActionDim = 4;  // a_x, a_y, alpha_z, height_rate (normalized to [-1, 1])
inline constexpr int kHistory = 10;
inline constexpr int kProprioWidth = 13;     // v_body(2) omega(1) tilt(2) height(1) prev_action(4) cmd(3)
inline constexpr int kPrivilegedWidth = 2 * sim::kSectors + 7;
inline constexpr int kNumCosts = 3;
enum CostIndex { kCostSafe = 0, kCostLimit = 1, kCostCbf = 2 };

using PolicyAction = std::array<double, kPolicyActionDim>;
using Command = std::array<double, 3>;

// Names of every reward term, in evaluation order. Weights are keyed by these.
const std::vector<std::string>& reward_term_names();

struct RewardConfig {
  std::map<std::string, double> weights;
  double alpha_v = 4.0;
  double alpha_omega = 4.0;
  double alpha_p = 2.0;
  double d_social = 1.2;
  bool comfort_terms = true;  // proxemic, approach velocity/accel, tangential

  RewardConfig();
};

struct RewardInputs {
  Vec2 v_body = Vec2::Zero();
  Vec2 v_world = Vec2::Zero();
  double omega_z = 0.0;
  double v_z = 0.0;                        // height rate
  Vec2 accel_world = Vec2::Zero();
  Command command = {0.0, 0.0, 0.0};
  PolicyAction action{};                   // a_t
  PolicyAction prev_action{};              // a_{t-1}
  PolicyAction prev_prev_action{};         // a_{t-2}
  std::array<double, sim::kActionDim> physical_action{};
  // Outward normal of the nearest obstacle surface and the unit vector from
  // the nearest obstacle point to the robot; absent with no obstacle in range.
  std::optional<Vec2> eta;
  std::optional<Vec2> d_obs_hat;
  std::optional<double> d_human;           // clearance to the nearest agent
};

struct RewardBreakdown {
  double total = 0.0;
  std::map<std::string, double> terms;  // weighted contributions; sum == total
};

RewardBreakdown compute_reward(const RewardInputs& in, const RewardConfig& cfg);

struct CostConfig {
  double d_safe = 0.8;
};

struct CostInputs {
  double d_obs = 0.0;          // exact clearance
  int limit_violations = 0;    // action components outside [-1, 1]
  double cbf_cost = 0.0;
};

std::array<double, kNumCosts> compute_costs(const CostInputs& in, const CostConfig& cfg);

struct CurriculumConfig {
  double promote = 0.8;
  double demote = 0.3;
  int window = 100;
  int max_level = 2;
  std::array<double, 3> agent_speed_scale = {0.5, 0.75, 1.0};
};

// Pure promotion rule.
int curriculum_update(int level, double recent_success_rate, const CurriculumConfig& cfg);

class Curriculum {
 public:
  explicit Curriculum(CurriculumConfig cfg = {}, int level = 0) : cfg_(cfg), level_(level) {}
  // Records an episode outcome; once the window is full, applies the rule and
  // clears the window if the level changed. Returns the (possibly new) level.
  int record(bool success);
  int level() const { return level_; }
  void set_level(int level) { level_ = level; }
  double window_rate() const;
  std::size_t window_size() const { return recent_.size(); }
  const CurriculumConfig& config() const { return cfg_; }

 private:
  CurriculumConfig cfg_;
  int level_ = 0;
  std::deque<bool> recent_;
};

struct CommandSamplerConfig {
  std::array<double, 2> vx = {0.0, 1.0};
  std::array<double, 2> vy = {-0.3, 0.3};
  std::array<double, 2> wz = {-0.5, 0.5};
  int resample_period = 100;
};

class CommandSampler {
 public:
  explicit CommandSampler(CommandSamplerConfig cfg = {}) : cfg_(cfg) {}
  // Draws a new command every resample_period steps (including step 0).
  Command next(int step, Rng& rng);
  static Command clamp(Command c, const CommandSamplerConfig& cfg);
  const CommandSamplerConfig& config() const { return cfg_; }

 private:
  CommandSamplerConfig cfg_;
  Command current_ = {0.0, 0.0, 0.0};
};

struct EnvConfig {
  double dt = 0.05;
  sim::RobotLimits limits;
  sim::LidarConfig lidar;
  cbf::CbfConfig cbf;
  RewardConfig reward;
  CostConfig cost;
  CurriculumConfig curriculum;
  CommandSamplerConfig commands;
  double yaw_gain = 1.0;                 // goal-heading command gain
  std::vector<int> masked_rings;         // rings forced to max_range (sensor ablation)
  bool training = false;                 // enables train_drop_prob
  int level = 2;                         // initial curriculum level

  int scan_width() const { return lidar.n_rays(); }
  int actor_obs_dim() const { return kHistory * (kProprioWidth + scan_width()); }
  int critic_obs_dim() const { return actor_obs_dim() + kPrivilegedWidth; }
};

nlohmann::json env_config_to_json(const EnvConfig& c);
// Overlays keys from j onto base; unknown keys raise ConfigError with the key path.
EnvConfig env_config_from_json(const nlohmann::json& j, EnvConfig base = {});
nlohmann::json cbf_config_to_json(const cbf::CbfConfig& c);
cbf::CbfConfig cbf_config_from_json(const nlohmann::json& j, cbf::CbfConfig base = {});

struct ProprioRecord {
  std::array<double, kProprioWidth> values{};
};

// Fixed-length FIFO of per-step actor records, oldest first.
class ObsHistory {
 public:
  ObsHistory() = default;
  void reset(const ProprioRecord& proprio, std::vector<double> scan);
  void push(const ProprioRecord& proprio, std::vector<double> scan);
  // [proprio_0 .. proprio_9 | scan_0 .. scan_9], oldest first.
  std::vector<double> flatten() const;
  std::size_t size() const { return proprio_.size(); }

 private:
  std::deque<ProprioRecord> proprio_;
  std::deque<std::vector<double>> scans_;
};

struct StepResult {
  std::vector<double> actor_obs;
  std::vector<double> critic_obs;
  double reward = 0.0;
  std::array<double, kNumCosts> costs{};
  bool terminated = false;  // collision or fault
  bool truncated = false;   // time limit or goal reached
  std::map<std::string, double> info;
};

class SafeLocoEnv {
 public:
  SafeLocoEnv(EnvConfig cfg, std::vector<sim::Scenario> scenarios);

  // Picks a scenario from the list with the seed's stream when there are
  // several; otherwise uses the only one.
  StepResult reset(std::uint64_t seed);
  StepResult reset(std::size_t scenario_index, std::uint64_t seed);
  // action: normalized policy action; components beyond [-1, 1] are clamped
  // and counted as limit violations. Throws UsageError when the episode has
  // ended or reset was never called.
  StepResult step(std::span<const double> action);

  const EnvConfig& config() const { return cfg_; }
  EnvConfig& mutable_config() { return cfg_; }
  const sim::RobotBody& robot() const { return robot_; }
  const sim::WorldState& world() const { return world_; }
  const sim::Scenario& scenario() const { return scenarios_[scenario_index_]; }
  std::size_t scenario_index() const { return scenario_index_; }
  const std::vector<sim::Scenario>& scenarios() const { return scenarios_; }
  const sim::LidarScan& scan() const { return scan_; }
  const cbf::BarrierEval& barrier() const { return barrier_; }
  Command command() const { return command_; }
  int step_count() const { return steps_; }
  bool done() const { return done_; }
  bool goal_reached() const { return goal_reached_; }
  double mean_tracking_error() const { return steps_ > 0 ? tracking_error_sum_ / steps_ : 0.0; }

  Curriculum& curriculum() { return curriculum_; }
  const Curriculum& curriculum() const { return curriculum_; }

  double speed_scale() const;
  // Exact clearance and (center-based) barrier value from scene geometry.
  double exact_clearance() const;
  double exact_barrier() const;

 private:
  void refresh_scan();
  void update_command();
  ProprioRecord proprio_record() const;
  std::vector<double> privileged() const;
  StepResult observe() const;
  bool in_goal() const;

  EnvConfig cfg_;
  std::vector<sim::Scenario> scenarios_;
  std::size_t scenario_index_ = 0;
  cbf::LinearModel model_;
  Curriculum curriculum_;
  CommandSampler sampler_;

  Rng rng_;
  sim::WorldState world_;
  sim::RobotBody robot_;
  sim::LidarScan scan_;
  cbf::BarrierEval barrier_;
  ObsHistory history_;
  Command command_ = {0.0, 0.0, 0.0};
  double yaw_offset_ = 0.0;
  PolicyAction prev_action_{};
  PolicyAction prev_prev_action_{};
  std::array<bool, kPolicyActionDim> last_violation_{};
  int steps_ = 0;
  bool started_ = false;
  bool done_ = false;
  bool goal_reached_ = false;
  bool collided_ = false;
  double tracking_error_sum_ = 0.0;
};

}  // namespace safeloco::env

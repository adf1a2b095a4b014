#include "safeloco/env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <initializer_list>

#include "safeloco/errors.hpp"

namespace safeloco::env {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kGravity = 9.81;

double wrap_angle(double a) {
  if (a >= -kPi && a < kPi) return a;  // keep in-range angles bit-exact
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0.0) a += 2.0 * kPi;
  return a - kPi;
}

Vec2 to_body(const Vec2& v, double yaw) {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  return {c * v.x() + s * v.y(), -s * v.x() + c * v.y()};
}

double sq_norm(const PolicyAction& a) {
  double s = 0.0;
  for (double x : a) s += x * x;
  return s;
}

}  // namespace

const std::vector<std::string>& reward_term_names() {
  static const std::vector<std::string> names = {
      "velocity_tracking",      "yaw_tracking",        "z_velocity",        "action_magnitude",
      "action_smoothing",       "action_smoothing_rate", "proxemic_comfort", "safe_approach_velocity",
      "safe_approach_accel",    "tangential_avoidance",
  };
  return names;
}

RewardConfig::RewardConfig()
    : weights{{"velocity_tracking", 2.0},        {"yaw_tracking", 0.5},
              {"z_velocity", -3e-4},             {"action_magnitude", -1e-6},
              {"action_smoothing", -5e-3},       {"action_smoothing_rate", -1e-5},
              {"proxemic_comfort", 1.5},         {"safe_approach_velocity", -1.0},
              {"safe_approach_accel", -1.0},     {"tangential_avoidance", 1.0}} {}

RewardBreakdown compute_reward(const RewardInputs& in, const RewardConfig& cfg) {
  std::map<std::string, double> raw;
  const Vec2 v_cmd(in.command[0], in.command[1]);
  raw["velocity_tracking"] = std::exp(-cfg.alpha_v * (in.v_body - v_cmd).squaredNorm());
  const double dw = in.omega_z - in.command[2];
  raw["yaw_tracking"] = std::exp(-cfg.alpha_omega * dw * dw);
  raw["z_velocity"] = in.v_z * in.v_z;
  double mag = 0.0;
  for (double x : in.physical_action) mag += x * x;
  raw["action_magnitude"] = mag;
  PolicyAction d1{};
  PolicyAction d2{};
  for (std::size_t i = 0; i < d1.size(); ++i) {
    d1[i] = in.prev_action[i] - in.action[i];
    d2[i] = in.prev_prev_action[i] - 2.0 * in.prev_action[i] + in.action[i];
  }
  raw["action_smoothing"] = sq_norm(d1);
  raw["action_smoothing_rate"] = sq_norm(d2);

  double proxemic = 0.0;
  double approach_v = 0.0;
  double approach_a = 0.0;
  double tangential = 1.0;
  if (in.d_human) {
    const double e = *in.d_human - cfg.d_social;
    proxemic = std::exp(-cfg.alpha_p * e * e);
  }
  if (in.eta) {
    approach_v = std::max(0.0, -in.v_world.dot(*in.eta));
    approach_a = std::max(0.0, -in.accel_world.dot(*in.eta));
  }
  if (in.d_obs_hat) {
    const double speed = in.v_world.norm();
    const Vec2 v_hat = speed > 1e-9 ? Vec2(in.v_world / speed) : Vec2::Zero();
    tangential = 1.0 - std::max(0.0, v_hat.dot(-*in.d_obs_hat));
  }
  raw["proxemic_comfort"] = proxemic;
  raw["safe_approach_velocity"] = approach_v;
  raw["safe_approach_accel"] = approach_a;
  raw["tangential_avoidance"] = tangential;

  static const std::array<const char*, 4> comfort = {"proxemic_comfort", "safe_approach_velocity",
                                                     "safe_approach_accel", "tangential_avoidance"};
  RewardBreakdown out;
  for (const auto& name : reward_term_names()) {
    double w = cfg.weights.at(name);
    if (!cfg.comfort_terms && std::find(comfort.begin(), comfort.end(), name) != comfort.end()) w = 0.0;
    out.terms[name] = w * raw[name];
  }
  for (const auto& name : reward_term_names()) out.total += out.terms[name];
  return out;
}

std::array<double, kNumCosts> compute_costs(const CostInputs& in, const CostConfig& cfg) {
  return {in.d_obs < cfg.d_safe ? 1.0 : 0.0, static_cast<double>(std::max(0, in.limit_violations)),
          std::max(0.0, in.cbf_cost)};
}

int curriculum_update(int level, double rate, const CurriculumConfig& cfg) {
  if (rate >= cfg.promote) return std::min(level + 1, cfg.max_level);
  if (rate < cfg.demote) return std::max(level - 1, 0);
  return level;
}

int Curriculum::record(bool success) {
  recent_.push_back(success);
  while (static_cast<int>(recent_.size()) > cfg_.window) recent_.pop_front();
  if (static_cast<int>(recent_.size()) == cfg_.window) {
    const int next = curriculum_update(level_, window_rate(), cfg_);
    if (next != level_) {
      level_ = next;
      recent_.clear();
    }
  }
  return level_;
}

double Curriculum::window_rate() const {
  if (recent_.empty()) return 0.0;
  return static_cast<double>(std::count(recent_.begin(), recent_.end(), true)) / static_cast<double>(recent_.size());
}

Command CommandSampler::clamp(Command c, const CommandSamplerConfig& cfg) {
  c[0] = std::clamp(c[0], cfg.vx[0], cfg.vx[1]);
  c[1] = std::clamp(c[1], cfg.vy[0], cfg.vy[1]);
  c[2] = std::clamp(c[2], cfg.wz[0], cfg.wz[1]);
  return c;
}

Command CommandSampler::next(int step, Rng& rng) {
  if (cfg_.resample_period <= 0 || step % cfg_.resample_period == 0)
    current_ = {rng.uniform(cfg_.vx[0], cfg_.vx[1]), rng.uniform(cfg_.vy[0], cfg_.vy[1]),
                rng.uniform(cfg_.wz[0], cfg_.wz[1])};
  return current_;
}

void ObsHistory::reset(const ProprioRecord& proprio, std::vector<double> scan) {
  proprio_.assign(kHistory, proprio);
  scans_.assign(kHistory, std::move(scan));
}

void ObsHistory::push(const ProprioRecord& proprio, std::vector<double> scan) {
  if (proprio_.empty()) {
    reset(proprio, std::move(scan));
    return;
  }
  proprio_.pop_front();
  scans_.pop_front();
  proprio_.push_back(proprio);
  scans_.push_back(std::move(scan));
}

std::vector<double> ObsHistory::flatten() const {
  std::vector<double> out;
  std::size_t scan_w = scans_.empty() ? 0 : scans_.front().size();
  out.reserve(proprio_.size() * (kProprioWidth + scan_w));
  for (const auto& p : proprio_) out.insert(out.end(), p.values.begin(), p.values.end());
  for (const auto& s : scans_) out.insert(out.end(), s.begin(), s.end());
  return out;
}

SafeLocoEnv::SafeLocoEnv(EnvConfig cfg, std::vector<sim::Scenario> scenarios)
    : cfg_(std::move(cfg)),
      scenarios_(std::move(scenarios)),
      model_(cbf::LinearModel::double_integrator(cfg_.dt)),
      curriculum_(cfg_.curriculum, cfg_.level),
      sampler_(cfg_.commands) {
  if (scenarios_.empty()) throw ConfigError("environment needs at least one scenario");
  cfg_.cbf.validate();
  if (!(cfg_.dt > 0.0)) throw ConfigError("env.dt must be positive");
  for (int r : cfg_.masked_rings)
    if (r < 0 || r >= static_cast<int>(cfg_.lidar.rings.size())) throw ConfigError("env.masked_rings out of range");
}

double SafeLocoEnv::speed_scale() const {
  const int lvl = std::clamp(curriculum_.level(), 0, 2);
  return cfg_.curriculum.agent_speed_scale[static_cast<std::size_t>(lvl)];
}

StepResult SafeLocoEnv::reset(std::uint64_t seed) {
  Rng pick(derive_seed(seed, 0x5ce4a210));
  const std::size_t idx = scenarios_.size() > 1 ? static_cast<std::size_t>(pick.below(scenarios_.size())) : 0;
  return reset(idx, seed);
}

StepResult SafeLocoEnv::reset(std::size_t scenario_index, std::uint64_t seed) {
  if (scenario_index >= scenarios_.size()) throw UsageError("scenario index out of range");
  scenario_index_ = scenario_index;
  rng_.reseed(seed);
  sim::InstanceOptions opt;
  opt.level = curriculum_.level();
  opt.training = cfg_.training;
  Rng layout_rng(derive_seed(seed, 1));
  world_ = sim::instantiate(scenario(), opt, layout_rng);
  world_.time = 0.0;
  sim::place_agents(world_, speed_scale());
  robot_ = sim::sample_start(scenario(), layout_rng);
  yaw_offset_ = layout_rng.uniform(-1.0, 1.0) * cfg_.lidar.yaw_offset_max;
  sampler_ = CommandSampler(cfg_.commands);

  steps_ = 0;
  started_ = true;
  done_ = false;
  goal_reached_ = false;
  collided_ = false;
  tracking_error_sum_ = 0.0;
  prev_action_ = {};
  prev_prev_action_ = {};
  last_violation_ = {};

  update_command();
  refresh_scan();
  history_.reset(proprio_record(), scan_.ranges);
  StepResult r = observe();
  r.info["d_obs"] = exact_clearance();
  r.info["h_d"] = barrier_.h;
  return r;
}

void SafeLocoEnv::refresh_scan() {
  scan_ = sim::raycast(world_, robot_, cfg_.lidar, yaw_offset_, &rng_);
  for (int r : cfg_.masked_rings)
    for (int a = 0; a < scan_.n_azimuth; ++a)
      scan_.ranges[static_cast<std::size_t>(r * scan_.n_azimuth + a)] = scan_.max_range;
  barrier_ = cbf::nearest_obstacle(scan_, robot_, cfg_.cbf);
}

void SafeLocoEnv::update_command() {
  const auto& goal = scenario().goal;
  if (goal.kind == sim::Goal::Kind::kCommand) {
    if (goal.profile.empty()) {
      command_ = sampler_.next(steps_, rng_);
    } else {
      int t = steps_;
      command_ = goal.profile.back().cmd;
      for (const auto& seg : goal.profile) {
        if (t < seg.steps) {
          command_ = seg.cmd;
          break;
        }
        t -= seg.steps;
      }
    }
    command_ = CommandSampler::clamp(command_, cfg_.commands);
    return;
  }
  const Vec2 target = 0.5 * (goal.region.lo + goal.region.hi);
  const Vec2 e = target - robot_.p;
  const double dist = e.norm();
  if (dist < 1e-9) {
    command_ = {0.0, 0.0, 0.0};
    return;
  }
  // The planar part is not clipped to the sampler ranges: clipping per axis
  // would let the robot shrink its own command by turning away from the goal.
  const Vec2 v_body = to_body(e / dist * goal.cmd_speed, robot_.yaw);
  const double heading_err = wrap_angle(std::atan2(e.y(), e.x()) - robot_.yaw);
  const auto& wz = cfg_.commands.wz;
  command_ = {v_body.x(), v_body.y(), std::clamp(cfg_.yaw_gain * heading_err, wz[0], wz[1])};
}

ProprioRecord SafeLocoEnv::proprio_record() const {
  ProprioRecord r;
  const Vec2 vb = to_body(robot_.v, robot_.yaw);
  const Vec2 tilt = to_body(robot_.accel_cmd, robot_.yaw) / kGravity;
  r.values = {vb.x(),          vb.y(),          robot_.omega_z,  tilt.x(),       tilt.y(),
              robot_.height,   prev_action_[0], prev_action_[1], prev_action_[2], prev_action_[3],
              command_[0],     command_[1],     command_[2]};
  return r;
}

double SafeLocoEnv::exact_clearance() const { return sim::nearest_clearance(world_, robot_, cfg_.limits); }

double SafeLocoEnv::exact_barrier() const {
  return exact_clearance() + cfg_.limits.radius - cfg_.cbf.d_min;
}

std::vector<double> SafeLocoEnv::privileged() const {
  std::vector<double> out;
  out.reserve(kPrivilegedWidth);
  const auto sectors =
      sim::privileged_obstacle_info(world_, robot_, cfg_.limits, cfg_.lidar.max_range, speed_scale());
  for (const auto& s : sectors) {
    out.push_back(s.distance);
    out.push_back(s.closing_speed);
  }
  out.push_back(collided_ ? 1.0 : 0.0);
  out.push_back(exact_barrier());
  out.push_back(exact_clearance());
  for (bool v : last_violation_) out.push_back(v ? 1.0 : 0.0);
  return out;
}

StepResult SafeLocoEnv::observe() const {
  StepResult r;
  r.actor_obs = history_.flatten();
  r.critic_obs = r.actor_obs;
  const auto priv = privileged();
  r.critic_obs.insert(r.critic_obs.end(), priv.begin(), priv.end());
  return r;
}

bool SafeLocoEnv::in_goal() const {
  const auto& g = scenario().goal;
  if (g.kind != sim::Goal::Kind::kRegion) return false;
  return (robot_.p.array() >= g.region.lo.array()).all() && (robot_.p.array() <= g.region.hi.array()).all();
}

StepResult SafeLocoEnv::step(std::span<const double> action) {
  if (!started_) throw UsageError("step() before reset()");
  if (done_) throw UsageError("step() after the episode ended; call reset()");
  if (action.size() != kPolicyActionDim) throw UsageError("action must have 4 components");

  bool fault = false;
  PolicyAction act{};
  int violations = 0;
  for (std::size_t i = 0; i < act.size(); ++i) {
    if (!std::isfinite(action[i])) fault = true;
    last_violation_[i] = std::abs(action[i]) > 1.0;
    violations += last_violation_[i] ? 1 : 0;
    act[i] = std::isfinite(action[i]) ? std::clamp(action[i], -1.0, 1.0) : 0.0;
  }

  const auto& lim = cfg_.limits;
  sim::Action phys = {act[0] * lim.accel_max, act[1] * lim.accel_max, act[2] * lim.alpha_max,
                      act[3] * lim.height_rate_max, 0.0};
  if (fault) phys[0] = std::numeric_limits<double>::quiet_NaN();

  // C_D is evaluated at (s_k, u_k) against the barrier of the current scan.
  const Vec2 accel_world = [&] {
    const double c = std::cos(robot_.yaw);
    const double s = std::sin(robot_.yaw);
    return Vec2(c * phys[0] - s * phys[1], s * phys[0] + c * phys[1]);
  }();
  double c_cbf = 0.0;
  if (!fault) {
    const std::array<double, 4> state = {robot_.p.x(), robot_.p.y(), robot_.v.x(), robot_.v.y()};
    const std::array<double, 2> control = {accel_world.x(), accel_world.y()};
    c_cbf = cbf::cbf_cost(model_, cfg_.cbf, barrier_, state, control);
  }

  const auto dyn = sim::step_dynamics(robot_, phys, cfg_.dt, lim);
  StepResult out;
  if (dyn.fault) {
    done_ = true;
    out = observe();
    out.terminated = true;
    out.costs = {1.0, static_cast<double>(kPolicyActionDim), 0.0};
    out.info["fault"] = 1.0;
    out.info["success"] = 0.0;
    return out;
  }

  world_ = sim::advance_agents(std::move(world_), cfg_.dt, speed_scale());
  robot_ = dyn.body;
  ++steps_;
  refresh_scan();
  collided_ = sim::collision_check(world_, robot_, lim);

  // Reward on the post-transition state.
  RewardInputs ri;
  ri.v_body = to_body(robot_.v, robot_.yaw);
  ri.v_world = robot_.v;
  ri.omega_z = robot_.omega_z;
  ri.v_z = robot_.height_rate;
  ri.accel_world = robot_.accel_cmd;
  ri.command = command_;
  ri.action = act;
  ri.prev_action = prev_action_;
  ri.prev_prev_action = prev_prev_action_;
  ri.physical_action = phys;
  if (barrier_.active) {
    ri.eta = barrier_.eta;
    ri.d_obs_hat = barrier_.eta;
  }
  double d_human = std::numeric_limits<double>::infinity();
  for (const auto& o : world_.obstacles)
    if (o.kind == sim::ObstacleKind::kAgent)
      d_human = std::min(d_human, std::max(0.0, sim::distance_to(o.footprint, robot_.p) - lim.radius));
  if (std::isfinite(d_human)) ri.d_human = d_human;
  const RewardBreakdown rb = compute_reward(ri, cfg_.reward);

  const double d_obs = exact_clearance();
  const auto costs = compute_costs({d_obs, violations, c_cbf}, cfg_.cost);

  const Vec2 v_cmd(command_[0], command_[1]);
  tracking_error_sum_ += (ri.v_body - v_cmd).norm();

  prev_prev_action_ = prev_action_;
  prev_action_ = act;
  if (in_goal()) goal_reached_ = true;
  update_command();
  history_.push(proprio_record(), scan_.ranges);

  out = observe();
  out.reward = rb.total;
  out.costs = costs;
  out.terminated = collided_;
  out.truncated = !collided_ && (goal_reached_ || steps_ >= scenario().episode_length);
  done_ = out.terminated || out.truncated;

  bool success = false;
  if (done_ && !collided_) {
    if (scenario().success_rule == "reach_goal")
      success = goal_reached_;
    else
      success = mean_tracking_error() < 0.3;
  }
  for (const auto& [name, v] : rb.terms) out.info["r/" + name] = v;
  out.info["d_obs"] = d_obs;
  out.info["h_d"] = barrier_.h;
  out.info["collision"] = collided_ ? 1.0 : 0.0;
  out.info["goal_reached"] = goal_reached_ ? 1.0 : 0.0;
  out.info["success"] = success ? 1.0 : 0.0;
  out.info["tracking_error"] = (ri.v_body - v_cmd).norm();
  return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where + "." + key + ": unknown key");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

}  // namespace

json cbf_config_to_json(const cbf::CbfConfig& c) {
  return {{"gamma_cbf", c.gamma_cbf},
          {"d_min", c.d_min},
          {"normal_estimation", c.normal_estimation == cbf::NormalEstimation::kNearest ? "nearest" : "plane_fit_k"},
          {"plane_fit_k", c.plane_fit_k}};
}

cbf::CbfConfig cbf_config_from_json(const json& j, cbf::CbfConfig c) {
  check_keys(j, {"gamma_cbf", "d_min", "normal_estimation", "plane_fit_k"}, "cbf");
  read(j, "gamma_cbf", c.gamma_cbf, "cbf");
  read(j, "d_min", c.d_min, "cbf");
  read(j, "plane_fit_k", c.plane_fit_k, "cbf");
  if (j.contains("normal_estimation")) {
    const auto s = j["normal_estimation"].get<std::string>();
    if (s == "nearest")
      c.normal_estimation = cbf::NormalEstimation::kNearest;
    else if (s == "plane_fit_k")
      c.normal_estimation = cbf::NormalEstimation::kPlaneFit;
    else
      throw ConfigError("cbf.normal_estimation: expected 'nearest' or 'plane_fit_k'");
  }
  c.validate();
  return c;
}

json env_config_to_json(const EnvConfig& c) {
  const auto& l = c.limits;
  return {
      {"dt", c.dt},
      {"limits",
       {{"h_min", l.h_min}, {"h_max", l.h_max}, {"v_max", l.v_max}, {"omega_max", l.omega_max},
        {"radius", l.radius}, {"accel_max", l.accel_max}, {"alpha_max", l.alpha_max},
        {"height_rate_max", l.height_rate_max}, {"h_stand", l.h_stand}, {"crouch_speed_frac", l.crouch_speed_frac}}},
      {"lidar",
       {{"n_azimuth", c.lidar.n_azimuth}, {"rings", c.lidar.rings}, {"max_range", c.lidar.max_range},
        {"range_noise_std", c.lidar.range_noise_std}, {"yaw_offset_max", c.lidar.yaw_offset_max}}},
      {"reward",
       {{"weights", c.reward.weights}, {"alpha_v", c.reward.alpha_v}, {"alpha_omega", c.reward.alpha_omega},
        {"alpha_p", c.reward.alpha_p}, {"d_social", c.reward.d_social}, {"comfort_terms", c.reward.comfort_terms}}},
      {"d_safe", c.cost.d_safe},
      {"curriculum",
       {{"promote", c.curriculum.promote}, {"demote", c.curriculum.demote}, {"window", c.curriculum.window},
        {"max_level", c.curriculum.max_level}, {"agent_speed_scale", c.curriculum.agent_speed_scale}}},
      {"commands",
       {{"vx", c.commands.vx}, {"vy", c.commands.vy}, {"wz", c.commands.wz},
        {"resample_period", c.commands.resample_period}}},
      {"yaw_gain", c.yaw_gain},
      {"masked_rings", c.masked_rings},
      {"level", c.level},
  };
}

EnvConfig env_config_from_json(const json& j, EnvConfig c) {
  check_keys(j, {"dt", "limits", "lidar", "reward", "d_safe", "curriculum", "commands", "yaw_gain", "masked_rings",
                 "level", "training"},
             "env");
  read(j, "dt", c.dt, "env");
  if (j.contains("limits")) {
    const auto& l = j["limits"];
    check_keys(l, {"h_min", "h_max", "v_max", "omega_max", "radius", "accel_max", "alpha_max", "height_rate_max",
                   "h_stand", "crouch_speed_frac"},
               "env.limits");
    auto& L = c.limits;
    read(l, "h_min", L.h_min, "env.limits");
    read(l, "h_max", L.h_max, "env.limits");
    read(l, "v_max", L.v_max, "env.limits");
    read(l, "omega_max", L.omega_max, "env.limits");
    read(l, "radius", L.radius, "env.limits");
    read(l, "accel_max", L.accel_max, "env.limits");
    read(l, "alpha_max", L.alpha_max, "env.limits");
    read(l, "height_rate_max", L.height_rate_max, "env.limits");
    read(l, "h_stand", L.h_stand, "env.limits");
    read(l, "crouch_speed_frac", L.crouch_speed_frac, "env.limits");
    if (!(L.h_min < L.h_max)) throw ConfigError("env.limits: h_min must be < h_max");
    if (!(L.crouch_speed_frac > 0.0 && L.crouch_speed_frac <= 1.0))
      throw ConfigError("env.limits.crouch_speed_frac must be in (0, 1]");
  }
  if (j.contains("lidar")) {
    const auto& l = j["lidar"];
    check_keys(l, {"n_azimuth", "rings", "max_range", "range_noise_std", "yaw_offset_max"}, "env.lidar");
    read(l, "n_azimuth", c.lidar.n_azimuth, "env.lidar");
    read(l, "rings", c.lidar.rings, "env.lidar");
    read(l, "max_range", c.lidar.max_range, "env.lidar");
    read(l, "range_noise_std", c.lidar.range_noise_std, "env.lidar");
    read(l, "yaw_offset_max", c.lidar.yaw_offset_max, "env.lidar");
    if (c.lidar.n_azimuth < 8) throw ConfigError("env.lidar.n_azimuth must be >= 8");
    if (!(c.lidar.max_range > 0.0)) throw ConfigError("env.lidar.max_range must be positive");
    if (c.lidar.rings.empty()) throw ConfigError("env.lidar.rings must not be empty");
  }
  if (j.contains("reward")) {
    const auto& r = j["reward"];
    check_keys(r, {"weights", "alpha_v", "alpha_omega", "alpha_p", "d_social", "comfort_terms"}, "env.reward");
    if (r.contains("weights")) {
      const auto& w = r["weights"];
      if (!w.is_object()) throw ConfigError("env.reward.weights: expected an object");
      for (const auto& [name, val] : w.items()) {
        if (!c.reward.weights.count(name)) throw ConfigError("env.reward.weights." + name + ": unknown key");
        if (!val.is_number()) throw ConfigError("env.reward.weights." + name + ": wrong type");
        c.reward.weights[name] = val.get<double>();
      }
    }
    read(r, "alpha_v", c.reward.alpha_v, "env.reward");
    read(r, "alpha_omega", c.reward.alpha_omega, "env.reward");
    read(r, "alpha_p", c.reward.alpha_p, "env.reward");
    read(r, "d_social", c.reward.d_social, "env.reward");
    read(r, "comfort_terms", c.reward.comfort_terms, "env.reward");
  }
  read(j, "d_safe", c.cost.d_safe, "env");
  if (j.contains("curriculum")) {
    const auto& cu = j["curriculum"];
    check_keys(cu, {"promote", "demote", "window", "max_level", "agent_speed_scale"}, "env.curriculum");
    read(cu, "promote", c.curriculum.promote, "env.curriculum");
    read(cu, "demote", c.curriculum.demote, "env.curriculum");
    read(cu, "window", c.curriculum.window, "env.curriculum");
    read(cu, "max_level", c.curriculum.max_level, "env.curriculum");
    read(cu, "agent_speed_scale", c.curriculum.agent_speed_scale, "env.curriculum");
    if (c.curriculum.window <= 0) throw ConfigError("env.curriculum.window must be positive");
    if (c.curriculum.max_level < 0 || c.curriculum.max_level > 2) throw ConfigError("env.curriculum.max_level must be in [0, 2]");
  }
  if (j.contains("commands")) {
    const auto& cm = j["commands"];
    check_keys(cm, {"vx", "vy", "wz", "resample_period"}, "env.commands");
    read(cm, "vx", c.commands.vx, "env.commands");
    read(cm, "vy", c.commands.vy, "env.commands");
    read(cm, "wz", c.commands.wz, "env.commands");
    read(cm, "resample_period", c.commands.resample_period, "env.commands");
  }
  read(j, "yaw_gain", c.yaw_gain, "env");
  read(j, "masked_rings", c.masked_rings, "env");
  read(j, "level", c.level, "env");
  read(j, "training", c.training, "env");
  if (!(c.dt > 0.0)) throw ConfigError("env.dt must be positive");
  return c;
}

}  // namespace safeloco::env

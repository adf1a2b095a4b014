#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "safeloco/world.hpp"

namespace safeloco::sim {

struct CommandSegment {
  int steps = 0;
  std::array<double, 3> cmd = {0.0, 0.0, 0.0};  // v_x, v_y (body frame), omega_z
};

struct Goal {
  enum class Kind { kRegion, kCommand };
  Kind kind = Kind::kRegion;
  Box region;                            // kRegion: success once the robot centre enters
  double cmd_speed = 1.0;                // kRegion: commanded speed toward the region
  std::vector<CommandSegment> profile;   // kCommand: played back in order; sampled if empty
};

struct StartPose {
  Vec2 p = Vec2::Zero();
  double yaw = 0.0;
  double height = 0.8;
  Vec2 p_jitter = Vec2::Zero();  // uniform half-widths
  double yaw_jitter = 0.0;
};

struct Scenario {
  std::string name;
  Box bounds;
  std::vector<Obstacle> obstacles;
  StartPose start;
  Goal goal;
  int episode_length = 400;
  std::string success_rule = "reach_goal";  // "reach_goal" | "track_command"
  // Per-obstacle probability of being dropped on training resets; aligned with
  // obstacles. Empty means never dropped.
  std::vector<double> train_drop_prob;
};

inline const std::vector<std::string>& builtin_scenario_names() {
  static const std::vector<std::string> names = {"suspended_obstacle", "narrow_passage", "cluttered_static",
                                                 "dynamic_agents"};
  return names;
}

Scenario scenario_from_json(const nlohmann::json& j);
nlohmann::json scenario_to_json(const Scenario& s);

// Directory holding the bundled scenario files; SAFELOCO_SCENARIO_DIR
// overrides the compiled-in default.
std::filesystem::path default_scenario_dir();

// name_or_path: a bundled name (looked up in dir) or a path to a JSON file.
// Throws MissingArtifact when not found, ConfigError when malformed.
Scenario load_scenario(const std::string& name_or_path, const std::filesystem::path& dir = default_scenario_dir());

struct InstanceOptions {
  int level = 2;            // obstacles with min_level > level are omitted
  bool training = false;    // applies train_drop_prob
};

// Concrete world for one episode: filters by level, applies per-obstacle
// position jitter and random agent phases drawn from rng.
WorldState instantiate(const Scenario& s, const InstanceOptions& opt, Rng& rng);
// Start pose with jitter drawn from rng.
RobotBody sample_start(const Scenario& s, Rng& rng);

}  // namespace safeloco::sim

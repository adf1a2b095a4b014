#pragma once

// 2.5-D world: a disc robot with controllable body height, obstacles with
// planar footprints and vertical extents, ring LiDAR, waypoint agents.

#include <Eigen/Core>

#include <array>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "safeloco/rng.hpp"

namespace safeloco::sim {

using Vec2 = Eigen::Vector2d;

struct RobotLimits {
  double h_min = 0.4;
  double h_max = 0.8;
  double v_max = 1.5;
  double omega_max = 1.5;
  double radius = 0.3;
  double accel_max = 2.0;
  double alpha_max = 2.0;
  double height_rate_max = 0.5;
  // Below h_stand the speed cap shrinks linearly toward crouch_speed_frac * v_max
  // at h_min. 0 < crouch_speed_frac <= 1; set to 1 to disable.
  double h_stand = 0.8;
  double crouch_speed_frac = 0.2;

  double speed_cap(double height) const;
};

struct RobotBody {
  Vec2 p = Vec2::Zero();
  Vec2 v = Vec2::Zero();
  double yaw = 0.0;
  double omega_z = 0.0;
  double height = 0.8;
  double height_rate = 0.0;
  Vec2 accel_cmd = Vec2::Zero();  // world frame, last applied
};

inline constexpr int kActionDim = 5;  // a_x, a_y (body frame), alpha_z, height_rate, reserved
using Action = std::array<double, kActionDim>;

// Clamps each component to its bound; returns the number of components that
// were outside their bound before clamping.
int clamp_action(Action& a, const RobotLimits& lim);

struct DynamicsResult {
  RobotBody body;
  bool fault = false;  // non-finite action; body returned unchanged
};

// Semi-implicit Euler, clamps applied after integration.
DynamicsResult step_dynamics(const RobotBody& robot, Action action, double dt, const RobotLimits& lim);

enum class ObstacleKind { kPillar, kSlab, kWall, kAgent };

struct Circle {
  Vec2 center = Vec2::Zero();
  double radius = 0.0;
};
struct Box {
  Vec2 lo = Vec2::Zero();
  Vec2 hi = Vec2::Zero();
};
using Footprint = std::variant<Circle, Box>;

struct Obstacle {
  ObstacleKind kind = ObstacleKind::kPillar;
  Footprint footprint = Circle{};
  double z_lo = 0.0;
  double z_hi = 2.0;
  // Agents: closed waypoint loop traversed at constant speed.
  std::vector<Vec2> path;
  double speed = 0.0;
  double phase = 0.0;     // initial arc length along the loop, m
  int min_level = 0;      // curriculum level at which the obstacle appears
  double jitter = 0.0;    // uniform position jitter half-width applied at reset, m

  bool overlaps_band(double lo, double hi) const { return z_lo < hi && z_hi > lo; }
};

std::string to_string(ObstacleKind k);
ObstacleKind obstacle_kind_from_string(const std::string& s);

// Closest point of a footprint to q (q itself when inside).
Vec2 closest_point(const Footprint& f, const Vec2& q);
// Euclidean distance from q to the footprint, 0 inside.
double distance_to(const Footprint& f, const Vec2& q);
// First t > 0 with origin + t*dir on the footprint boundary.
std::optional<double> ray_hit(const Footprint& f, const Vec2& origin, const Vec2& dir);

struct LidarConfig {
  int n_azimuth = 64;
  std::vector<double> rings = {0.15, 0.45, 0.75};  // ray heights above ground, m
  double max_range = 10.0;
  double range_noise_std = 0.01;
  double yaw_offset_max = 2.0 * 3.14159265358979323846 / 180.0;  // per-episode randomization

  int n_rays() const { return n_azimuth * static_cast<int>(rings.size()); }
};

struct LidarScan {
  std::vector<double> ranges;  // [ring][azimuth], row-major
  int n_azimuth = 0;
  std::vector<double> rings;
  double max_range = 0.0;

  double at(int ring, int az) const { return ranges[static_cast<std::size_t>(ring * n_azimuth + az)]; }
  // Body-frame azimuth of a ray, rad.
  double azimuth(int az) const;
};

// Live obstacle layout plus bounds walls and clock.
struct WorldState {
  Box bounds;
  std::vector<Obstacle> obstacles;
  double time = 0.0;
};

// Positions agents along their loops for time t (phase + speed * t).
void place_agents(WorldState& world, double speed_scale = 1.0);
WorldState advance_agents(WorldState world, double dt, double speed_scale = 1.0);
// Planar velocity of an obstacle at the world's current time.
Vec2 obstacle_velocity(const WorldState& world, const Obstacle& o, double speed_scale = 1.0);
double loop_length(const std::vector<Vec2>& path);

// yaw_offset models sensor mounting error; rng supplies range noise (may be
// null for a noise-free scan).
LidarScan raycast(const WorldState& world, const RobotBody& robot, const LidarConfig& cfg, double yaw_offset,
                  Rng* rng);

bool collision_check(const WorldState& world, const RobotBody& robot, const RobotLimits& lim);

// Surface-to-surface clearance to the nearest obstacle (or bounds wall)
// that overlaps the body band [0, height]. 0 when touching or overlapping.
double nearest_clearance(const WorldState& world, const RobotBody& robot, const RobotLimits& lim,
                         const Obstacle** nearest = nullptr);

inline constexpr int kSectors = 8;
struct SectorInfo {
  double distance = 0.0;
  double closing_speed = 0.0;
};
// Sector k covers body-frame bearings in [k*45deg - 22.5deg, k*45deg + 22.5deg).
// Each obstacle is binned by the bearing of its closest point.
std::array<SectorInfo, kSectors> privileged_obstacle_info(const WorldState& world, const RobotBody& robot,
                                                          const RobotLimits& lim, double max_range,
                                                          double speed_scale = 1.0);

}  // namespace safeloco::sim

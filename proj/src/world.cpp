#include "safeloco/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "safeloco/errors.hpp"

namespace safeloco::sim {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kInf = std::numeric_limits<double>::infinity();

Vec2 rotate(const Vec2& v, double yaw) {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  return {c * v.x() - s * v.y(), s * v.x() + c * v.y()};
}

double wrap_angle(double a) {
  if (a >= -kPi && a < kPi) return a;  // keep in-range angles bit-exact
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0.0) a += 2.0 * kPi;
  return a - kPi;
}

// Distance from q (inside) to the bounds walls, and the closest wall point.
double wall_distance(const Box& b, const Vec2& q, Vec2* point) {
  const std::array<double, 4> d = {q.x() - b.lo.x(), b.hi.x() - q.x(), q.y() - b.lo.y(), b.hi.y() - q.y()};
  const auto k = static_cast<std::size_t>(std::min_element(d.begin(), d.end()) - d.begin());
  if (point) {
    *point = q;
    if (k == 0) point->x() = b.lo.x();
    if (k == 1) point->x() = b.hi.x();
    if (k == 2) point->y() = b.lo.y();
    if (k == 3) point->y() = b.hi.y();
  }
  return std::max(0.0, d[k]);
}

double wall_ray(const Box& b, const Vec2& o, const Vec2& dir) {
  double t = kInf;
  for (int ax = 0; ax < 2; ++ax) {
    if (dir[ax] > 0.0) t = std::min(t, (b.hi[ax] - o[ax]) / dir[ax]);
    if (dir[ax] < 0.0) t = std::min(t, (b.lo[ax] - o[ax]) / dir[ax]);
  }
  return std::max(0.0, t);
}

// Position and unit direction at arc length s along a closed loop.
std::pair<Vec2, Vec2> loop_point(const std::vector<Vec2>& path, double s) {
  const double len = loop_length(path);
  if (path.size() < 2 || len <= 0.0) return {path.empty() ? Vec2::Zero() : path.front(), Vec2::Zero()};
  s = std::fmod(s, len);
  if (s < 0.0) s += len;
  for (std::size_t i = 0; i < path.size(); ++i) {
    const Vec2& a = path[i];
    const Vec2& b = path[(i + 1) % path.size()];
    const double seg = (b - a).norm();
    if (seg <= 0.0) continue;
    if (s <= seg) return {a + (b - a) * (s / seg), (b - a) / seg};
    s -= seg;
  }
  const Vec2& a = path.back();
  const Vec2& b = path.front();
  return {b, (b - a).normalized()};
}

}  // namespace

double RobotLimits::speed_cap(double height) const {
  if (h_stand <= h_min) return v_max;
  const double frac = std::clamp((height - h_min) / (h_stand - h_min), 0.0, 1.0);
  return v_max * (crouch_speed_frac + (1.0 - crouch_speed_frac) * frac);
}

int clamp_action(Action& a, const RobotLimits& lim) {
  const std::array<double, kActionDim> bound = {lim.accel_max, lim.accel_max, lim.alpha_max, lim.height_rate_max,
                                                kInf};
  int violations = 0;
  for (int i = 0; i < kActionDim; ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (std::abs(a[k]) > bound[k]) {
      ++violations;
      a[k] = std::clamp(a[k], -bound[k], bound[k]);
    }
  }
  return violations;
}

DynamicsResult step_dynamics(const RobotBody& robot, Action action, double dt, const RobotLimits& lim) {
  for (double x : action)
    if (!std::isfinite(x)) return {robot, true};
  clamp_action(action, lim);

  RobotBody next = robot;
  next.accel_cmd = rotate(Vec2(action[0], action[1]), robot.yaw);
  next.v += next.accel_cmd * dt;
  next.p += next.v * dt;
  next.omega_z += action[2] * dt;
  next.yaw = wrap_angle(next.yaw + next.omega_z * dt);
  next.height_rate = action[3];
  next.height += action[3] * dt;

  next.height = std::clamp(next.height, lim.h_min, lim.h_max);
  const double cap = lim.speed_cap(next.height);
  const double speed = next.v.norm();
  if (speed > cap) next.v *= cap / speed;
  next.omega_z = std::clamp(next.omega_z, -lim.omega_max, lim.omega_max);
  return {next, false};
}

std::string to_string(ObstacleKind k) {
  switch (k) {
    case ObstacleKind::kPillar:
      return "pillar";
    case ObstacleKind::kSlab:
      return "slab";
    case ObstacleKind::kWall:
      return "wall";
    case ObstacleKind::kAgent:
      return "agent";
  }
  return "pillar";
}

ObstacleKind obstacle_kind_from_string(const std::string& s) {
  if (s == "pillar") return ObstacleKind::kPillar;
  if (s == "slab") return ObstacleKind::kSlab;
  if (s == "wall") return ObstacleKind::kWall;
  if (s == "agent") return ObstacleKind::kAgent;
  throw ConfigError("unknown obstacle kind '" + s + "'");
}

Vec2 closest_point(const Footprint& f, const Vec2& q) {
  if (const auto* c = std::get_if<Circle>(&f)) {
    const Vec2 d = q - c->center;
    const double n = d.norm();
    if (n <= c->radius) return q;
    return c->center + d * (c->radius / n);
  }
  const auto& b = std::get<Box>(f);
  return q.cwiseMax(b.lo).cwiseMin(b.hi);
}

double distance_to(const Footprint& f, const Vec2& q) { return (q - closest_point(f, q)).norm(); }

std::optional<double> ray_hit(const Footprint& f, const Vec2& o, const Vec2& dir) {
  if (const auto* c = std::get_if<Circle>(&f)) {
    const Vec2 oc = o - c->center;
    const double b = oc.dot(dir);
    const double cc = oc.squaredNorm() - c->radius * c->radius;
    const double disc = b * b - cc;
    if (disc < 0.0) return std::nullopt;
    const double s = std::sqrt(disc);
    const double t0 = -b - s;
    const double t1 = -b + s;
    if (t0 > 0.0) return t0;
    if (t1 > 0.0) return t1;
    return std::nullopt;
  }
  const auto& bx = std::get<Box>(f);
  double tmin = -kInf;
  double tmax = kInf;
  for (int ax = 0; ax < 2; ++ax) {
    if (dir[ax] == 0.0) {
      if (o[ax] < bx.lo[ax] || o[ax] > bx.hi[ax]) return std::nullopt;
      continue;
    }
    double t1 = (bx.lo[ax] - o[ax]) / dir[ax];
    double t2 = (bx.hi[ax] - o[ax]) / dir[ax];
    if (t1 > t2) std::swap(t1, t2);
    tmin = std::max(tmin, t1);
    tmax = std::min(tmax, t2);
  }
  if (tmin > tmax) return std::nullopt;
  if (tmin > 0.0) return tmin;
  if (tmax > 0.0) return tmax;
  return std::nullopt;
}

double LidarScan::azimuth(int az) const { return 2.0 * kPi * az / n_azimuth; }

double loop_length(const std::vector<Vec2>& path) {
  if (path.size() < 2) return 0.0;
  double len = 0.0;
  for (std::size_t i = 0; i < path.size(); ++i) len += (path[(i + 1) % path.size()] - path[i]).norm();
  return len;
}

void place_agents(WorldState& world, double speed_scale) {
  for (auto& o : world.obstacles) {
    if (o.kind != ObstacleKind::kAgent || o.path.size() < 2) continue;
    auto* c = std::get_if<Circle>(&o.footprint);
    if (!c) continue;
    c->center = loop_point(o.path, o.phase + o.speed * speed_scale * world.time).first;
  }
}

WorldState advance_agents(WorldState world, double dt, double speed_scale) {
  world.time += dt;
  place_agents(world, speed_scale);
  return world;
}

Vec2 obstacle_velocity(const WorldState& world, const Obstacle& o, double speed_scale) {
  if (o.kind != ObstacleKind::kAgent || o.path.size() < 2) return Vec2::Zero();
  return loop_point(o.path, o.phase + o.speed * speed_scale * world.time).second * (o.speed * speed_scale);
}

LidarScan raycast(const WorldState& world, const RobotBody& robot, const LidarConfig& cfg, double yaw_offset,
                  Rng* rng) {
  if (cfg.n_azimuth < 8) throw ConfigError("lidar n_azimuth must be >= 8");
  if (!(cfg.max_range > 0.0)) throw ConfigError("lidar max_range must be positive");
  LidarScan scan;
  scan.n_azimuth = cfg.n_azimuth;
  scan.rings = cfg.rings;
  scan.max_range = cfg.max_range;
  scan.ranges.assign(static_cast<std::size_t>(cfg.n_rays()), cfg.max_range);

  std::vector<Vec2> dirs(static_cast<std::size_t>(cfg.n_azimuth));
  std::vector<double> wall_t(dirs.size());
  for (int a = 0; a < cfg.n_azimuth; ++a) {
    const double ang = robot.yaw + yaw_offset + 2.0 * kPi * a / cfg.n_azimuth;
    dirs[static_cast<std::size_t>(a)] = Vec2(std::cos(ang), std::sin(ang));
    wall_t[static_cast<std::size_t>(a)] = wall_ray(world.bounds, robot.p, dirs[static_cast<std::size_t>(a)]);
  }

  for (std::size_t r = 0; r < cfg.rings.size(); ++r) {
    const double z = cfg.rings[r];
    std::vector<const Obstacle*> visible;
    for (const auto& o : world.obstacles)
      if (o.z_lo <= z && z <= o.z_hi) visible.push_back(&o);
    for (int a = 0; a < cfg.n_azimuth; ++a) {
      const auto ai = static_cast<std::size_t>(a);
      double t = wall_t[ai];
      for (const Obstacle* o : visible)
        if (auto hit = ray_hit(o->footprint, robot.p, dirs[ai]); hit && *hit < t) t = *hit;
      if (t < cfg.max_range) {
        if (rng && cfg.range_noise_std > 0.0) t += cfg.range_noise_std * rng->normal();
        t = std::clamp(t, 1e-3, cfg.max_range);
      } else {
        t = cfg.max_range;
      }
      scan.ranges[r * static_cast<std::size_t>(cfg.n_azimuth) + ai] = t;
    }
  }
  return scan;
}

bool collision_check(const WorldState& world, const RobotBody& robot, const RobotLimits& lim) {
  if (wall_distance(world.bounds, robot.p, nullptr) < lim.radius) return true;
  for (const auto& o : world.obstacles) {
    if (!o.overlaps_band(0.0, robot.height)) continue;
    if (distance_to(o.footprint, robot.p) < lim.radius) return true;
  }
  return false;
}

double nearest_clearance(const WorldState& world, const RobotBody& robot, const RobotLimits& lim,
                         const Obstacle** nearest) {
  double best = wall_distance(world.bounds, robot.p, nullptr);
  if (nearest) *nearest = nullptr;
  for (const auto& o : world.obstacles) {
    if (!o.overlaps_band(0.0, robot.height)) continue;
    const double d = distance_to(o.footprint, robot.p);
    if (d < best) {
      best = d;
      if (nearest) *nearest = &o;
    }
  }
  return std::max(0.0, best - lim.radius);
}

std::array<SectorInfo, kSectors> privileged_obstacle_info(const WorldState& world, const RobotBody& robot,
                                                          const RobotLimits& lim, double max_range,
                                                          double speed_scale) {
  std::array<SectorInfo, kSectors> out;
  for (auto& s : out) s = {max_range, 0.0};

  auto consider = [&](const Vec2& point, const Vec2& obs_vel) {
    const Vec2 rel = point - robot.p;
    const double center_dist = rel.norm();
    const double dist = std::max(0.0, center_dist - lim.radius);
    if (dist >= max_range) return;
    const double bearing = wrap_angle(std::atan2(rel.y(), rel.x()) - robot.yaw);
    int k = static_cast<int>(std::floor((bearing + kPi / kSectors) / (2.0 * kPi / kSectors)));
    k = ((k % kSectors) + kSectors) % kSectors;
    auto& s = out[static_cast<std::size_t>(k)];
    if (dist < s.distance) {
      const Vec2 u = center_dist > 0.0 ? Vec2(rel / center_dist) : Vec2(std::cos(robot.yaw), std::sin(robot.yaw));
      s = {dist, (robot.v - obs_vel).dot(u)};
    }
  };

  Vec2 wall_pt;
  wall_distance(world.bounds, robot.p, &wall_pt);
  consider(wall_pt, Vec2::Zero());
  for (const auto& o : world.obstacles) {
    if (!o.overlaps_band(0.0, robot.height)) continue;
    consider(closest_point(o.footprint, robot.p), obstacle_velocity(world, o, speed_scale));
  }
  return out;
}

}  // namespace safeloco::sim

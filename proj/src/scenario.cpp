#include "safeloco/scenario.hpp"

#include <cstdlib>
#include <fstream>
#include <initializer_list>

#include "safeloco/errors.hpp"

#ifndef SAFELOCO_SCENARIO_DIR
#define SAFELOCO_SCENARIO_DIR "scenarios"
#endif

namespace safeloco::sim {

namespace {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

Vec2 vec2(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2) throw ConfigError(where + ": expected [x, y]");
  return {j[0].get<double>(), j[1].get<double>()};
}

json vec2_json(const Vec2& v) { return json::array({v.x(), v.y()}); }

Box box(const json& j, const std::string& where) {
  check_keys(j, {"lo", "hi"}, where);
  Box b{vec2(j.at("lo"), where + ".lo"), vec2(j.at("hi"), where + ".hi")};
  if (!(b.lo.array() < b.hi.array()).all()) throw ConfigError(where + ": lo must be < hi");
  return b;
}

json box_json(const Box& b) { return {{"lo", vec2_json(b.lo)}, {"hi", vec2_json(b.hi)}}; }

Obstacle obstacle(const json& j, const std::string& where) {
  check_keys(j, {"kind", "circle", "box", "z", "path", "speed", "phase", "min_level", "jitter", "train_drop_prob"},
             where);
  Obstacle o;
  o.kind = obstacle_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("circle") == j.contains("box")) throw ConfigError(where + ": exactly one of circle/box required");
  if (j.contains("circle")) {
    const auto& c = j.at("circle");
    check_keys(c, {"center", "radius"}, where + ".circle");
    o.footprint = Circle{vec2(c.at("center"), where + ".circle.center"), c.at("radius").get<double>()};
    if (!(std::get<Circle>(o.footprint).radius > 0.0)) throw ConfigError(where + ": radius must be positive");
  } else {
    o.footprint = box(j.at("box"), where + ".box");
  }
  const auto z = j.at("z");
  o.z_lo = z.at(0).get<double>();
  o.z_hi = z.at(1).get<double>();
  if (!(o.z_lo < o.z_hi)) throw ConfigError(where + ": z_lo must be < z_hi");
  if (j.contains("path"))
    for (std::size_t i = 0; i < j["path"].size(); ++i)
      o.path.push_back(vec2(j["path"][i], where + ".path[" + std::to_string(i) + "]"));
  o.speed = j.value("speed", 0.0);
  o.phase = j.value("phase", 0.0);
  o.min_level = j.value("min_level", 0);
  o.jitter = j.value("jitter", 0.0);
  if (o.kind == ObstacleKind::kAgent) {
    if (!(o.speed > 0.0) || o.path.size() < 2) throw ConfigError(where + ": agents need speed > 0 and >= 2 waypoints");
    if (!std::holds_alternative<Circle>(o.footprint)) throw ConfigError(where + ": agents must be circles");
  }
  return o;
}

}  // namespace

Scenario scenario_from_json(const json& j) {
  check_keys(j, {"name", "bounds", "obstacles", "start", "goal", "episode_length", "success_rule"}, "scenario");
  Scenario s;
  try {
    s.name = j.at("name").get<std::string>();
    s.bounds = box(j.at("bounds"), "scenario.bounds");
    const auto& st = j.at("start");
    check_keys(st, {"p", "yaw", "height", "p_jitter", "yaw_jitter"}, "scenario.start");
    s.start.p = vec2(st.at("p"), "scenario.start.p");
    s.start.yaw = st.value("yaw", 0.0);
    s.start.height = st.value("height", 0.8);
    if (st.contains("p_jitter")) s.start.p_jitter = vec2(st["p_jitter"], "scenario.start.p_jitter");
    s.start.yaw_jitter = st.value("yaw_jitter", 0.0);

    const auto& g = j.at("goal");
    check_keys(g, {"kind", "region", "cmd_speed", "profile"}, "scenario.goal");
    const auto kind = g.at("kind").get<std::string>();
    if (kind == "region") {
      s.goal.kind = Goal::Kind::kRegion;
      s.goal.region = box(g.at("region"), "scenario.goal.region");
      s.goal.cmd_speed = g.value("cmd_speed", 1.0);
    } else if (kind == "command") {
      s.goal.kind = Goal::Kind::kCommand;
      if (g.contains("profile"))
        for (const auto& seg : g["profile"]) {
          check_keys(seg, {"steps", "cmd"}, "scenario.goal.profile[]");
          CommandSegment cs;
          cs.steps = seg.at("steps").get<int>();
          for (std::size_t k = 0; k < 3; ++k) cs.cmd[k] = seg.at("cmd").at(k).get<double>();
          s.goal.profile.push_back(cs);
        }
    } else {
      throw ConfigError("scenario.goal.kind: expected 'region' or 'command', got '" + kind + "'");
    }

    s.episode_length = j.value("episode_length", 400);
    if (s.episode_length <= 0) throw ConfigError("scenario.episode_length must be positive");
    s.success_rule = j.value("success_rule", std::string(s.goal.kind == Goal::Kind::kRegion ? "reach_goal" : "track_command"));
    if (s.success_rule != "reach_goal" && s.success_rule != "track_command")
      throw ConfigError("scenario.success_rule: unknown rule '" + s.success_rule + "'");

    bool any_drop = false;
    std::vector<double> drops;
    if (j.contains("obstacles"))
      for (std::size_t i = 0; i < j["obstacles"].size(); ++i) {
        const auto& oj = j["obstacles"][i];
        s.obstacles.push_back(obstacle(oj, "scenario.obstacles[" + std::to_string(i) + "]"));
        drops.push_back(oj.value("train_drop_prob", 0.0));
        any_drop = any_drop || drops.back() > 0.0;
      }
    if (any_drop) s.train_drop_prob = std::move(drops);
  } catch (const json::exception& e) {
    throw ConfigError("scenario '" + s.name + "': " + e.what());
  }
  return s;
}

json scenario_to_json(const Scenario& s) {
  json obs = json::array();
  for (std::size_t i = 0; i < s.obstacles.size(); ++i) {
    const auto& o = s.obstacles[i];
    json oj = {{"kind", to_string(o.kind)}, {"z", {o.z_lo, o.z_hi}}};
    if (const auto* c = std::get_if<Circle>(&o.footprint))
      oj["circle"] = {{"center", vec2_json(c->center)}, {"radius", c->radius}};
    else
      oj["box"] = box_json(std::get<Box>(o.footprint));
    if (!o.path.empty()) {
      json p = json::array();
      for (const auto& w : o.path) p.push_back(vec2_json(w));
      oj["path"] = p;
      oj["speed"] = o.speed;
      oj["phase"] = o.phase;
    }
    if (o.min_level != 0) oj["min_level"] = o.min_level;
    if (o.jitter != 0.0) oj["jitter"] = o.jitter;
    if (!s.train_drop_prob.empty() && s.train_drop_prob[i] > 0.0) oj["train_drop_prob"] = s.train_drop_prob[i];
    obs.push_back(std::move(oj));
  }
  json goal;
  if (s.goal.kind == Goal::Kind::kRegion) {
    goal = {{"kind", "region"}, {"region", box_json(s.goal.region)}, {"cmd_speed", s.goal.cmd_speed}};
  } else {
    json prof = json::array();
    for (const auto& seg : s.goal.profile) prof.push_back({{"steps", seg.steps}, {"cmd", seg.cmd}});
    goal = {{"kind", "command"}, {"profile", prof}};
  }
  return {{"name", s.name},
          {"bounds", box_json(s.bounds)},
          {"start",
           {{"p", vec2_json(s.start.p)},
            {"yaw", s.start.yaw},
            {"height", s.start.height},
            {"p_jitter", vec2_json(s.start.p_jitter)},
            {"yaw_jitter", s.start.yaw_jitter}}},
          {"goal", goal},
          {"episode_length", s.episode_length},
          {"success_rule", s.success_rule},
          {"obstacles", obs}};
}

std::filesystem::path default_scenario_dir() {
  if (const char* env = std::getenv("SAFELOCO_SCENARIO_DIR"); env && *env) return env;
  return SAFELOCO_SCENARIO_DIR;
}

Scenario load_scenario(const std::string& name_or_path, const std::filesystem::path& dir) {
  std::filesystem::path p = name_or_path;
  if (!std::filesystem::exists(p)) p = dir / (name_or_path + ".json");
  if (!std::filesystem::exists(p)) throw MissingArtifact("scenario not found: " + name_or_path);
  json j;
  try {
    std::ifstream in(p);
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("scenario file " + p.string() + ": " + e.what());
  }
  return scenario_from_json(j);
}

WorldState instantiate(const Scenario& s, const InstanceOptions& opt, Rng& rng) {
  WorldState w;
  w.bounds = s.bounds;
  for (std::size_t i = 0; i < s.obstacles.size(); ++i) {
    Obstacle o = s.obstacles[i];
    // Draw every random number unconditionally so streams stay aligned
    // across levels and modes.
    const double drop_u = rng.uniform();
    const double jx = rng.uniform(-1.0, 1.0);
    const double jy = rng.uniform(-1.0, 1.0);
    const double phase_u = rng.uniform();
    if (o.min_level > opt.level) continue;
    if (opt.training && !s.train_drop_prob.empty() && drop_u < s.train_drop_prob[i]) continue;
    const Vec2 shift(jx * o.jitter, jy * o.jitter);
    if (auto* c = std::get_if<Circle>(&o.footprint)) {
      c->center += shift;
    } else {
      auto& b = std::get<Box>(o.footprint);
      b.lo += shift;
      b.hi += shift;
    }
    for (auto& wp : o.path) wp += shift;
    if (o.kind == ObstacleKind::kAgent) o.phase += phase_u * loop_length(o.path);
    w.obstacles.push_back(std::move(o));
  }
  place_agents(w);
  return w;
}

RobotBody sample_start(const Scenario& s, Rng& rng) {
  RobotBody r;
  r.p = s.start.p + Vec2(rng.uniform(-1.0, 1.0) * s.start.p_jitter.x(), rng.uniform(-1.0, 1.0) * s.start.p_jitter.y());
  r.yaw = s.start.yaw + rng.uniform(-1.0, 1.0) * s.start.yaw_jitter;
  r.height = s.start.height;
  return r;
}

}  // namespace safeloco::sim

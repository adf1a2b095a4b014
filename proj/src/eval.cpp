#include "safeloco/eval.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <thread>

#include "safeloco/errors.hpp"

namespace safeloco::eval {

namespace {

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

std::string fmt2(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

}  // namespace

ComfortTimes comfort_metrics(std::span<const double> d_obs, double dt) {
  long unsafe = 0;
  long uncomf = 0;
  for (double d : d_obs) {
    if (d < kUnsafeDistance)
      ++unsafe;
    else if (d < kComfortDistance)
      ++uncomf;
  }
  return {dt * static_cast<double>(unsafe), dt * static_cast<double>(uncomf)};
}

Controller policy_controller(const rl::PolicyBundle& bundle) {
  auto net = std::make_shared<const rl::ActorCritic>(bundle.net, bundle.dims, bundle.params);
  auto norm = std::make_shared<const rl::RunningNorm>(bundle.obs_norm);
  const int da = bundle.dims.actor_obs();
  return [net, norm, da](const env::StepResult& obs, const env::SafeLocoEnv&) {
    const Eigen::Map<const Eigen::RowVectorXd> row(obs.critic_obs.data(), static_cast<Eigen::Index>(obs.critic_obs.size()));
    const ad::Matrix x = norm->apply(ad::Matrix(row));
    const ad::Matrix mean = net->action_mean(x.leftCols(da));
    env::PolicyAction a{};
    for (int k = 0; k < env::kPolicyActionDim; ++k) a[static_cast<std::size_t>(k)] = mean(0, k);
    return a;
  };
}

env::EnvConfig eval_env_config(env::EnvConfig base) {
  base.training = false;
  base.level = 2;
  return base;
}

TrialResult run_trial(env::SafeLocoEnv& env, const Controller& ctl, std::uint64_t seed, Trajectory* traj) {
  env::StepResult res = env.reset(seed);
  if (traj) {
    traj->scenario = env.scenario().name;
    traj->seed = seed;
    traj->dt = env.config().dt;
    traj->start = env.robot();
    traj->world = env.world();
    traj->steps.clear();
  }
  std::vector<double> d_obs;
  TrialResult tr;
  tr.seed = seed;
  while (!env.done()) {
    const env::PolicyAction a = ctl(res, env);
    res = env.step(a);
    d_obs.push_back(res.info.at("d_obs"));
    if (traj) {
      TrajectoryStep s;
      s.k = env.step_count();
      const auto& r = env.robot();
      s.x = r.p.x();
      s.y = r.p.y();
      s.yaw = r.yaw;
      s.vx = r.v.x();
      s.vy = r.v.y();
      s.omega = r.omega_z;
      s.height = r.height;
      s.action = a;
      s.reward = res.reward;
      for (const auto& name : env::reward_term_names()) {
        const auto it = res.info.find("r/" + name);
        s.reward_terms.push_back(it == res.info.end() ? 0.0 : it->second);
      }
      s.costs = res.costs;
      s.h_d = res.info.count("h_d") ? res.info.at("h_d") : 0.0;
      s.d_obs = d_obs.back();
      s.collision = res.terminated;
      traj->steps.push_back(std::move(s));
    }
  }
  tr.steps = env.step_count();
  tr.collided = res.terminated;
  tr.success = res.info.count("success") && res.info.at("success") > 0.5;
  tr.tracking_error = env.mean_tracking_error();
  const auto ct = comfort_metrics(d_obs, env.config().dt);
  tr.t_unsafe = ct.t_unsafe;
  tr.t_uncomfortable = ct.t_uncomfortable;
  return tr;
}

EvalReport run_trials(const Controller& ctl, const env::EnvConfig& env_cfg, const sim::Scenario& scenario, int n,
                      std::uint64_t base_seed, const std::string& mode, int jobs) {
  if (n <= 0) throw ConfigError("eval: trial count must be positive");
  EvalReport rep;
  rep.scenario = scenario.name;
  rep.mode = mode;
  rep.n_trials = n;
  rep.trials.resize(static_cast<std::size_t>(n));
  const env::EnvConfig cfg = eval_env_config(env_cfg);
  auto work = [&](int lo, int hi) {
    env::SafeLocoEnv env(cfg, {scenario});
    for (int i = lo; i < hi; ++i)
      rep.trials[static_cast<std::size_t>(i)] = run_trial(env, ctl, derive_seed(base_seed, static_cast<std::uint64_t>(i)));
  };
  if (jobs > 1 && n > 1) {
    std::vector<std::thread> pool;
    const int per = (n + jobs - 1) / jobs;
    for (int lo = 0; lo < n; lo += per) pool.emplace_back(work, lo, std::min(n, lo + per));
    for (auto& t : pool) t.join();
  } else {
    work(0, n);
  }
  for (const auto& t : rep.trials) {
    rep.success_rate += t.success ? 1.0 : 0.0;
    rep.mean_t_unsafe += t.t_unsafe;
    rep.mean_t_uncomfortable += t.t_uncomfortable;
    rep.mean_episode_length += t.steps * cfg.dt;
  }
  rep.success_rate /= n;
  rep.mean_t_unsafe /= n;
  rep.mean_t_uncomfortable /= n;
  rep.mean_episode_length /= n;
  return rep;
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& r) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "trial,seed,success,collided,steps,t_unsafe,t_uncomfortable,tracking_error\n";
  for (std::size_t i = 0; i < r.trials.size(); ++i) {
    const auto& t = r.trials[i];
    out << i << "," << t.seed << "," << (t.success ? 1 : 0) << "," << (t.collided ? 1 : 0) << "," << t.steps << ","
        << fmt(t.t_unsafe) << "," << fmt(t.t_uncomfortable) << "," << fmt(t.tracking_error) << "\n";
  }
}

void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& t) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "k,x,y,yaw,vx,vy,omega,height,a0,a1,a2,a3,reward";
  for (const auto& name : env::reward_term_names()) out << ",r_" << name;
  out << ",c_safe,c_limit,c_cbf,h_d,d_obs,collision\n";
  auto row = [&](const TrajectoryStep& s) {
    out << s.k << "," << fmt(s.x) << "," << fmt(s.y) << "," << fmt(s.yaw) << "," << fmt(s.vx) << "," << fmt(s.vy)
        << "," << fmt(s.omega) << "," << fmt(s.height);
    for (double a : s.action) out << "," << fmt(a);
    out << "," << fmt(s.reward);
    for (std::size_t i = 0; i < env::reward_term_names().size(); ++i)
      out << "," << fmt(i < s.reward_terms.size() ? s.reward_terms[i] : 0.0);
    for (double c : s.costs) out << "," << fmt(c);
    out << "," << fmt(s.h_d) << "," << fmt(s.d_obs) << "," << (s.collision ? 1 : 0) << "\n";
  };
  TrajectoryStep s0;
  s0.x = t.start.p.x();
  s0.y = t.start.p.y();
  s0.yaw = t.start.yaw;
  s0.height = t.start.height;
  s0.d_obs = sim::nearest_clearance(t.world, t.start, sim::RobotLimits{});
  row(s0);
  for (const auto& s : t.steps) row(s);
}

std::vector<TrajectoryStep> read_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("trajectory file not found: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path.string() + ": empty trajectory file");
  std::map<std::string, std::size_t> col;
  {
    std::stringstream ss(line);
    std::string name;
    std::size_t i = 0;
    while (std::getline(ss, name, ',')) col[name] = i++;
  }
  for (const char* need : {"k", "x", "y", "collision"})
    if (!col.count(need)) throw ConfigError(path.string() + ": missing column '" + need + "'");
  auto get = [&](const std::vector<double>& v, const char* name) {
    const auto it = col.find(name);
    return it == col.end() ? 0.0 : v[it->second];
  };
  std::vector<TrajectoryStep> steps;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        v.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ConfigError(path.string() + ": malformed number '" + cell + "'");
      }
    }
    if (v.size() != col.size()) throw ConfigError(path.string() + ": ragged row");
    TrajectoryStep s;
    s.k = static_cast<int>(get(v, "k"));
    s.x = get(v, "x");
    s.y = get(v, "y");
    s.yaw = get(v, "yaw");
    s.height = get(v, "height");
    s.d_obs = get(v, "d_obs");
    s.h_d = get(v, "h_d");
    s.collision = get(v, "collision") > 0.5;
    steps.push_back(std::move(s));
  }
  return steps;
}

sim::WorldState nominal_world(const sim::Scenario& s) {
  sim::WorldState w;
  w.bounds = s.bounds;
  for (const auto& o : s.obstacles)
    if (o.min_level <= 2) w.obstacles.push_back(o);
  sim::place_agents(w, 1.0);
  return w;
}

std::string mode_color(const std::string& mode) {
  if (mode == "p3o_cbf") return "#1f5fbf";
  if (mode == "p3o") return "#2e9e44";
  if (mode == "ppo_reward_shaping") return "#d9412b";
  return "#444444";
}

PlotSeries series_from(const std::string& label, const std::vector<TrajectoryStep>& steps) {
  PlotSeries p;
  p.label = label;
  for (const auto& s : steps) {
    p.points.emplace_back(s.x, s.y);
    p.collision.push_back(s.collision);
  }
  return p;
}

void emit_trajectory_svg(const std::vector<PlotSeries>& series, const sim::WorldState& world,
                         const sim::Scenario& scenario, const std::filesystem::path& path) {
  constexpr double kPx = 60.0;
  constexpr double kMargin = 20.0;
  const sim::Box& b = world.bounds;
  const double w = (b.hi.x() - b.lo.x()) * kPx + 2 * kMargin;
  const double h = (b.hi.y() - b.lo.y()) * kPx + 2 * kMargin + 24.0 * static_cast<double>(series.size());
  auto X = [&](double x) { return fmt2(kMargin + (x - b.lo.x()) * kPx); };
  auto Y = [&](double y) { return fmt2(kMargin + (b.hi.y() - y) * kPx); };
  const double radius = sim::RobotLimits{}.radius;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt2(w) << "\" height=\"" << fmt2(h)
     << "\" viewBox=\"0 0 " << fmt2(w) << " " << fmt2(h) << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << fmt2(w) << "\" height=\"" << fmt2(h) << "\" fill=\"white\"/>\n";
  os << "<rect x=\"" << X(b.lo.x()) << "\" y=\"" << Y(b.hi.y()) << "\" width=\"" << fmt2((b.hi.x() - b.lo.x()) * kPx)
     << "\" height=\"" << fmt2((b.hi.y() - b.lo.y()) * kPx) << "\" fill=\"none\" stroke=\"black\" stroke-width=\"2\"/>\n";
  if (scenario.goal.kind == sim::Goal::Kind::kRegion) {
    const auto& g = scenario.goal.region;
    os << "<rect x=\"" << X(g.lo.x()) << "\" y=\"" << Y(g.hi.y()) << "\" width=\"" << fmt2((g.hi.x() - g.lo.x()) * kPx)
       << "\" height=\"" << fmt2((g.hi.y() - g.lo.y()) * kPx) << "\" fill=\"#c8f0c8\" stroke=\"#3a3\"/>\n";
  }
  // Bands are drawn around obstacles, offset by the robot radius so they can be
  // read against the centre path.
  auto shape = [&](const sim::Footprint& f, double grow, const std::string& style) {
    if (const auto* c = std::get_if<sim::Circle>(&f)) {
      os << "<circle cx=\"" << X(c->center.x()) << "\" cy=\"" << Y(c->center.y()) << "\" r=\""
         << fmt2((c->radius + grow) * kPx) << "\" " << style << "/>\n";
    } else {
      const auto& bx = std::get<sim::Box>(f);
      os << "<rect x=\"" << X(bx.lo.x() - grow) << "\" y=\"" << Y(bx.hi.y() + grow) << "\" width=\""
         << fmt2((bx.hi.x() - bx.lo.x() + 2 * grow) * kPx) << "\" height=\""
         << fmt2((bx.hi.y() - bx.lo.y() + 2 * grow) * kPx) << "\" rx=\"" << fmt2(grow * kPx) << "\" " << style << "/>\n";
    }
  };
  for (const auto& o : world.obstacles) shape(o.footprint, radius + kComfortDistance, "fill=\"#fff3c4\" stroke=\"none\"");
  for (const auto& o : world.obstacles) shape(o.footprint, radius + kUnsafeDistance, "fill=\"#ffd0c8\" stroke=\"none\"");
  for (const auto& o : world.obstacles) {
    std::string style;
    switch (o.kind) {
      case sim::ObstacleKind::kSlab:
        style = "fill=\"#e08a2c\" fill-opacity=\"0.5\" stroke=\"#a05a10\" stroke-dasharray=\"4 2\"";
        break;
      case sim::ObstacleKind::kWall:
        style = "fill=\"#777777\" stroke=\"#333333\"";
        break;
      case sim::ObstacleKind::kAgent:
        style = "fill=\"#7aa6e0\" stroke=\"#234\"";
        break;
      default:
        style = "fill=\"#333333\" stroke=\"#000000\"";
    }
    shape(o.footprint, 0.0, style);
    if (o.kind == sim::ObstacleKind::kAgent && o.path.size() >= 2) {
      os << "<polygon fill=\"none\" stroke=\"#7aa6e0\" stroke-dasharray=\"3 3\" points=\"";
      for (std::size_t i = 0; i < o.path.size(); ++i) os << (i ? " " : "") << X(o.path[i].x()) << "," << Y(o.path[i].y());
      os << "\"/>\n";
    }
  }
  double legend_y = (b.hi.y() - b.lo.y()) * kPx + 2 * kMargin + 14.0;
  for (const auto& s : series) {
    const std::string color = mode_color(s.label);
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.points.size(); ++i) os << (i ? " " : "") << X(s.points[i].x()) << "," << Y(s.points[i].y());
    os << "\"/>\n";
    for (std::size_t i = 0; i < s.points.size() && i < s.collision.size(); ++i)
      if (s.collision[i])
        os << "<circle cx=\"" << X(s.points[i].x()) << "\" cy=\"" << Y(s.points[i].y())
           << "\" r=\"6\" fill=\"none\" stroke=\"red\" stroke-width=\"2\"/>\n";
    os << "<line x1=\"" << fmt2(kMargin) << "\" y1=\"" << fmt2(legend_y) << "\" x2=\"" << fmt2(kMargin + 30) << "\" y2=\""
       << fmt2(legend_y) << "\" stroke=\"" << color << "\" stroke-width=\"3\"/>\n";
    os << "<text x=\"" << fmt2(kMargin + 36) << "\" y=\"" << fmt2(legend_y + 4) << "\" font-family=\"sans-serif\" "
       << "font-size=\"12\">" << s.label << "</text>\n";
    legend_y += 24.0;
  }
  os << "</svg>\n";
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream(path) << os.str();
}

std::filesystem::path train_or_reuse(const rl::RunConfig& cfg, const std::filesystem::path& run_dir, bool reuse,
                                     int jobs, const std::function<void(const std::string&)>& log,
                                     double* wall_seconds) {
  const long batch = static_cast<long>(cfg.train.num_envs) * cfg.train.horizon;
  const long final_step = (cfg.train.total_steps + batch - 1) / batch * batch;
  const auto stem = run_dir / ("ckpt_" + std::to_string(final_step));
  const std::string want = rl::run_config_to_json(cfg).dump(2) + "\n";
  if (reuse && std::filesystem::exists(stem.string() + ".json") && std::filesystem::exists(stem.string() + ".bin")) {
    std::ifstream in(run_dir / "config.json");
    std::stringstream ss;
    ss << in.rdbuf();
    if (ss.str() == want) {
      if (log) log("reusing " + stem.string());
      if (wall_seconds) {
        std::ifstream t(run_dir / "train_wall_s.txt");
        double w = -1.0;
        t >> w;
        *wall_seconds = t ? w : -1.0;
      }
      return stem;
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<sim::Scenario> scenarios;
  for (const auto& name : cfg.train.scenarios) scenarios.push_back(sim::load_scenario(name));
  rl::Trainer trainer(cfg, scenarios);
  trainer.set_jobs(jobs);
  int it = 0;
  trainer.train(run_dir, [&](const rl::IterationMetrics& m) {
    if (log && (++it % 10 == 0 || m.step >= cfg.train.total_steps)) {
      std::ostringstream os;
      os << rl::mode_name(cfg.train.mode) << " step " << m.step << " reward " << fmt2(m.reward) << " success "
         << fmt2(m.success_rate) << " J " << fmt2(m.j_cost[0]) << "/" << fmt2(m.j_cost[1]) << "/" << fmt2(m.j_cost[2])
         << " level " << m.level;
      log(os.str());
    }
  });
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ofstream(run_dir / "train_wall_s.txt") << fmt(wall) << "\n";
  if (wall_seconds) *wall_seconds = wall;
  return stem;
}

AblationResult run_ablation(const rl::RunConfig& base, const AblationConfig& cfg, const std::filesystem::path& out,
                            const std::function<void(const std::string&)>& log) {
  AblationResult res;
  std::vector<sim::Scenario> scenarios;
  for (const auto& name : cfg.scenarios) scenarios.push_back(sim::load_scenario(name));
  const sim::Scenario timing = sim::load_scenario(cfg.timing_scenario);
  std::map<std::string, std::vector<PlotSeries>> overlays;
  std::map<std::string, sim::WorldState> overlay_world;

  for (const auto mode : cfg.modes) {
    rl::RunConfig rc = base;
    rc.train.mode = mode;
    rc.name = base.name + "_" + rl::mode_name(mode);
    double wall = -1.0;
    const auto stem = train_or_reuse(rc, out / rl::mode_name(mode), cfg.reuse, cfg.jobs, log, &wall);
    res.checkpoints.push_back(stem);
    res.train_seconds.push_back(wall);
    const auto loaded = rl::load_policy(stem);
    const Controller ctl = policy_controller(loaded.bundle);
    const std::string mname = rl::mode_name(mode);

    res.timing.push_back(run_trials(ctl, loaded.config.env, timing, cfg.timing_trials, cfg.eval_seed, mname, cfg.jobs));
    std::vector<EvalReport> per;
    for (const auto& sc : scenarios) {
      per.push_back(run_trials(ctl, loaded.config.env, sc, cfg.success_trials, cfg.eval_seed, mname, cfg.jobs));
      write_report_csv(out / mname / ("eval_" + sc.name + ".csv"), per.back());
      env::SafeLocoEnv env(eval_env_config(loaded.config.env), {sc});
      Trajectory traj;
      run_trial(env, ctl, derive_seed(cfg.eval_seed, 0), &traj);
      PlotSeries s = series_from(mname, traj.steps);
      emit_trajectory_svg({s}, traj.world, sc, out / ("traj_" + sc.name + "_" + mname + ".svg"));
      overlays[sc.name].push_back(s);
      overlay_world[sc.name] = traj.world;
      if (log)
        log(mname + " on " + sc.name + ": success " + fmt2(per.back().success_rate) + " t_unsafe " +
            fmt2(per.back().mean_t_unsafe));
    }
    res.success.push_back(std::move(per));
  }
  for (const auto& sc : scenarios)
    emit_trajectory_svg(overlays[sc.name], overlay_world[sc.name], sc, out / ("traj_" + sc.name + "_all.svg"));

  {
    std::ofstream t2(out / "table2.csv");
    t2 << "mode,scenario,n_trials,t_unsafe_s,t_uncomfortable_s,success_rate\n";
    for (const auto& r : res.timing)
      t2 << r.mode << "," << r.scenario << "," << r.n_trials << "," << fmt(r.mean_t_unsafe) << ","
         << fmt(r.mean_t_uncomfortable) << "," << fmt(r.success_rate) << "\n";
  }
  {
    std::ofstream t3(out / "table3.csv");
    t3 << "scenario,n_trials";
    for (const auto m : cfg.modes) t3 << "," << rl::mode_name(m);
    t3 << "\n";
    for (std::size_t s = 0; s < scenarios.size(); ++s) {
      t3 << scenarios[s].name << "," << cfg.success_trials;
      for (std::size_t m = 0; m < cfg.modes.size(); ++m) t3 << "," << fmt(100.0 * res.success[m][s].success_rate);
      t3 << "\n";
    }
  }
  return res;
}

}  // namespace safeloco::eval

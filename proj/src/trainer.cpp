#include "safeloco/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "safeloco/checkpoint.hpp"
#include "safeloco/errors.hpp"
#include "safeloco/p3o.hpp"

namespace safeloco::rl {

using nlohmann::json;

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::kP3oCbf:
      return "p3o_cbf";
    case Mode::kP3o:
      return "p3o";
    case Mode::kPpoRewardShaping:
      return "ppo_reward_shaping";
  }
  return "p3o_cbf";
}

Mode parse_mode(const std::string& s) {
  if (s == "p3o_cbf") return Mode::kP3oCbf;
  if (s == "p3o") return Mode::kP3o;
  if (s == "ppo_reward_shaping") return Mode::kPpoRewardShaping;
  throw ConfigError("train.mode: expected p3o_cbf, p3o or ppo_reward_shaping, got '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("train.gamma must be in (0, 1)");
  if (!(lambda > 0.0 && lambda <= 1.0)) throw ConfigError("train.lambda must be in (0, 1]");
  if (!(clip_eps > 0.0)) throw ConfigError("train.clip_eps must be positive");
  for (double k : kappa)
    if (!(k >= 0.0)) throw ConfigError("train.kappa entries must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(lr_final_frac >= 0.0 && lr_final_frac <= 1.0)) throw ConfigError("train.lr_final_frac must be in [0, 1]");
  if (epochs <= 0 || minibatches <= 0 || num_envs <= 0 || horizon <= 0)
    throw ConfigError("train: epochs, minibatches, num_envs and horizon must be positive");
  if (num_envs * horizon < 2 * minibatches) throw ConfigError("train: batch too small for the minibatch count");
  if (total_steps <= 0) throw ConfigError("train.total_steps must be positive");
  if (scenarios.empty()) throw ConfigError("train.scenarios must not be empty");
  if (start_level < 0 || start_level > 2) throw ConfigError("train.start_level must be in [0, 2]");
}

namespace {

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

json train_config_to_json(const TrainConfig& c) {
  json j = {{"gamma", c.gamma},
            {"lambda", c.lambda},
            {"clip_eps", c.clip_eps},
            {"kappa", c.kappa},
            {"d", c.d},
            {"lr", c.lr},
            {"lr_final_frac", c.lr_final_frac},
            {"epochs", c.epochs},
            {"minibatches", c.minibatches},
            {"num_envs", c.num_envs},
            {"horizon", c.horizon},
            {"total_steps", c.total_steps},
            {"mode", mode_name(c.mode)},
            {"entropy_coef", c.entropy_coef},
            {"w_c", c.w_c},
            {"value_coef", c.value_coef},
            {"max_grad_norm", c.max_grad_norm},
            {"log_std_floor", c.log_std_floor},
            {"checkpoint_every", c.checkpoint_every},
            {"scenarios", c.scenarios},
            {"start_level", c.start_level},
            {"net", net_config_to_json(c.net)}};
  if (c.cbf_cost) j["cbf_cost"] = *c.cbf_cost;
  if (c.comfort_rewards) j["comfort_rewards"] = *c.comfort_rewards;
  return j;
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  const std::string w = "train";
  check_keys(j, {"gamma", "lambda", "clip_eps", "kappa", "d", "lr", "lr_final_frac", "epochs", "minibatches", "num_envs",
                 "horizon", "total_steps", "mode", "entropy_coef", "w_c", "value_coef", "max_grad_norm",
                 "log_std_floor", "checkpoint_every", "scenarios", "start_level", "net", "cbf_cost", "comfort_rewards"},
             w);
  read(j, "gamma", c.gamma, w);
  read(j, "lambda", c.lambda, w);
  read(j, "clip_eps", c.clip_eps, w);
  read(j, "kappa", c.kappa, w);
  read(j, "d", c.d, w);
  read(j, "lr", c.lr, w);
  read(j, "lr_final_frac", c.lr_final_frac, w);
  read(j, "epochs", c.epochs, w);
  read(j, "minibatches", c.minibatches, w);
  read(j, "num_envs", c.num_envs, w);
  read(j, "horizon", c.horizon, w);
  read(j, "total_steps", c.total_steps, w);
  if (j.contains("mode")) {
    if (!j["mode"].is_string()) throw ConfigError("train.mode: wrong type");
    c.mode = parse_mode(j["mode"].get<std::string>());
  }
  read(j, "entropy_coef", c.entropy_coef, w);
  read(j, "w_c", c.w_c, w);
  read(j, "value_coef", c.value_coef, w);
  read(j, "max_grad_norm", c.max_grad_norm, w);
  read(j, "log_std_floor", c.log_std_floor, w);
  read(j, "checkpoint_every", c.checkpoint_every, w);
  read(j, "scenarios", c.scenarios, w);
  read(j, "start_level", c.start_level, w);
  if (j.contains("net")) c.net = net_config_from_json(j["net"], c.net);
  if (j.contains("cbf_cost")) {
    bool b = false;
    read(j, "cbf_cost", b, w);
    c.cbf_cost = b;
  }
  if (j.contains("comfort_rewards")) {
    bool b = false;
    read(j, "comfort_rewards", b, w);
    c.comfort_rewards = b;
  }
  c.validate();
  return c;
}

json run_config_to_json(const RunConfig& c) {
  json env = env::env_config_to_json(c.env);
  return {{"seed", c.seed},
          {"name", c.name},
          {"env", env},
          {"cbf", env::cbf_config_to_json(c.env.cbf)},
          {"train", train_config_to_json(c.train)},
          {"eval", c.eval}};
}

RunConfig run_config_from_json(const json& j) {
  check_keys(j, {"seed", "name", "env", "cbf", "train", "eval"}, "config");
  RunConfig c;
  read(j, "seed", c.seed, "config");
  read(j, "name", c.name, "config");
  if (j.contains("env")) c.env = env::env_config_from_json(j["env"], c.env);
  if (j.contains("cbf")) c.env.cbf = env::cbf_config_from_json(j["cbf"], c.env.cbf);
  if (j.contains("train")) c.train = train_config_from_json(j["train"], c.train);
  if (j.contains("eval")) {
    if (!j["eval"].is_object()) throw ConfigError("eval: expected an object");
    c.eval = j["eval"];
  }
  c.train.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("config file not found: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": invalid JSON (" + e.what() + ")");
  }
  return run_config_from_json(j);
}

env::EnvConfig training_env_config(const env::EnvConfig& base, const TrainConfig& tc) {
  env::EnvConfig e = base;
  e.training = true;
  e.level = tc.start_level;
  e.reward.comfort_terms = tc.uses_comfort();
  return e;
}

namespace {

ad::Matrix rows_of(const std::vector<env::StepResult>& results, bool critic) {
  const auto& first = critic ? results[0].critic_obs : results[0].actor_obs;
  ad::Matrix m(static_cast<Eigen::Index>(results.size()), static_cast<Eigen::Index>(first.size()));
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& v = critic ? results[i].critic_obs : results[i].actor_obs;
    m.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  return m;
}

// Last-layer parameter names of critic head k.
std::pair<std::string, std::string> head_output_params(const NetConfig& net, int k) {
  const std::string base = "critic/head" + std::to_string(k) + "/l" + std::to_string(net.critic_hidden.size());
  return {base + "/w", base + "/b"};
}

double clip_group(ad::ParamStore& grads, const std::string& prefix, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads.entries())
    if (name.rfind(prefix, 0) == 0) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (const auto& [name, g] : grads.entries())
      if (name.rfind(prefix, 0) == 0) grads.mutable_at(name) *= s;
  }
  return norm;
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

// Training allocates and frees the same large temporaries every minibatch;
// keeping them on the heap instead of fresh mmaps avoids page-fault churn.
void tune_allocator() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

constexpr std::uint64_t kResetStream = 0x7e5e7000;
constexpr std::uint64_t kActionStream = 0xac710000;
constexpr std::uint64_t kShuffleStream = 0x5b0ff1e0;

}  // namespace

Trainer::Trainer(RunConfig cfg, std::vector<sim::Scenario> scenarios)
    : cfg_(std::move(cfg)),
      env_cfg_(training_env_config(cfg_.env, cfg_.train)),
      curriculum_(env_cfg_.curriculum, cfg_.train.start_level),
      net_(cfg_.train.net, Dims{env::kProprioWidth, env::kHistory, env_cfg_.scan_width(), env::kPrivilegedWidth},
           derive_seed(cfg_.seed, 0x11e7)),
      obs_norm_(env_cfg_.critic_obs_dim()),
      adam_(net_.params()) {
  cfg_.train.validate();
  tune_allocator();
  const int n = cfg_.train.num_envs;
  envs_.reserve(static_cast<std::size_t>(n));
  for (int e = 0; e < n; ++e) {
    envs_.emplace_back(env_cfg_, scenarios);
    action_rngs_.emplace_back(derive_seed(cfg_.seed, kActionStream + static_cast<std::uint64_t>(e)));
  }
  ep_return_.assign(static_cast<std::size_t>(n), 0.0);
  for (auto& env : envs_) {
    env.curriculum().set_level(curriculum_.level());
    current_.push_back(env.reset(derive_seed(cfg_.seed, kResetStream + episode_counter_++)));
  }
  obs_norm_.update(rows_of(current_, true));
}

ad::Matrix Trainer::normalize(const ad::Matrix& critic_rows) const { return obs_norm_.apply(critic_rows); }

ad::Matrix Trainer::scaled_values(const ad::Matrix& critic_norm_rows) const {
  constexpr Eigen::Index kChunk = 1024;
  ad::Matrix out(critic_norm_rows.rows(), kNumValueHeads);
  for (Eigen::Index r = 0; r < critic_norm_rows.rows(); r += kChunk) {
    const Eigen::Index len = std::min(kChunk, critic_norm_rows.rows() - r);
    out.middleRows(r, len) = net_.values(critic_norm_rows.middleRows(r, len));
  }
  for (int k = 0; k < kNumValueHeads; ++k) out.col(k) *= ret_scale_[static_cast<std::size_t>(k)];
  return out;
}

double Trainer::entropy_coef() const {
  const double frac = 1.0 - static_cast<double>(steps_) / static_cast<double>(cfg_.train.total_steps);
  return cfg_.train.entropy_coef * std::max(0.0, frac);
}

double Trainer::learning_rate() const {
  const double frac = std::min(1.0, static_cast<double>(steps_) / static_cast<double>(cfg_.train.total_steps));
  return cfg_.train.lr * (1.0 - frac * (1.0 - cfg_.train.lr_final_frac));
}

RolloutBatch Trainer::collect() {
  const auto& tc = cfg_.train;
  const int n_env = tc.num_envs;
  const int T = tc.horizon;
  const Eigen::Index n = static_cast<Eigen::Index>(n_env) * T;
  const int da = env_cfg_.actor_obs_dim();
  const int dc = env_cfg_.critic_obs_dim();

  RolloutBatch b;
  b.num_envs = n_env;
  b.horizon = T;
  b.actor_obs.resize(n, da);
  b.critic_obs.resize(n, dc);
  b.actions.resize(n, env::kPolicyActionDim);
  b.log_probs.resize(n, 1);
  b.rewards.resize(n, 1);
  b.costs.resize(n, env::kNumCosts);
  b.terminal.assign(static_cast<std::size_t>(n), 0);
  b.boundary.assign(static_cast<std::size_t>(n), 0);
  ad::Matrix raw(n, dc);

  // Critic rows whose values are needed for truncation bootstraps.
  std::vector<Eigen::Index> trunc_rows;
  std::vector<std::vector<double>> trunc_obs;

  const std::vector<double> log_std = net_.log_std();
  std::vector<env::StepResult> results(static_cast<std::size_t>(n_env));

  for (int t = 0; t < T; ++t) {
    const ad::Matrix crit_raw = rows_of(current_, true);
    const ad::Matrix crit = normalize(crit_raw);
    const ad::Matrix act_obs = crit.leftCols(da);
    const ad::Matrix mean = net_.action_mean(act_obs);
    const Eigen::Index r0 = static_cast<Eigen::Index>(t) * n_env;
    raw.middleRows(r0, n_env) = crit_raw;
    b.critic_obs.middleRows(r0, n_env) = crit;
    b.actor_obs.middleRows(r0, n_env) = act_obs;

    std::vector<std::array<double, env::kPolicyActionDim>> actions(static_cast<std::size_t>(n_env));
    for (int e = 0; e < n_env; ++e) {
      auto& a = actions[static_cast<std::size_t>(e)];
      auto& rng = action_rngs_[static_cast<std::size_t>(e)];
      for (int k = 0; k < env::kPolicyActionDim; ++k)
        a[static_cast<std::size_t>(k)] = mean(e, k) + std::exp(log_std[static_cast<std::size_t>(k)]) * rng.normal();
      const std::span<const double> mrow(mean.row(e).data(), env::kPolicyActionDim);
      b.log_probs(r0 + e, 0) = nn::gaussian_logprob(mrow, log_std, a);
      for (int k = 0; k < env::kPolicyActionDim; ++k) b.actions(r0 + e, k) = a[static_cast<std::size_t>(k)];
    }

    auto step_range = [&](int lo, int hi) {
      for (int e = lo; e < hi; ++e)
        results[static_cast<std::size_t>(e)] = envs_[static_cast<std::size_t>(e)].step(actions[static_cast<std::size_t>(e)]);
    };
    if (jobs_ > 1 && n_env > 1) {
      std::vector<std::thread> pool;
      const int per = (n_env + jobs_ - 1) / jobs_;
      for (int lo = 0; lo < n_env; lo += per) pool.emplace_back(step_range, lo, std::min(n_env, lo + per));
      for (auto& th : pool) th.join();
    } else {
      step_range(0, n_env);
    }

    for (int e = 0; e < n_env; ++e) {
      auto& res = results[static_cast<std::size_t>(e)];
      const Eigen::Index row = r0 + e;
      double r = res.reward;
      if (tc.mode == Mode::kPpoRewardShaping) r -= tc.w_c * (res.costs[env::kCostSafe] + res.costs[env::kCostLimit]);
      b.rewards(row, 0) = r;
      for (int k = 0; k < env::kNumCosts; ++k) b.costs(row, k) = res.costs[static_cast<std::size_t>(k)];
      ep_return_[static_cast<std::size_t>(e)] += res.reward;
      if (res.terminated || res.truncated) {
        b.boundary[static_cast<std::size_t>(row)] = 1;
        b.terminal[static_cast<std::size_t>(row)] = res.terminated ? 1 : 0;
        if (!res.terminated) {
          trunc_rows.push_back(row);
          trunc_obs.push_back(res.critic_obs);
        }
        const bool success = res.info.count("success") && res.info.at("success") > 0.5;
        b.episode_returns.push_back(ep_return_[static_cast<std::size_t>(e)]);
        b.episode_success.push_back(success ? 1 : 0);
        ep_return_[static_cast<std::size_t>(e)] = 0.0;
        curriculum_.record(success);
        auto& env = envs_[static_cast<std::size_t>(e)];
        env.curriculum().set_level(curriculum_.level());
        current_[static_cast<std::size_t>(e)] = env.reset(derive_seed(cfg_.seed, kResetStream + episode_counter_++));
      } else {
        current_[static_cast<std::size_t>(e)] = std::move(res);
      }
    }
  }

  // Values for every visited state, then bootstraps.
  b.values = scaled_values(b.critic_obs);
  b.next_values = ad::Matrix::Zero(n, kNumValueHeads);
  const ad::Matrix last = scaled_values(normalize(rows_of(current_, true)));
  ad::Matrix trunc_vals;
  if (!trunc_rows.empty()) {
    ad::Matrix m(static_cast<Eigen::Index>(trunc_obs.size()), dc);
    for (std::size_t i = 0; i < trunc_obs.size(); ++i)
      m.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(trunc_obs[i].data(), dc);
    trunc_vals = scaled_values(normalize(m));
  }
  for (Eigen::Index row = 0; row < n; ++row) {
    if (b.terminal[static_cast<std::size_t>(row)]) continue;
    if (!b.boundary[static_cast<std::size_t>(row)])
    {
      if (row + n_env < n)
        b.next_values.row(row) = b.values.row(row + n_env);
      else
        b.next_values.row(row) = last.row(row % n_env);
    }
  }
  for (std::size_t i = 0; i < trunc_rows.size(); ++i) b.next_values.row(trunc_rows[i]) = trunc_vals.row(static_cast<Eigen::Index>(i));

  obs_norm_.update(raw);
  steps_ += n;
  return b;
}

UpdateStats Trainer::update(const RolloutBatch& b) {
  const auto& tc = cfg_.train;
  const int n_env = b.num_envs;
  const int T = b.horizon;
  const std::size_t n = b.size();

  // Per-channel GAE over each environment's time series.
  std::array<std::vector<double>, kNumValueHeads> adv;
  std::array<std::vector<double>, kNumValueHeads> ret;
  for (auto& a : adv) a.assign(n, 0.0);
  for (auto& r : ret) r.assign(n, 0.0);
  std::array<double, env::kNumCosts> j_cost{};
  {
    std::array<std::vector<double>, env::kNumCosts> all_costs;
    std::vector<std::uint8_t> all_bound;
    std::vector<double> rw(T), v(T), nv(T);
    std::vector<std::uint8_t> term(T), bound(T);
    for (int e = 0; e < n_env; ++e) {
      for (int t = 0; t < T; ++t) {
        const std::size_t row = static_cast<std::size_t>(t) * n_env + e;
        term[t] = b.terminal[row];
        bound[t] = b.boundary[row];
        all_bound.push_back(t + 1 == T ? 1 : bound[t]);
      }
      for (int k = 0; k < kNumValueHeads; ++k) {
        for (int t = 0; t < T; ++t) {
          const Eigen::Index row = static_cast<Eigen::Index>(t) * n_env + e;
          rw[t] = k == 0 ? b.rewards(row, 0) : b.costs(row, k - 1);
          v[t] = b.values(row, k);
          nv[t] = b.next_values(row, k);
          if (k > 0) all_costs[static_cast<std::size_t>(k - 1)].push_back(rw[t]);
        }
        const GaeResult g = gae_segmented(rw, v, nv, term, bound, tc.gamma, tc.lambda);
        for (int t = 0; t < T; ++t) {
          const std::size_t row = static_cast<std::size_t>(t) * n_env + e;
          adv[static_cast<std::size_t>(k)][row] = g.advantages[static_cast<std::size_t>(t)];
          ret[static_cast<std::size_t>(k)][row] = g.returns[static_cast<std::size_t>(t)];
        }
      }
    }
    for (int j = 0; j < env::kNumCosts; ++j)
      j_cost[static_cast<std::size_t>(j)] = discounted_segment_mean(all_costs[static_cast<std::size_t>(j)], all_bound, tc.gamma);
  }

  std::array<Normalized, kNumValueHeads> norm;
  for (int k = 0; k < kNumValueHeads; ++k) norm[static_cast<std::size_t>(k)] = normalize_advantages(adv[static_cast<std::size_t>(k)]);

  // Penalized constraints for this mode.
  std::vector<int> active;
  if (tc.mode != Mode::kPpoRewardShaping) {
    active.push_back(env::kCostSafe);
    active.push_back(env::kCostLimit);
    if (tc.uses_cbf_cost()) active.push_back(env::kCostCbf);
  }
  std::vector<double> kappa;
  for (int j : active) kappa.push_back(tc.kappa[static_cast<std::size_t>(j)]);

  const double ent_coef = entropy_coef();
  const double lr_now = learning_rate();
  UpdateStats stats;
  stats.j_cost = j_cost;
  int updates = 0;

  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng shuffle(derive_seed(cfg_.seed, kShuffleStream + static_cast<std::uint64_t>(iteration_)));
  const std::size_t mb = n / static_cast<std::size_t>(tc.minibatches);

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[shuffle.below(i)]);
    for (int m = 0; m < tc.minibatches; ++m) {
      const std::size_t lo = static_cast<std::size_t>(m) * mb;
      const std::size_t hi = m + 1 == tc.minibatches ? n : lo + mb;
      const Eigen::Index B = static_cast<Eigen::Index>(hi - lo);
      ad::Matrix a_obs(B, b.actor_obs.cols()), c_obs(B, b.critic_obs.cols()), acts(B, env::kPolicyActionDim);
      ad::Matrix old_lp(B, 1), adv_r(B, 1), targets(B, kNumValueHeads);
      std::vector<ad::Matrix> adv_c(env::kNumCosts, ad::Matrix(B, 1));
      for (Eigen::Index i = 0; i < B; ++i) {
        const std::size_t row = perm[lo + static_cast<std::size_t>(i)];
        const auto r = static_cast<Eigen::Index>(row);
        a_obs.row(i) = b.actor_obs.row(r);
        c_obs.row(i) = b.critic_obs.row(r);
        acts.row(i) = b.actions.row(r);
        old_lp(i, 0) = b.log_probs(r, 0);
        adv_r(i, 0) = norm[0].values[row];
        for (int j = 0; j < env::kNumCosts; ++j) adv_c[static_cast<std::size_t>(j)](i, 0) = norm[static_cast<std::size_t>(j + 1)].values[row];
        for (int k = 0; k < kNumValueHeads; ++k)
          targets(i, k) = ret[static_cast<std::size_t>(k)][row] / ret_scale_[static_cast<std::size_t>(k)];
      }

      ad::Graph g(net_.params());
      const auto head = net_.actor(g, g.constant(a_obs));
      const ad::Var logp = nn::gaussian_logprob(g, head, g.constant(acts));
      const ad::Var reward_clip = ppo_clip_objective(g, logp, old_lp, adv_r, tc.clip_eps);
      std::vector<ad::Var> viol;
      for (int j : active) {
        const auto& nj = norm[static_cast<std::size_t>(j + 1)];
        const ad::Var cc = cost_clip_objective(g, logp, old_lp, adv_c[static_cast<std::size_t>(j)], tc.clip_eps);
        viol.push_back(cost_violation_term(g, cc, j_cost[static_cast<std::size_t>(j)], tc.d[static_cast<std::size_t>(j)],
                                           tc.gamma, nj.mean, nj.std));
      }
      const ad::Var objective = p3o_loss(g, reward_clip, viol, kappa);
      const ad::Var entropy = nn::gaussian_entropy(g, head);
      const ad::Var actor_loss = g.neg(g.add(objective, g.scale(entropy, ent_coef)));
      const ad::Var v = net_.critic(g, g.constant(c_obs));
      const ad::Var value_loss = g.mean(g.square(g.sub(v, g.constant(targets))));
      const ad::Var total = g.add(actor_loss, g.scale(value_loss, tc.value_coef));

      if (!std::isfinite(g.scalar(total))) {
        std::ostringstream os;
        os << "non-finite loss at iteration " << iteration_ << " (reward_clip=" << g.scalar(reward_clip)
           << ", value_loss=" << g.scalar(value_loss) << ", adv mean=" << norm[0].mean << " std=" << norm[0].std
           << ", rewards mean=" << b.rewards.mean() << ", costs mean=" << b.costs.colwise().mean() << ")";
        throw TrainingError(os.str());
      }

      ad::ParamStore grads = g.backward(total);
      clip_group(grads, "actor/", tc.max_grad_norm);
      clip_group(grads, "critic/", tc.max_grad_norm);
      nn::AdamConfig ac;
      ac.lr = lr_now;
      adam_.step(net_.params(), grads, ac);

      stats.reward_clip += g.scalar(reward_clip);
      stats.p3o_objective += g.scalar(objective);
      stats.value_loss += g.scalar(value_loss);
      stats.entropy += g.scalar(entropy);
      for (std::size_t q = 0; q < active.size(); ++q)
        stats.violation[static_cast<std::size_t>(active[q])] += g.scalar(viol[q]);
      ++updates;
    }
  }
  const double inv = 1.0 / std::max(1, updates);
  stats.reward_clip *= inv;
  stats.p3o_objective *= inv;
  stats.value_loss *= inv;
  stats.entropy *= inv;
  for (auto& x : stats.violation) x *= inv;

  // Track return scale per head; the output layer is rescaled so predictions
  // in original units are preserved.
  for (int k = 0; k < kNumValueHeads; ++k) {
    const auto& r = ret[static_cast<std::size_t>(k)];
    double mean = 0.0;
    for (double x : r) mean += x;
    mean /= static_cast<double>(r.size());
    double var = 0.0;
    for (double x : r) var += (x - mean) * (x - mean);
    var /= static_cast<double>(r.size());
    const double target = std::max(1e-2, std::sqrt(var + mean * mean));
    const double old = ret_scale_[static_cast<std::size_t>(k)];
    const double fresh = iteration_ == 0 ? target : std::sqrt(0.9 * old * old + 0.1 * target * target);
    const auto [wn, bn] = head_output_params(tc.net, k);
    net_.params().mutable_at(wn) *= old / fresh;
    net_.params().mutable_at(bn) *= old / fresh;
    ret_scale_[static_cast<std::size_t>(k)] = fresh;
  }
  ++iteration_;
  return stats;
}

IterationMetrics Trainer::iterate() {
  const RolloutBatch batch = collect();
  IterationMetrics m;
  m.update = update(batch);
  m.step = steps_;
  m.j_cost = m.update.j_cost;
  m.level = curriculum_.level();
  if (!batch.episode_returns.empty()) {
    double s = 0.0;
    double succ = 0.0;
    for (std::size_t i = 0; i < batch.episode_returns.size(); ++i) {
      s += batch.episode_returns[i];
      succ += batch.episode_success[i];
    }
    m.reward = s / static_cast<double>(batch.episode_returns.size());
    m.success_rate = succ / static_cast<double>(batch.episode_returns.size());
  }
  return m;
}

void Trainer::train(const std::filesystem::path& out_dir, const std::function<void(const IterationMetrics&)>& on_iter) {
  std::ofstream csv;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream(out_dir / "config.json") << run_config_to_json(cfg_).dump(2) << "\n";
    csv.open(out_dir / "metrics.csv");
    csv << "step,reward,J_C1,J_C2,J_C3,success_rate,level\n";
  }
  long next_ckpt = cfg_.train.checkpoint_every > 0 ? cfg_.train.checkpoint_every : -1;
  while (steps_ < cfg_.train.total_steps) {
    const IterationMetrics m = iterate();
    if (csv.is_open()) {
      csv << m.step << "," << fmt(m.reward) << "," << fmt(m.j_cost[0]) << "," << fmt(m.j_cost[1]) << ","
          << fmt(m.j_cost[2]) << "," << fmt(m.success_rate) << "," << m.level << "\n";
      csv.flush();
    }
    if (on_iter) on_iter(m);
    if (!out_dir.empty() && next_ckpt > 0 && steps_ >= next_ckpt && steps_ < cfg_.train.total_steps) {
      save(out_dir / ("ckpt_" + std::to_string(steps_)));
      while (next_ckpt <= steps_) next_ckpt += cfg_.train.checkpoint_every;
    }
  }
  if (!out_dir.empty()) save(out_dir / ("ckpt_" + std::to_string(steps_)));
}

PolicyBundle Trainer::bundle() const {
  return {cfg_.train.net, net_.dims(), net_.params(), obs_norm_};
}

void Trainer::save(const std::filesystem::path& stem) const {
  ad::ParamStore extra;
  ad::Matrix rs(1, kNumValueHeads);
  for (int k = 0; k < kNumValueHeads; ++k) rs(0, k) = ret_scale_[static_cast<std::size_t>(k)];
  PolicyBundle b = bundle();
  b.params.add("norm/ret_scale", rs);
  save_policy(stem, b, steps_, run_config_to_json(cfg_));
}

void save_policy(const std::filesystem::path& stem, const PolicyBundle& b, long step, const json& config) {
  Checkpoint ck;
  ck.arrays = b.params;
  b.obs_norm.store(ck.arrays, "norm/obs");
  ck.training_step = step;
  ck.config = config;
  ck.config_hash = config_hash(config);
  save_checkpoint(stem, ck);
}

LoadedPolicy load_policy(const std::filesystem::path& path) {
  Checkpoint ck = load_checkpoint(path);
  LoadedPolicy out;
  out.config = run_config_from_json(ck.config);
  if (config_hash(ck.config) != ck.config_hash)
    std::cerr << "warning: checkpoint config_hash does not match its embedded config\n";
  out.step = ck.training_step;
  out.bundle.net = out.config.train.net;
  out.bundle.dims = Dims{env::kProprioWidth, env::kHistory, out.config.env.scan_width(), env::kPrivilegedWidth};
  if (!ck.arrays.contains("norm/obs/mean")) throw ConfigError("checkpoint has no observation normalizer");
  out.bundle.obs_norm = RunningNorm::load(ck.arrays, "norm/obs");
  ActorCritic ac(out.bundle.net, out.bundle.dims, ck.arrays);
  out.bundle.params = ac.params();
  return out;
}

}  // namespace safeloco::rl

#pragma once

// Actor and critics. Both consume a 10-step history laid out as
// [proprio_0..9 | scan_0..9]; each scan is linearly projected to a 64-d
// embedding, the embedding sequence runs through a GRU, and the final hidden
// state is concatenated with the flattened proprio/command history before the
// MLP trunk. The critic side has its own copy of the encoder, shared by the
// reward head and the three cost heads, and appends privileged features.

#include <array>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "safeloco/autodiff.hpp"
#include "safeloco/env.hpp"
#include "safeloco/nn.hpp"

namespace safeloco::rl {

inline constexpr int kNumValueHeads = 1 + env::kNumCosts;  // reward, C_safe, C_limit, C_D

struct NetConfig {
  int embed = 64;
  int gru_hidden = 128;
  std::vector<int> actor_hidden = {256, 128};
  std::vector<int> critic_hidden = {256, 128};
  double init_log_std = -0.7;
  double policy_out_gain = 0.01;
};

nlohmann::json net_config_to_json(const NetConfig& c);
NetConfig net_config_from_json(const nlohmann::json& j, NetConfig base = {});

// Per-dimension running mean/variance (parallel-merge update).
class RunningNorm {
 public:
  RunningNorm() = default;
  explicit RunningNorm(int dim);
  void update(const ad::Matrix& rows);
  // (x - mean) / sqrt(var + 1e-8), clipped to [-clip, clip].
  ad::Matrix apply(const ad::Matrix& rows) const;
  int dim() const { return static_cast<int>(mean_.size()); }
  double count() const { return count_; }

  void store(ad::ParamStore& out, const std::string& prefix) const;
  static RunningNorm load(const ad::ParamStore& in, const std::string& prefix);

  double clip = 10.0;

 private:
  Eigen::VectorXd mean_;
  Eigen::VectorXd var_;
  double count_ = 0.0;
};

struct Dims {
  int proprio = env::kProprioWidth;
  int history = env::kHistory;
  int scan = 0;
  int privileged = env::kPrivilegedWidth;

  int actor_obs() const { return history * (proprio + scan); }
  int critic_obs() const { return actor_obs() + privileged; }
};

class ActorCritic {
 public:
  ActorCritic(const NetConfig& cfg, const Dims& dims, std::uint64_t seed);
  // Rebuilds around existing parameters (shapes are validated).
  ActorCritic(const NetConfig& cfg, const Dims& dims, ad::ParamStore params);

  const NetConfig& config() const { return cfg_; }
  const Dims& dims() const { return dims_; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }
  std::size_t actor_param_count() const;
  std::size_t critic_param_count() const;

  // Graph builders. obs rows must already be normalized.
  nn::GaussianHead actor(ad::Graph& g, ad::Var actor_obs) const;
  // B x 4: columns reward, C_safe, C_limit, C_D.
  ad::Var critic(ad::Graph& g, ad::Var critic_obs) const;

  // Inference helpers.
  ad::Matrix action_mean(const ad::Matrix& actor_obs) const;
  ad::Matrix values(const ad::Matrix& critic_obs) const;
  std::vector<double> log_std() const;

 private:
  ad::Var encode(ad::Graph& g, const std::string& prefix, ad::Var obs) const;
  void init(std::uint64_t seed);

  NetConfig cfg_;
  Dims dims_;
  ad::ParamStore params_;
};

}  // namespace safeloco::rl

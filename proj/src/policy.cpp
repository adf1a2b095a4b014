#include "safeloco/policy.hpp"

#include <cmath>

#include "safeloco/errors.hpp"

namespace safeloco::rl {

nlohmann::json net_config_to_json(const NetConfig& c) {
  return {{"embed", c.embed},
          {"gru_hidden", c.gru_hidden},
          {"actor_hidden", c.actor_hidden},
          {"critic_hidden", c.critic_hidden},
          {"init_log_std", c.init_log_std},
          {"policy_out_gain", c.policy_out_gain}};
}

NetConfig net_config_from_json(const nlohmann::json& j, NetConfig c) {
  if (!j.is_object()) throw ConfigError("train.net: expected an object");
  for (const auto& [key, val] : j.items()) {
    try {
      if (key == "embed")
        c.embed = val.get<int>();
      else if (key == "gru_hidden")
        c.gru_hidden = val.get<int>();
      else if (key == "actor_hidden")
        c.actor_hidden = val.get<std::vector<int>>();
      else if (key == "critic_hidden")
        c.critic_hidden = val.get<std::vector<int>>();
      else if (key == "init_log_std")
        c.init_log_std = val.get<double>();
      else if (key == "policy_out_gain")
        c.policy_out_gain = val.get<double>();
      else
        throw ConfigError("train.net." + key + ": unknown key");
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("train.net." + key + ": wrong type");
    }
  }
  if (c.embed <= 0 || c.gru_hidden <= 0 || c.actor_hidden.empty() || c.critic_hidden.empty())
    throw ConfigError("train.net: widths must be positive and hidden lists non-empty");
  return c;
}

RunningNorm::RunningNorm(int dim) : mean_(Eigen::VectorXd::Zero(dim)), var_(Eigen::VectorXd::Ones(dim)) {}

void RunningNorm::update(const ad::Matrix& rows) {
  if (rows.rows() == 0) return;
  if (rows.cols() != mean_.size()) throw ConfigError("RunningNorm: width mismatch");
  const double n = static_cast<double>(rows.rows());
  const Eigen::VectorXd batch_mean = rows.colwise().mean().transpose();
  const Eigen::VectorXd batch_var =
      ((rows.rowwise() - batch_mean.transpose()).array().square().colwise().sum() / n).transpose();
  const double total = count_ + n;
  const Eigen::VectorXd delta = batch_mean - mean_;
  mean_ += delta * (n / total);
  const Eigen::VectorXd m2 =
      var_ * count_ + batch_var * n + delta.array().square().matrix() * (count_ * n / total);
  var_ = m2 / total;
  count_ = total;
}

ad::Matrix RunningNorm::apply(const ad::Matrix& rows) const {
  if (rows.cols() != mean_.size()) throw ConfigError("RunningNorm: width mismatch");
  const Eigen::RowVectorXd inv = (var_.array() + 1e-8).rsqrt().matrix().transpose();
  ad::Matrix out = (rows.rowwise() - mean_.transpose()).array().rowwise() * inv.array();
  return out.cwiseMax(-clip).cwiseMin(clip);
}

void RunningNorm::store(ad::ParamStore& out, const std::string& prefix) const {
  out.add(prefix + "/mean", ad::Matrix(mean_.transpose()));
  out.add(prefix + "/var", ad::Matrix(var_.transpose()));
  ad::Matrix c(1, 1);
  c(0, 0) = count_;
  out.add(prefix + "/count", c);
}

RunningNorm RunningNorm::load(const ad::ParamStore& in, const std::string& prefix) {
  RunningNorm n;
  n.mean_ = in.at(prefix + "/mean").row(0).transpose();
  n.var_ = in.at(prefix + "/var").row(0).transpose();
  n.count_ = in.at(prefix + "/count")(0, 0);
  return n;
}

namespace {

nn::MlpSpec trunk_spec(int in, const std::vector<int>& hidden, int out, bool activate_out) {
  nn::MlpSpec s;
  s.widths.push_back(in);
  s.widths.insert(s.widths.end(), hidden.begin(), hidden.end());
  if (out > 0) s.widths.push_back(out);
  s.hidden = nn::Activation::kTanh;
  s.output = activate_out ? nn::Activation::kTanh : nn::Activation::kIdentity;
  return s;
}

}  // namespace

ActorCritic::ActorCritic(const NetConfig& cfg, const Dims& dims, std::uint64_t seed) : cfg_(cfg), dims_(dims) {
  init(seed);
}

ActorCritic::ActorCritic(const NetConfig& cfg, const Dims& dims, ad::ParamStore params) : cfg_(cfg), dims_(dims) {
  init(0);
  for (const auto& [name, m] : params_.entries()) {
    if (!params.contains(name)) throw ConfigError("checkpoint is missing parameter '" + name + "'");
    const auto& src = params.at(name);
    if (src.rows() != m.rows() || src.cols() != m.cols())
      throw ConfigError("checkpoint parameter '" + name + "' has the wrong shape");
  }
  for (const auto& [name, _] : params_.entries()) params_.mutable_at(name) = params.at(name);
}

void ActorCritic::init(std::uint64_t seed) {
  Rng rng(seed);
  const int feat = cfg_.gru_hidden + dims_.history * dims_.proprio;
  for (const std::string side : {"actor", "critic"}) {
    nn::init_linear(params_, side + "/scan_proj", dims_.scan, cfg_.embed, 1.0, rng);
    nn::init_gru(params_, side + "/gru", cfg_.embed, cfg_.gru_hidden, rng);
  }
  nn::init_mlp(params_, "actor/trunk", trunk_spec(feat, cfg_.actor_hidden, env::kPolicyActionDim, false), rng,
               cfg_.policy_out_gain);
  params_.add("actor/log_std", ad::Matrix::Constant(1, env::kPolicyActionDim, cfg_.init_log_std));
  for (int k = 0; k < kNumValueHeads; ++k)
    nn::init_mlp(params_, "critic/head" + std::to_string(k),
                 trunk_spec(feat + dims_.privileged, cfg_.critic_hidden, 1, false), rng, 1.0);
}

std::size_t ActorCritic::actor_param_count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : params_.entries())
    if (name.rfind("actor/", 0) == 0) n += static_cast<std::size_t>(m.size());
  return n;
}

std::size_t ActorCritic::critic_param_count() const { return params_.scalar_count() - actor_param_count(); }

ad::Var ActorCritic::encode(ad::Graph& g, const std::string& prefix, ad::Var obs) const {
  const int rows = static_cast<int>(g.value(obs).rows());
  const int prop_w = dims_.history * dims_.proprio;
  ad::Var h = g.constant(ad::Matrix::Zero(rows, cfg_.gru_hidden));
  for (int t = 0; t < dims_.history; ++t) {
    ad::Var scan = g.slice_cols(obs, prop_w + t * dims_.scan, dims_.scan);
    ad::Var e = nn::linear(g, prefix + "/scan_proj", scan);
    h = nn::gru_step(g, prefix + "/gru", h, e);
  }
  const std::array<ad::Var, 2> parts = {h, g.slice_cols(obs, 0, prop_w)};
  return g.concat_cols(parts);
}

nn::GaussianHead ActorCritic::actor(ad::Graph& g, ad::Var actor_obs) const {
  if (g.value(actor_obs).cols() != dims_.actor_obs())
    throw ConfigError("actor: observation width " + std::to_string(g.value(actor_obs).cols()) + " != " +
                      std::to_string(dims_.actor_obs()));
  const int feat = cfg_.gru_hidden + dims_.history * dims_.proprio;
  ad::Var f = encode(g, "actor", actor_obs);
  ad::Var mean = nn::mlp_forward(g, "actor/trunk", f, trunk_spec(feat, cfg_.actor_hidden, env::kPolicyActionDim, false));
  return nn::gaussian_head(g, mean, "actor/log_std");
}

ad::Var ActorCritic::critic(ad::Graph& g, ad::Var critic_obs) const {
  if (g.value(critic_obs).cols() != dims_.critic_obs())
    throw ConfigError("critic: observation width " + std::to_string(g.value(critic_obs).cols()) + " != " +
                      std::to_string(dims_.critic_obs()));
  const int feat = cfg_.gru_hidden + dims_.history * dims_.proprio;
  ad::Var f = encode(g, "critic", critic_obs);
  const std::array<ad::Var, 2> parts = {f, g.slice_cols(critic_obs, dims_.actor_obs(), dims_.privileged)};
  ad::Var x = g.concat_cols(parts);
  std::vector<ad::Var> heads;
  for (int k = 0; k < kNumValueHeads; ++k)
    heads.push_back(nn::mlp_forward(g, "critic/head" + std::to_string(k), x,
                                    trunk_spec(feat + dims_.privileged, cfg_.critic_hidden, 1, false)));
  return g.concat_cols(heads);
}

ad::Matrix ActorCritic::action_mean(const ad::Matrix& actor_obs) const {
  ad::Graph g(params_);
  auto head = actor(g, g.constant(actor_obs));
  return g.value(head.mean);
}

ad::Matrix ActorCritic::values(const ad::Matrix& critic_obs) const {
  ad::Graph g(params_);
  return g.value(critic(g, g.constant(critic_obs)));
}

std::vector<double> ActorCritic::log_std() const {
  const auto& ls = params_.at("actor/log_std");
  std::vector<double> out(static_cast<std::size_t>(ls.cols()));
  for (Eigen::Index i = 0; i < ls.cols(); ++i)
    out[static_cast<std::size_t>(i)] = std::clamp(ls(0, i), nn::kLogStdMin, nn::kLogStdMax);
  return out;
}

}  // namespace safeloco::rl

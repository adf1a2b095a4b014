#pragma once

#include <array>
#include <vector>

#include "safeloco/p3o.hpp"
#include "safeloco/policy.hpp"
#include "support/gradcheck.hpp"

namespace safeloco::testing {

struct HingeFixture {
  ad::ParamStore ppo_grads;
  ad::ParamStore p3o_grads;
  std::array<double, 3> violations{};
  double ppo_objective = 0.0;
  double p3o_objective = 0.0;
};

// Small actor on a random batch. Cost advantages are shifted far negative so
// every violation term is < 0; the penalized objective is then built exactly
// as the trainer builds it and differentiated next to the plain clip.
inline HingeFixture inactive_hinge_fixture(std::uint64_t seed) {
  rl::NetConfig cfg{8, 6, {16}, {16}, -0.5, 0.5};
  rl::Dims dims;
  dims.scan = 16;
  rl::ActorCritic net(cfg, dims, seed);
  Rng rng(seed + 1);
  const int batch = 24;
  const ad::Matrix obs = random_matrix(batch, dims.actor_obs(), rng);
  const ad::Matrix mean = net.action_mean(obs);
  ad::Matrix actions = mean + random_matrix(batch, env::kPolicyActionDim, rng, 0.6);

  ad::Matrix logp_old(batch, 1);
  {
    ad::Graph g(net.params());
    const auto head = net.actor(g, g.constant(obs));
    logp_old = g.value(nn::gaussian_logprob(g, head, g.constant(actions)));
    logp_old.array() += 0.3 * random_matrix(batch, 1, rng).array();
  }
  auto normalized = [&](double shift) {
    std::vector<double> raw(static_cast<std::size_t>(batch));
    for (auto& x : raw) x = shift + rng.normal();
    const rl::Normalized n = rl::normalize_advantages(raw);
    return std::make_pair(ad::Matrix(Eigen::Map<const ad::Matrix>(n.values.data(), batch, 1)), n);
  };
  const auto [adv_r, nr] = normalized(0.0);
  std::array<ad::Matrix, 3> adv_c;
  std::array<rl::Normalized, 3> nc;
  for (int j = 0; j < 3; ++j) std::tie(adv_c[static_cast<std::size_t>(j)], nc[static_cast<std::size_t>(j)]) = normalized(-6.0);

  const double eps = 0.2, gamma = 0.99;
  const std::array<double, 3> j_cost = {0.4, 1.3, 0.05}, d = {0.0, 0.0, 0.0}, kappa = {1.0, 1.0, 1.0};

  HingeFixture out;
  {
    ad::Graph g(net.params());
    const auto head = net.actor(g, g.constant(obs));
    const ad::Var lp = nn::gaussian_logprob(g, head, g.constant(actions));
    const ad::Var clip = rl::ppo_clip_objective(g, lp, logp_old, adv_r, eps);
    out.ppo_objective = g.scalar(clip);
    out.ppo_grads = g.backward(g.neg(clip));
  }
  {
    ad::Graph g(net.params());
    const auto head = net.actor(g, g.constant(obs));
    const ad::Var lp = nn::gaussian_logprob(g, head, g.constant(actions));
    const ad::Var clip = rl::ppo_clip_objective(g, lp, logp_old, adv_r, eps);
    std::vector<ad::Var> viol;
    for (std::size_t j = 0; j < 3; ++j) {
      const ad::Var cc = rl::cost_clip_objective(g, lp, logp_old, adv_c[j], eps);
      viol.push_back(rl::cost_violation_term(g, cc, j_cost[j], d[j], gamma, nc[j].mean, nc[j].std));
      out.violations[j] = g.scalar(viol.back());
    }
    const ad::Var obj = rl::p3o_loss(g, clip, viol, kappa);
    out.p3o_objective = g.scalar(obj);
    out.p3o_grads = g.backward(g.neg(obj));
  }
  return out;
}

// Bitwise equality over the "actor/" parameters.
inline bool actor_grads_bit_equal(const ad::ParamStore& a, const ad::ParamStore& b) {
  for (const auto& [name, m] : a.entries()) {
    if (name.rfind("actor/", 0) != 0) continue;
    const ad::Matrix& o = b.at(name);
    if (o.rows() != m.rows() || o.cols() != m.cols()) return false;
    if (std::memcmp(o.data(), m.data(), sizeof(double) * static_cast<std::size_t>(m.size())) != 0) return false;
  }
  return true;
}

}  // namespace safeloco::testing

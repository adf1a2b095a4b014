#include "safeloco/p3o.hpp"

#include <algorithm>
#include <cmath>

#include "safeloco/errors.hpp"

namespace safeloco::rl {

GaeResult gae(std::span<const double> rewards, std::span<const double> values, std::span<const std::uint8_t> dones,
              double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n + 1 || dones.size() != n)
    throw UsageError("gae: expected |values| = |rewards| + 1 and |dones| = |rewards|");
  return gae_segmented(rewards, values.first(n), values.subspan(1), dones, dones, gamma, lambda);
}

GaeResult gae_segmented(std::span<const double> rewards, std::span<const double> values,
                        std::span<const double> next_values, std::span<const std::uint8_t> terminal,
                        std::span<const std::uint8_t> boundary, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || next_values.size() != n || terminal.size() != n || boundary.size() != n)
    throw UsageError("gae: length mismatch");
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double carry = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double bootstrap = terminal[k] ? 0.0 : next_values[k];
    const double delta = rewards[k] + gamma * bootstrap - values[k];
    if (boundary[k]) carry = 0.0;
    carry = delta + gamma * lambda * carry;
    out.advantages[k] = carry;
    out.returns[k] = carry + values[k];
  }
  return out;
}

Normalized normalize_advantages(std::span<const double> adv) {
  if (adv.empty()) throw UsageError("normalize_advantages: empty batch");
  Normalized out;
  double sum = 0.0;
  for (double a : adv) sum += a;
  out.mean = sum / static_cast<double>(adv.size());
  double ss = 0.0;
  for (double a : adv) ss += (a - out.mean) * (a - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(adv.size()));
  out.values.reserve(adv.size());
  for (double a : adv) out.values.push_back((a - out.mean) / (out.std + 1e-8));
  return out;
}

namespace {

void check_aligned(std::size_t a, std::size_t b, std::size_t c) {
  if (a != b || b != c) throw UsageError("clip objective: inputs must be aligned");
  if (a == 0) throw UsageError("clip objective: empty batch");
}

}  // namespace

double ppo_clip_objective(std::span<const double> logp_new, std::span<const double> logp_old,
                          std::span<const double> adv, double eps) {
  check_aligned(logp_new.size(), logp_old.size(), adv.size());
  double s = 0.0;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const double r = std::exp(logp_new[i] - logp_old[i]);
    s += std::min(r * adv[i], std::clamp(r, 1.0 - eps, 1.0 + eps) * adv[i]);
  }
  return s / static_cast<double>(adv.size());
}

double cost_clip_objective(std::span<const double> logp_new, std::span<const double> logp_old,
                           std::span<const double> adv, double eps) {
  check_aligned(logp_new.size(), logp_old.size(), adv.size());
  double s = 0.0;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const double r = std::exp(logp_new[i] - logp_old[i]);
    s += std::max(r * adv[i], std::clamp(r, 1.0 - eps, 1.0 + eps) * adv[i]);
  }
  return s / static_cast<double>(adv.size());
}

namespace {

std::pair<ad::Var, ad::Var> surrogates(ad::Graph& g, ad::Var logp_new, const ad::Matrix& logp_old,
                                       const ad::Matrix& adv, double eps) {
  const auto& lp = g.value(logp_new);
  if (lp.rows() != logp_old.rows() || lp.rows() != adv.rows() || lp.cols() != 1 || logp_old.cols() != 1 ||
      adv.cols() != 1)
    throw UsageError("clip objective: expected aligned B x 1 inputs");
  ad::Var a = g.constant(adv);
  ad::Var ratio = g.exp(g.sub(logp_new, g.constant(logp_old)));
  ad::Var unclipped = g.mul(ratio, a);
  ad::Var clipped = g.mul(g.clamp(ratio, 1.0 - eps, 1.0 + eps), a);
  return {unclipped, clipped};
}

}  // namespace

ad::Var ppo_clip_objective(ad::Graph& g, ad::Var logp_new, const ad::Matrix& logp_old, const ad::Matrix& adv,
                           double eps) {
  auto [u, c] = surrogates(g, logp_new, logp_old, adv, eps);
  return g.mean(g.minimum(u, c));
}

ad::Var cost_clip_objective(ad::Graph& g, ad::Var logp_new, const ad::Matrix& logp_old, const ad::Matrix& adv,
                            double eps) {
  auto [u, c] = surrogates(g, logp_new, logp_old, adv, eps);
  return g.mean(g.maximum(u, c));
}

double cost_violation_term(double clip_loss_cost, double j_cost, double d, double gamma, double mu, double sigma) {
  return clip_loss_cost + ((1.0 - gamma) * (j_cost - d) + mu) / std::max(sigma, 1e-8);
}

ad::Var cost_violation_term(ad::Graph& g, ad::Var clip_loss_cost, double j_cost, double d, double gamma, double mu,
                            double sigma) {
  return g.add_scalar(clip_loss_cost, ((1.0 - gamma) * (j_cost - d) + mu) / std::max(sigma, 1e-8));
}

double p3o_loss(double reward_clip, std::span<const double> violations, std::span<const double> kappa) {
  if (violations.size() != kappa.size()) throw UsageError("p3o_loss: violations and kappa must align");
  double penalty = 0.0;
  for (std::size_t j = 0; j < violations.size(); ++j) penalty += kappa[j] * std::max(0.0, violations[j]);
  return reward_clip - penalty;
}

ad::Var p3o_loss(ad::Graph& g, ad::Var reward_clip, std::span<const ad::Var> violations,
                 std::span<const double> kappa) {
  if (violations.size() != kappa.size()) throw UsageError("p3o_loss: violations and kappa must align");
  ad::Var out = reward_clip;
  for (std::size_t j = 0; j < violations.size(); ++j) {
    if (!(g.scalar(violations[j]) > 0.0) || kappa[j] == 0.0) continue;
    out = g.sub(out, g.scale(violations[j], kappa[j]));
  }
  return out;
}

double discounted_segment_mean(std::span<const double> costs, std::span<const std::uint8_t> boundary, double gamma) {
  if (costs.size() != boundary.size()) throw UsageError("discounted_segment_mean: length mismatch");
  if (costs.empty()) return 0.0;
  double total = 0.0;
  int segments = 0;
  double acc = 0.0;
  double disc = 1.0;
  for (std::size_t i = 0; i < costs.size(); ++i) {
    acc += disc * costs[i];
    disc *= gamma;
    if (boundary[i] || i + 1 == costs.size()) {
      total += acc;
      ++segments;
      acc = 0.0;
      disc = 1.0;
    }
  }
  return total / segments;
}

}  // namespace safeloco::rl

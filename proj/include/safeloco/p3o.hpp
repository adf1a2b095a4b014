#pragma once

// Advantage estimation and the penalized clipped objective.

#include <cstdint>
#include <span>
#include <vector>

#include "safeloco/autodiff.hpp"

namespace safeloco::rl {

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;  // advantages + values
};

// values has one more entry than rewards (bootstrap for the last step).
// dones[t] != 0 means the episode terminated after step t, so values[t+1]
// is not used and the recursion restarts.
GaeResult gae(std::span<const double> rewards, std::span<const double> values, std::span<const std::uint8_t> dones,
              double gamma, double lambda);

// General form for batches with truncation: next_values[t] is V(s_{t+1})
// (for a truncated step, the value of the final observation);
// terminal[t] drops the bootstrap; boundary[t] restarts the recursion
// (terminal or truncated).
GaeResult gae_segmented(std::span<const double> rewards, std::span<const double> values,
                        std::span<const double> next_values, std::span<const std::uint8_t> terminal,
                        std::span<const std::uint8_t> boundary, double gamma, double lambda);

struct Normalized {
  std::vector<double> values;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

// (x - mean) / (std + 1e-8). Throws UsageError on an empty batch.
Normalized normalize_advantages(std::span<const double> adv);

// mean_i min(r_i A_i, clip(r_i, 1-eps, 1+eps) A_i), r_i = exp(new_i - old_i).
double ppo_clip_objective(std::span<const double> logp_new, std::span<const double> logp_old,
                          std::span<const double> adv, double eps);
// Pessimistic cost surrogate: mean_i max(r_i A_i, clip(r_i) A_i).
double cost_clip_objective(std::span<const double> logp_new, std::span<const double> logp_old,
                           std::span<const double> adv, double eps);

// Graph versions; logp_new is B x 1, old/adv are B x 1 constants.
ad::Var ppo_clip_objective(ad::Graph& g, ad::Var logp_new, const ad::Matrix& logp_old, const ad::Matrix& adv,
                           double eps);
ad::Var cost_clip_objective(ad::Graph& g, ad::Var logp_new, const ad::Matrix& logp_old, const ad::Matrix& adv,
                            double eps);

// clip + ((1 - gamma) (J - d) + mu) / sigma, with sigma floored at 1e-8.
double cost_violation_term(double clip_loss_cost, double j_cost, double d, double gamma, double mu, double sigma);
ad::Var cost_violation_term(ad::Graph& g, ad::Var clip_loss_cost, double j_cost, double d, double gamma, double mu,
                            double sigma);

// reward_clip - sum_j kappa_j max(0, violation_j). Inactive hinges are not
// added to the graph at all, so the result is the plain clipped objective
// node-for-node when every violation is <= 0.
double p3o_loss(double reward_clip, std::span<const double> violations, std::span<const double> kappa);
ad::Var p3o_loss(ad::Graph& g, ad::Var reward_clip, std::span<const ad::Var> violations,
                 std::span<const double> kappa);

// Mean over segments of the discounted cost sum from each segment start.
// A segment starts at index 0 or after a boundary and ends at a boundary or
// the end of the sequence.
double discounted_segment_mean(std::span<const double> costs, std::span<const std::uint8_t> boundary, double gamma);

}  // namespace safeloco::rl

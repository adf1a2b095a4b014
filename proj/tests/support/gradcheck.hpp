#pragma once

// Central finite-difference check of Graph::backward against perturbed
// forward passes. Shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "safeloco/autodiff.hpp"
#include "safeloco/nn.hpp"
#include "safeloco/policy.hpp"
#include "safeloco/rng.hpp"

namespace safeloco::testing {

using Builder = std::function<ad::Var(ad::Graph&)>;

struct GradCheck {
  double max_rel = 0.0;
  int entries = 0;
  std::string worst;
};

// |a - n| / max(|a|, |n|), with the denominator floored so that two
// gradients that are both ~0 do not produce a spurious huge ratio.
inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

// Checks up to max_entries randomly chosen scalars of every parameter.
inline GradCheck grad_check(ad::ParamStore& params, const Builder& build, Rng& rng, double eps = 1e-5,
                            int max_entries = 12) {
  const ad::ParamStore grads = [&] {
    ad::Graph g(params);
    return g.backward(build(g));
  }();
  auto eval = [&] {
    ad::Graph g(params);
    return g.scalar(build(g));
  };
  GradCheck out;
  std::vector<std::string> names;
  for (const auto& [name, _] : params.entries()) names.push_back(name);
  for (const auto& name : names) {
    auto ref = params.mutable_at(name);
    const Eigen::Index n = ref.size();
    std::vector<Eigen::Index> idx;
    if (n <= max_entries) {
      for (Eigen::Index i = 0; i < n; ++i) idx.push_back(i);
    } else {
      for (int k = 0; k < max_entries; ++k) idx.push_back(static_cast<Eigen::Index>(rng.below(n)));
    }
    for (Eigen::Index i : idx) {
      double& x = ref.data()[i];
      const double saved = x;
      x = saved + eps;
      const double fp = eval();
      x = saved - eps;
      const double fm = eval();
      x = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double analytic = grads.at(name).data()[i];
      const double rel = relative_error(analytic, numeric);
      ++out.entries;
      if (rel > out.max_rel) {
        out.max_rel = rel;
        out.worst = name + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic) + " numeric " +
                    std::to_string(numeric);
      }
    }
  }
  return out;
}

inline ad::Matrix random_matrix(int r, int c, Rng& rng, double scale = 1.0) {
  ad::Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

// Random entries bounded away from zero in magnitude (avoids kinks).
inline ad::Matrix away_from_zero(int r, int c, Rng& rng, double lo = 0.2, double hi = 1.5) {
  ad::Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const double mag = rng.uniform(lo, hi);
    m.data()[i] = rng.uniform() < 0.5 ? -mag : mag;
  }
  return m;
}

// Reduces any node to a scalar through a fixed random projection so every
// output entry contributes a distinct weight.
inline ad::Var project(ad::Graph& g, ad::Var v, const ad::Matrix& weights) {
  return g.sum(g.mul(v, g.constant(weights)));
}

struct OpCase {
  std::string op;
  GradCheck result;
};

// The standard battery: every primitive op plus the network layers and the
// policy heads, several random instances each.
inline std::vector<OpCase> gradient_battery(std::uint64_t seed, int reps) {
  std::vector<OpCase> cases;
  Rng rng(seed);
  auto run = [&](const std::string& op, ad::ParamStore params, const Builder& build) {
    cases.push_back({op, grad_check(params, build, rng)});
  };

  for (int rep = 0; rep < reps; ++rep) {
    const int m = 2 + static_cast<int>(rng.below(3));
    const int n = 2 + static_cast<int>(rng.below(3));
    const int k = 2 + static_cast<int>(rng.below(3));
    const ad::Matrix w_mn = random_matrix(m, n, rng);
    const ad::Matrix w_mk = random_matrix(m, k, rng);
    const ad::Matrix w_1 = random_matrix(1, 1, rng);
    const ad::Matrix w_m1 = random_matrix(m, 1, rng);

    auto two = [&](const ad::Matrix& a, const ad::Matrix& b) {
      ad::ParamStore p;
      p.add("a", a);
      p.add("b", b);
      return p;
    };
    auto one = [&](const ad::Matrix& a) {
      ad::ParamStore p;
      p.add("a", a);
      return p;
    };

    run("matmul", two(random_matrix(m, n, rng), random_matrix(n, k, rng)),
        [&](ad::Graph& g) { return project(g, g.matmul(g.param("a"), g.param("b")), w_mk); });
    run("add", two(random_matrix(m, n, rng), random_matrix(m, n, rng)),
        [&](ad::Graph& g) { return project(g, g.add(g.param("a"), g.param("b")), w_mn); });
    run("add_row", two(random_matrix(m, n, rng), random_matrix(1, n, rng)),
        [&](ad::Graph& g) { return project(g, g.add(g.param("a"), g.param("b")), w_mn); });
    run("sub", two(random_matrix(m, n, rng), random_matrix(m, n, rng)),
        [&](ad::Graph& g) { return project(g, g.sub(g.param("a"), g.param("b")), w_mn); });
    run("sub_row", two(random_matrix(m, n, rng), random_matrix(1, n, rng)),
        [&](ad::Graph& g) { return project(g, g.sub(g.param("a"), g.param("b")), w_mn); });
    run("mul", two(random_matrix(m, n, rng), random_matrix(m, n, rng)),
        [&](ad::Graph& g) { return project(g, g.mul(g.param("a"), g.param("b")), w_mn); });
    run("mul_row", two(random_matrix(m, n, rng), random_matrix(1, n, rng)),
        [&](ad::Graph& g) { return project(g, g.mul(g.param("a"), g.param("b")), w_mn); });
    const double s = rng.normal();
    run("scale", one(random_matrix(m, n, rng)),
        [&, s](ad::Graph& g) { return project(g, g.scale(g.param("a"), s), w_mn); });
    run("add_scalar", one(random_matrix(m, n, rng)),
        [&, s](ad::Graph& g) { return project(g, g.add_scalar(g.param("a"), s), w_mn); });
    run("tanh", one(random_matrix(m, n, rng)),
        [&](ad::Graph& g) { return project(g, g.tanh(g.param("a")), w_mn); });
    run("sigmoid", one(random_matrix(m, n, rng, 2.0)),
        [&](ad::Graph& g) { return project(g, g.sigmoid(g.param("a")), w_mn); });
    run("exp", one(random_matrix(m, n, rng)),
        [&](ad::Graph& g) { return project(g, g.exp(g.param("a")), w_mn); });
    run("log", one(away_from_zero(m, n, rng).cwiseAbs()),
        [&](ad::Graph& g) { return project(g, g.log(g.param("a")), w_mn); });
    run("square", one(random_matrix(m, n, rng)),
        [&](ad::Graph& g) { return project(g, g.square(g.param("a")), w_mn); });
    {
      // Keep |a - b| away from the tie.
      const ad::Matrix a = random_matrix(m, n, rng);
      const ad::Matrix b = a + away_from_zero(m, n, rng);
      run("maximum", two(a, b), [&](ad::Graph& g) { return project(g, g.maximum(g.param("a"), g.param("b")), w_mn); });
      run("minimum", two(a, b), [&](ad::Graph& g) { return project(g, g.minimum(g.param("a"), g.param("b")), w_mn); });
    }
    run("max_scalar", one(away_from_zero(m, n, rng)),
        [&](ad::Graph& g) { return project(g, g.max_scalar(g.param("a"), 0.0), w_mn); });
    ad::Matrix clampable = away_from_zero(m, n, rng, 0.6, 1.6);
    for (Eigen::Index i = 0; i < clampable.size(); i += 2) clampable.data()[i] = rng.uniform(-0.4, 0.4);
    run("clamp", one(clampable),
        [&](ad::Graph& g) { return project(g, g.clamp(g.param("a"), -0.5, 0.5), w_mn); });
    run("sum", one(random_matrix(m, n, rng)),
        [&](ad::Graph& g) { return project(g, g.sum(g.param("a")), w_1); });
    run("mean", one(random_matrix(m, n, rng)),
        [&](ad::Graph& g) { return project(g, g.mean(g.param("a")), w_1); });
    run("row_sum", one(random_matrix(m, n, rng)),
        [&](ad::Graph& g) { return project(g, g.row_sum(g.param("a")), w_m1); });
    const ad::Matrix w_slice = random_matrix(m, n + k - 2, rng);
    run("concat_slice", two(random_matrix(m, n, rng), random_matrix(m, k, rng)), [&](ad::Graph& g) {
      const std::vector<ad::Var> parts = {g.param("a"), g.param("b")};
      const ad::Var c = g.concat_cols(parts);
      return project(g, g.tanh(g.slice_cols(c, 1, n + k - 2)), w_slice);
    });

    {
      ad::ParamStore p;
      nn::MlpSpec spec{{n, 6, 5, k}, nn::Activation::kTanh, nn::Activation::kSigmoid};
      nn::init_mlp(p, "mlp", spec, rng, 1.0);
      for (auto& [name, _] : p.entries()) {
        auto ref = p.mutable_at(name);
        ref += 0.1 * random_matrix(static_cast<int>(ref.rows()), static_cast<int>(ref.cols()), rng);
      }
      p.add("x", random_matrix(m, n, rng));
      run("mlp", p, [&, spec](ad::Graph& g) { return project(g, nn::mlp_forward(g, "mlp", g.param("x"), spec), w_mk); });
    }
    {
      ad::ParamStore p;
      nn::init_gru(p, "gru", n, k, rng, 0.5);
      for (const char* b : {"gru/bx", "gru/bh"}) p.mutable_at(b) = random_matrix(1, 3 * k, rng, 0.3);
      p.add("h", random_matrix(m, k, rng));
      p.add("x", random_matrix(m, n, rng));
      run("gru_step", p, [&](ad::Graph& g) {
        const ad::Var h1 = nn::gru_step(g, "gru", g.param("h"), g.param("x"));
        return project(g, nn::gru_step(g, "gru", h1, g.param("x")), w_mk);
      });
    }
    {
      ad::ParamStore p;
      p.add("mean", random_matrix(m, k, rng));
      p.add("log_std", random_matrix(1, k, rng, 0.5));
      const ad::Matrix action = random_matrix(m, k, rng);
      run("gaussian_logprob", p, [&, action](ad::Graph& g) {
        const nn::GaussianHead head = nn::gaussian_head(g, g.param("mean"), "log_std");
        return project(g, nn::gaussian_logprob(g, head, g.constant(action)), w_m1);
      });
      run("gaussian_entropy", p, [&](ad::Graph& g) {
        const nn::GaussianHead head = nn::gaussian_head(g, g.param("mean"), "log_std");
        return project(g, nn::gaussian_entropy(g, head), w_1);
      });
    }
    {
      // Whole networks: the actor's log-density and the four critic heads.
      rl::NetConfig nc{4, 3, {5}, {5}, -0.5, 0.5};
      rl::Dims dims;
      dims.scan = 3;
      dims.history = 3;
      const rl::ActorCritic net(nc, dims, rng.below(1u << 30));
      const ad::Matrix obs = random_matrix(2, dims.critic_obs(), rng);
      const ad::Matrix act = random_matrix(2, env::kPolicyActionDim, rng);
      const ad::Matrix w_2x1 = random_matrix(2, 1, rng);
      const ad::Matrix w_2x4 = random_matrix(2, rl::kNumValueHeads, rng);
      run("actor_logprob", net.params(), [&](ad::Graph& g) {
        const auto head = net.actor(g, g.constant(obs.leftCols(dims.actor_obs())));
        return project(g, nn::gaussian_logprob(g, head, g.constant(act)), w_2x1);
      });
      run("critic_values", net.params(),
          [&](ad::Graph& g) { return project(g, net.critic(g, g.constant(obs)), w_2x4); });
    }
  }
  return cases;
}

}  // namespace safeloco::testing

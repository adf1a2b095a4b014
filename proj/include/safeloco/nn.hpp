#pragma once

// Layers built from autodiff primitives: linear/MLP, GRU cell, diagonal
// Gaussian policy head, and the Adam optimizer.

#include <span>
#include <string>
#include <vector>

#include "safeloco/autodiff.hpp"
#include "safeloco/rng.hpp"

namespace safeloco::nn {

enum class Activation { kIdentity, kTanh, kSigmoid };

struct MlpSpec {
  std::vector<int> widths;  // input width first, output width last
  Activation hidden = Activation::kTanh;
  Activation output = Activation::kIdentity;
};

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

// Orthogonal-like init: QR of a Gaussian matrix, scaled by gain. Biases zero.
ad::Matrix orthogonal_init(int rows, int cols, double gain, Rng& rng);

void init_linear(ad::ParamStore& params, const std::string& prefix, int in, int out, double gain, Rng& rng);
ad::Var linear(ad::Graph& g, const std::string& prefix, ad::Var x);

// Parameters "<prefix>/l<i>/w" (in x out) and "<prefix>/l<i>/b" (1 x out).
void init_mlp(ad::ParamStore& params, const std::string& prefix, const MlpSpec& spec, Rng& rng,
              double final_gain = 1.0);
ad::Var mlp_forward(ad::Graph& g, const std::string& prefix, ad::Var input, const MlpSpec& spec);

// Gate layout along the 3H axis: reset, update, candidate.
//   r  = sigmoid(x Wx_r + bx_r + h Wh_r + bh_r)
//   z  = sigmoid(x Wx_z + bx_z + h Wh_z + bh_z)
//   n  = tanh(x Wx_n + bx_n + r * (h Wh_n + bh_n))
//   h' = (1 - z) * n + z * h
// scale <= 0 selects orthogonal init; otherwise Gaussian entries with that std.
void init_gru(ad::ParamStore& params, const std::string& prefix, int input, int hidden, Rng& rng,
              double scale = 0.0);
ad::Var gru_step(ad::Graph& g, const std::string& prefix, ad::Var hidden, ad::Var input);

struct GaussianHead {
  ad::Var mean;     // B x d
  ad::Var log_std;  // 1 x d, clamped to [kLogStdMin, kLogStdMax]
};

GaussianHead gaussian_head(ad::Graph& g, ad::Var mean, const std::string& log_std_param);
// Per-row sum of diagonal Gaussian log densities, B x 1.
ad::Var gaussian_logprob(ad::Graph& g, const GaussianHead& head, ad::Var action);
// Entropy of one row (state-independent std), 1 x 1.
ad::Var gaussian_entropy(ad::Graph& g, const GaussianHead& head);
double gaussian_logprob(std::span<const double> mean, std::span<const double> log_std,
                        std::span<const double> action);

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(const ad::ParamStore& params);

  // Throws TrainingError naming the first parameter whose gradient is
  // non-finite; params are untouched in that case.
  void step(ad::ParamStore& params, const ad::ParamStore& grads, const AdamConfig& cfg);

  long steps() const { return t_; }
  const ad::ParamStore& first_moment() const { return m_; }
  const ad::ParamStore& second_moment() const { return v_; }

 private:
  ad::ParamStore m_;
  ad::ParamStore v_;
  long t_ = 0;
};

// Rescales grads in place when their global L2 norm exceeds max_norm.
// Returns the norm before clipping.
double clip_grad_norm(ad::ParamStore& grads, double max_norm);

}  // namespace safeloco::nn

#include "safeloco/nn.hpp"

#include <algorithm>
#include <cmath>

#include "safeloco/errors.hpp"

namespace safeloco::nn {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

ad::Var activate(ad::Graph& g, ad::Var x, Activation act) {
  switch (act) {
    case Activation::kTanh:
      return g.tanh(x);
    case Activation::kSigmoid:
      return g.sigmoid(x);
    case Activation::kIdentity:
      break;
  }
  return x;
}

}  // namespace

ad::Matrix orthogonal_init(int rows, int cols, double gain, Rng& rng) {
  const int big = std::max(rows, cols);
  const int small = std::min(rows, cols);
  Eigen::MatrixXd a(big, small);
  for (int i = 0; i < big; ++i)
    for (int j = 0; j < small; ++j) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  // Sign fix so the result is uniformly distributed over orthogonal matrices.
  const Eigen::MatrixXd r = qr.matrixQR();
  for (int j = 0; j < small; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  ad::Matrix out = rows >= cols ? ad::Matrix(q) : ad::Matrix(q.transpose());
  return out * gain;
}

void init_linear(ad::ParamStore& params, const std::string& prefix, int in, int out, double gain, Rng& rng) {
  if (in <= 0 || out <= 0) throw ConfigError("linear '" + prefix + "': widths must be positive");
  params.add(prefix + "/w", orthogonal_init(in, out, gain, rng));
  params.add(prefix + "/b", ad::Matrix::Zero(1, out));
}

ad::Var linear(ad::Graph& g, const std::string& prefix, ad::Var x) {
  return g.add(g.matmul(x, g.param(prefix + "/w")), g.param(prefix + "/b"));
}

void init_mlp(ad::ParamStore& params, const std::string& prefix, const MlpSpec& spec, Rng& rng,
              double final_gain) {
  if (spec.widths.size() < 2) throw ConfigError("mlp '" + prefix + "' needs at least two widths");
  const std::size_t layers = spec.widths.size() - 1;
  for (std::size_t i = 0; i < layers; ++i) {
    const double gain = i + 1 == layers ? final_gain : 1.0;
    init_linear(params, prefix + "/l" + std::to_string(i), spec.widths[i], spec.widths[i + 1], gain, rng);
  }
}

ad::Var mlp_forward(ad::Graph& g, const std::string& prefix, ad::Var input, const MlpSpec& spec) {
  if (spec.widths.size() < 2) throw ConfigError("mlp '" + prefix + "' needs at least two widths");
  if (g.value(input).cols() != spec.widths.front())
    throw ConfigError("mlp '" + prefix + "': input width " + std::to_string(g.value(input).cols()) +
                      " != " + std::to_string(spec.widths.front()));
  const std::size_t layers = spec.widths.size() - 1;
  ad::Var x = input;
  for (std::size_t i = 0; i < layers; ++i) {
    x = linear(g, prefix + "/l" + std::to_string(i), x);
    x = activate(g, x, i + 1 == layers ? spec.output : spec.hidden);
  }
  return x;
}

void init_gru(ad::ParamStore& params, const std::string& prefix, int input, int hidden, Rng& rng,
              double scale) {
  if (input <= 0 || hidden <= 0) throw ConfigError("gru '" + prefix + "': widths must be positive");
  auto gaussian = [&](int r, int c) {
    ad::Matrix m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
    return m;
  };
  ad::Matrix wx(input, 3 * hidden);
  ad::Matrix wh(hidden, 3 * hidden);
  for (int k = 0; k < 3; ++k) {
    wx.middleCols(k * hidden, hidden) = scale > 0.0 ? gaussian(input, hidden) : orthogonal_init(input, hidden, 1.0, rng);
    wh.middleCols(k * hidden, hidden) = scale > 0.0 ? gaussian(hidden, hidden) : orthogonal_init(hidden, hidden, 1.0, rng);
  }
  params.add(prefix + "/wx", std::move(wx));
  params.add(prefix + "/wh", std::move(wh));
  params.add(prefix + "/bx", ad::Matrix::Zero(1, 3 * hidden));
  params.add(prefix + "/bh", ad::Matrix::Zero(1, 3 * hidden));
}

ad::Var gru_step(ad::Graph& g, const std::string& prefix, ad::Var hidden, ad::Var input) {
  ad::Var wh = g.param(prefix + "/wh");
  const int h = static_cast<int>(g.value(wh).rows());
  if (g.value(hidden).cols() != h)
    throw ConfigError("gru '" + prefix + "': hidden width " + std::to_string(g.value(hidden).cols()) +
                      " != " + std::to_string(h));
  ad::Var gx = g.add(g.matmul(input, g.param(prefix + "/wx")), g.param(prefix + "/bx"));
  ad::Var gh = g.add(g.matmul(hidden, wh), g.param(prefix + "/bh"));
  ad::Var r = g.sigmoid(g.add(g.slice_cols(gx, 0, h), g.slice_cols(gh, 0, h)));
  ad::Var z = g.sigmoid(g.add(g.slice_cols(gx, h, h), g.slice_cols(gh, h, h)));
  ad::Var n = g.tanh(g.add(g.slice_cols(gx, 2 * h, h), g.mul(r, g.slice_cols(gh, 2 * h, h))));
  // (1 - z) * n + z * h  ==  n + z * (h - n)
  return g.add(n, g.mul(z, g.sub(hidden, n)));
}

GaussianHead gaussian_head(ad::Graph& g, ad::Var mean, const std::string& log_std_param) {
  ad::Var ls = g.clamp(g.param(log_std_param), kLogStdMin, kLogStdMax);
  if (g.value(ls).cols() != g.value(mean).cols())
    throw ConfigError("gaussian head: log_std width does not match mean width");
  return {mean, ls};
}

ad::Var gaussian_logprob(ad::Graph& g, const GaussianHead& head, ad::Var action) {
  // Node storage may reallocate below, so keep shapes by value.
  const Eigen::Index rows = g.value(head.mean).rows(), cols = g.value(head.mean).cols();
  if (rows != g.value(action).rows() || cols != g.value(action).cols())
    throw ConfigError("gaussian_logprob: action shape does not match mean");
  const double d = static_cast<double>(cols);
  ad::Var inv_std = g.exp(g.neg(head.log_std));
  ad::Var z = g.mul(g.sub(action, head.mean), inv_std);
  ad::Var quad = g.row_sum(g.scale(g.square(z), -0.5));
  ad::Var log_norm = g.add_scalar(g.sum(head.log_std), 0.5 * d * kLog2Pi);
  ad::Var ones = g.constant(ad::Matrix::Ones(rows, 1));
  return g.sub(quad, g.matmul(ones, log_norm));
}

ad::Var gaussian_entropy(ad::Graph& g, const GaussianHead& head) {
  const double d = static_cast<double>(g.value(head.log_std).cols());
  return g.add_scalar(g.sum(head.log_std), 0.5 * d * (1.0 + kLog2Pi));
}

double gaussian_logprob(std::span<const double> mean, std::span<const double> log_std,
                        std::span<const double> action) {
  if (mean.size() != action.size() || log_std.size() != action.size())
    throw ConfigError("gaussian_logprob: dimension mismatch");
  double lp = 0.0;
  for (std::size_t i = 0; i < action.size(); ++i) {
    const double ls = std::clamp(log_std[i], kLogStdMin, kLogStdMax);
    const double z = (action[i] - mean[i]) * std::exp(-ls);
    lp += -0.5 * z * z - ls - 0.5 * kLog2Pi;
  }
  return lp;
}

Adam::Adam(const ad::ParamStore& params) : m_(params.zeros_like()), v_(params.zeros_like()) {}

void Adam::step(ad::ParamStore& params, const ad::ParamStore& grads, const AdamConfig& cfg) {
  for (const auto& [name, g] : grads.entries()) {
    if (!g.allFinite()) throw TrainingError("non-finite gradient for parameter '" + name + "'");
    const auto& p = params.at(name);
    if (p.rows() != g.rows() || p.cols() != g.cols())
      throw ConfigError("adam: gradient shape mismatch for '" + name + "'");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
  for (const auto& [name, g] : grads.entries()) {
    auto m = m_.mutable_at(name);
    auto v = v_.mutable_at(name);
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    auto p = params.mutable_at(name);
    p.array() -= cfg.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
  }
  ++params.version;
}

double clip_grad_norm(ad::ParamStore& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, g] : grads.entries()) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (const auto& [name, _] : grads.entries()) grads.mutable_at(name) *= s;
  }
  return norm;
}

}  // namespace safeloco::nn

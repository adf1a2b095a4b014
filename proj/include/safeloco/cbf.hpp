#pragma once

// Linear discrete-time barrier built from the nearest LiDAR return:
//
//   h(s)      = eta . (p(s) - o) - d_min
//   G(s, u)   = h(A s + B u) - (1 - gamma) h(s)     with (o, eta) frozen
//   cost(s,u) = max(0, -G(s, u))
//
// G is affine in u, which is what makes the half-space projection below a
// closed form. The projection exists for tests only; training never filters
// actions.

#include <Eigen/Dense>

#include <span>

#include "safeloco/world.hpp"

namespace safeloco::cbf {

using Vec2 = sim::Vec2;

struct LinearModel {
  Eigen::MatrixXd a;                 // n x n
  Eigen::MatrixXd b;                 // n x m
  Eigen::MatrixXd position_selector; // 2 x n
  double dt = 0.05;

  int state_dim() const { return static_cast<int>(a.rows()); }
  int control_dim() const { return static_cast<int>(b.cols()); }

  // State (px, py, vx, vy), control (ax, ay), discretized the same way as
  // sim::step_dynamics: v' = v + a dt, p' = p + v' dt.
  static LinearModel double_integrator(double dt);
  Eigen::VectorXd next(std::span<const double> state, std::span<const double> control) const;
};

enum class NormalEstimation { kNearest, kPlaneFit };

struct CbfConfig {
  double gamma_cbf = 0.6;
  double d_min = 0.8;
  NormalEstimation normal_estimation = NormalEstimation::kNearest;
  int plane_fit_k = 5;  // returns per fit, centred on the nearest one

  // Throws ConfigError unless 0 < gamma_cbf <= 1 and d_min >= 0.
  void validate() const;
};

struct BarrierEval {
  double h = 0.0;
  Vec2 o = Vec2::Zero();
  Vec2 eta = Vec2::UnitX();
  double d_min = 0.0;
  bool active = true;      // false: no finite return, h = +max_range
  bool degenerate = false; // robot on the return point; eta = reversed heading

  double value_at(const Vec2& p) const { return eta.dot(p - o) - d_min; }
};

BarrierEval make_barrier(const Vec2& p, const Vec2& o, const Vec2& eta, double d_min);

// Minimum-range return among rings at or below the body height. Ties go to
// the lowest azimuth index, then the lowest ring index.
BarrierEval nearest_obstacle(const sim::LidarScan& scan, const sim::RobotBody& robot, const CbfConfig& cfg);

double g_d(const LinearModel& model, const CbfConfig& cfg, const BarrierEval& barrier,
           std::span<const double> state, std::span<const double> control);

double cbf_cost(const LinearModel& model, const CbfConfig& cfg, const BarrierEval& barrier,
                std::span<const double> state, std::span<const double> control);

bool dcbf_check(double h_next, double h_curr, double gamma_cbf);

struct Projection {
  Eigen::VectorXd control;
  bool modified = false;
  bool unconstrainable = false;  // G does not depend on u; desired control returned
};

// Minimal-norm correction of desired onto {u : G(s, u) >= 0}.
Projection safe_projection(const LinearModel& model, const CbfConfig& cfg, const BarrierEval& barrier,
                           std::span<const double> state, std::span<const double> desired);

}  // namespace safeloco::cbf

#include "safeloco/cbf.hpp"

#include <cmath>
#include <vector>

#include "safeloco/errors.hpp"

namespace safeloco::cbf {

namespace {

Eigen::Map<const Eigen::VectorXd> as_vec(std::span<const double> s) {
  return {s.data(), static_cast<Eigen::Index>(s.size())};
}

void check_dims(const LinearModel& m, std::span<const double> state, std::span<const double> control) {
  if (static_cast<int>(state.size()) != m.state_dim() || static_cast<int>(control.size()) != m.control_dim())
    throw ConfigError("cbf: state/control dimensions do not match the linear model");
}

// Affine form G(u) = slope . u + offset.
std::pair<Eigen::VectorXd, double> affine_form(const LinearModel& model, const CbfConfig& cfg,
                                               const BarrierEval& barrier, std::span<const double> state) {
  const Eigen::VectorXd s = as_vec(state);
  const Eigen::Vector2d p = model.position_selector * s;
  const Eigen::Vector2d p_free = model.position_selector * (model.a * s);
  const double h = barrier.value_at(p);
  const Eigen::VectorXd slope = (barrier.eta.transpose() * model.position_selector * model.b).transpose();
  const double offset = barrier.value_at(p_free) - (1.0 - cfg.gamma_cbf) * h;
  return {slope, offset};
}

}  // namespace

LinearModel LinearModel::double_integrator(double dt) {
  if (!(dt > 0.0)) throw ConfigError("linear model dt must be positive");
  LinearModel m;
  m.dt = dt;
  m.a = Eigen::MatrixXd::Identity(4, 4);
  m.a(0, 2) = dt;
  m.a(1, 3) = dt;
  m.b = Eigen::MatrixXd::Zero(4, 2);
  m.b(0, 0) = dt * dt;
  m.b(1, 1) = dt * dt;
  m.b(2, 0) = dt;
  m.b(3, 1) = dt;
  m.position_selector = Eigen::MatrixXd::Zero(2, 4);
  m.position_selector(0, 0) = 1.0;
  m.position_selector(1, 1) = 1.0;
  return m;
}

Eigen::VectorXd LinearModel::next(std::span<const double> state, std::span<const double> control) const {
  check_dims(*this, state, control);
  return a * as_vec(state) + b * as_vec(control);
}

void CbfConfig::validate() const {
  if (!(gamma_cbf > 0.0 && gamma_cbf <= 1.0)) throw ConfigError("cbf.gamma_cbf must be in (0, 1]");
  if (!(d_min >= 0.0)) throw ConfigError("cbf.d_min must be >= 0");
  if (plane_fit_k < 2) throw ConfigError("cbf.plane_fit_k must be >= 2");
}

BarrierEval make_barrier(const Vec2& p, const Vec2& o, const Vec2& eta, double d_min) {
  BarrierEval b;
  b.o = o;
  b.eta = eta;
  b.d_min = d_min;
  b.h = b.value_at(p);
  return b;
}

BarrierEval nearest_obstacle(const sim::LidarScan& scan, const sim::RobotBody& robot, const CbfConfig& cfg) {
  const Vec2 heading(std::cos(robot.yaw), std::sin(robot.yaw));
  int best_ring = -1;
  int best_az = -1;
  double best = scan.max_range;
  for (int az = 0; az < scan.n_azimuth; ++az)
    for (int r = 0; r < static_cast<int>(scan.rings.size()); ++r) {
      if (scan.rings[static_cast<std::size_t>(r)] > robot.height) continue;
      const double d = scan.at(r, az);
      if (d < scan.max_range && d < best) {
        best = d;
        best_ring = r;
        best_az = az;
      }
    }

  if (best_ring < 0) {
    BarrierEval b;
    b.active = false;
    b.d_min = cfg.d_min;
    b.eta = -heading;
    b.o = robot.p - (scan.max_range + cfg.d_min) * b.eta;
    b.h = b.value_at(robot.p);
    return b;
  }

  auto endpoint = [&](int az, double range) {
    const double ang = robot.yaw + scan.azimuth(az);
    return Vec2(robot.p + range * Vec2(std::cos(ang), std::sin(ang)));
  };

  Vec2 o = endpoint(best_az, best);
  Vec2 eta;
  if (cfg.normal_estimation == NormalEstimation::kPlaneFit) {
    std::vector<Vec2> pts;
    const int half = cfg.plane_fit_k / 2;
    for (int k = -half; k <= half; ++k) {
      const int az = ((best_az + k) % scan.n_azimuth + scan.n_azimuth) % scan.n_azimuth;
      const double d = scan.at(best_ring, az);
      if (d < scan.max_range) pts.push_back(endpoint(az, d));
    }
    if (pts.size() >= 2) {
      Vec2 c = Vec2::Zero();
      for (const auto& q : pts) c += q;
      c /= static_cast<double>(pts.size());
      Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
      for (const auto& q : pts) cov += (q - c) * (q - c).transpose();
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
      const Vec2 tangent = es.eigenvectors().col(1);
      Vec2 normal(-tangent.y(), tangent.x());
      if (normal.dot(robot.p - c) < 0.0) normal = -normal;
      o = c + tangent * tangent.dot(robot.p - c);
      eta = normal.normalized();
      BarrierEval b = make_barrier(robot.p, o, eta, cfg.d_min);
      return b;
    }
  }

  const Vec2 diff = robot.p - o;
  const double n = diff.norm();
  if (n < 1e-12) {
    BarrierEval b = make_barrier(robot.p, robot.p, -heading, cfg.d_min);
    b.degenerate = true;
    return b;
  }
  eta = diff / n;
  return make_barrier(robot.p, o, eta, cfg.d_min);
}

double g_d(const LinearModel& model, const CbfConfig& cfg, const BarrierEval& barrier,
           std::span<const double> state, std::span<const double> control) {
  check_dims(model, state, control);
  const Eigen::VectorXd s = as_vec(state);
  const Eigen::Vector2d p = model.position_selector * s;
  const Eigen::Vector2d p_next = model.position_selector * model.next(state, control);
  return barrier.value_at(p_next) - (1.0 - cfg.gamma_cbf) * barrier.value_at(p);
}

double cbf_cost(const LinearModel& model, const CbfConfig& cfg, const BarrierEval& barrier,
                std::span<const double> state, std::span<const double> control) {
  return std::max(0.0, -g_d(model, cfg, barrier, state, control));
}

bool dcbf_check(double h_next, double h_curr, double gamma_cbf) { return h_next + (gamma_cbf - 1.0) * h_curr >= 0.0; }

Projection safe_projection(const LinearModel& model, const CbfConfig& cfg, const BarrierEval& barrier,
                           std::span<const double> state, std::span<const double> desired) {
  check_dims(model, state, desired);
  Projection out;
  out.control = as_vec(desired);
  const auto [slope, offset] = affine_form(model, cfg, barrier, state);
  const double g = slope.dot(out.control) + offset;
  if (g >= 0.0) return out;
  const double s2 = slope.squaredNorm();
  if (s2 < 1e-24) {
    out.unconstrainable = true;
    return out;
  }
  out.control += (-g / s2) * slope;
  out.modified = true;
  return out;
}

}  // namespace safeloco::cbf

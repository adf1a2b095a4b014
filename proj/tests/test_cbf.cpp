#include <doctest.h>

#include <array>
#include <cmath>

#include "safeloco/cbf.hpp"
#include "safeloco/errors.hpp"
#include "support/oracles.hpp"

using namespace safeloco;
using namespace safeloco::cbf;

namespace {

sim::LidarScan single_return(const sim::RobotBody& robot, Vec2 o) {
  // One ring, 8 azimuths, only the ray aimed at o returns.
  sim::LidarScan s;
  s.n_azimuth = 8;
  s.rings = {0.3};
  s.max_range = 10.0;
  s.ranges.assign(8, 10.0);
  const Vec2 d = o - robot.p;
  const double ang = std::atan2(d.y(), d.x()) - robot.yaw;
  const int az = static_cast<int>(std::lround(ang / (2.0 * std::numbers::pi / 8.0)) + 8) % 8;
  s.ranges[static_cast<std::size_t>(az)] = d.norm();
  return s;
}

}  // namespace

TEST_SUITE("cbf") {

TEST_CASE("barrier from a single return") {
  sim::RobotBody robot;
  robot.p = Vec2(2.0, 0.0);
  robot.yaw = std::numbers::pi;  // facing the return
  CbfConfig cfg;
  cfg.d_min = 0.8;
  const BarrierEval b = nearest_obstacle(single_return(robot, Vec2::Zero()), robot, cfg);
  CHECK(b.active);
  CHECK((b.eta - Vec2(1.0, 0.0)).norm() < 1e-12);
  CHECK(b.h == doctest::Approx(1.2).epsilon(1e-12));
}

TEST_CASE("robot on the return point: h = -d_min and eta is the reversed heading") {
  sim::RobotBody robot;
  robot.yaw = 0.3;
  sim::LidarScan s;
  s.n_azimuth = 8;
  s.rings = {0.3};
  s.max_range = 10.0;
  s.ranges.assign(8, 10.0);
  s.ranges[0] = 0.0;
  CbfConfig cfg;
  const BarrierEval b = nearest_obstacle(s, robot, cfg);
  CHECK(b.degenerate);
  CHECK(b.h == doctest::Approx(-cfg.d_min));
  CHECK((b.eta + Vec2(std::cos(0.3), std::sin(0.3))).norm() < 1e-12);
}

TEST_CASE("no finite return gives an inactive sentinel at +max_range") {
  sim::RobotBody robot;
  sim::LidarScan s;
  s.n_azimuth = 8;
  s.rings = {0.3};
  s.max_range = 10.0;
  s.ranges.assign(8, 10.0);
  const BarrierEval b = nearest_obstacle(s, robot, CbfConfig{});
  CHECK_FALSE(b.active);
  CHECK(b.h == doctest::Approx(10.0));
}

TEST_CASE("rings above the body are ignored") {
  sim::RobotBody robot;
  robot.height = 0.5;
  sim::LidarScan s;
  s.n_azimuth = 8;
  s.rings = {0.3, 0.75};
  s.max_range = 10.0;
  s.ranges.assign(16, 10.0);
  s.ranges[8 + 0] = 1.0;  // high ring, closer
  s.ranges[2] = 3.0;      // low ring
  const BarrierEval b = nearest_obstacle(s, robot, CbfConfig{});
  CHECK(b.h == doctest::Approx(3.0 - 0.8));
}

TEST_CASE("gamma = 1 reduces G to the next-step barrier") {
  const LinearModel m = LinearModel::double_integrator(0.05);
  CbfConfig cfg;
  cfg.gamma_cbf = 1.0;
  const BarrierEval b = make_barrier(Vec2(1.0, 0.5), Vec2::Zero(), Vec2(1.0, 0.0), 0.8);
  const std::array<double, 4> s = {1.0, 0.5, -0.4, 0.2};
  const std::array<double, 2> u = {0.7, -1.1};
  const Eigen::VectorXd next = m.next(s, u);
  CHECK(g_d(m, cfg, b, s, u) == doctest::Approx(b.value_at(Vec2(next(0), next(1)))).epsilon(1e-14));
}

TEST_CASE("double integrator matches the simulator's integration") {
  const LinearModel m = LinearModel::double_integrator(0.05);
  sim::RobotBody body;
  body.p = Vec2(0.3, -0.2);
  body.v = Vec2(0.4, 0.1);
  sim::RobotLimits lim;
  lim.v_max = 100.0;
  const auto r = sim::step_dynamics(body, sim::Action{0.5, -0.3, 0.0, 0.0, 0.0}, 0.05, lim);
  const std::array<double, 4> s = {0.3, -0.2, 0.4, 0.1};
  const std::array<double, 2> u = {0.5, -0.3};
  const Eigen::VectorXd next = m.next(s, u);
  CHECK(std::abs(next(0) - r.body.p.x()) < 1e-15);
  CHECK(std::abs(next(1) - r.body.p.y()) < 1e-15);
  CHECK(std::abs(next(2) - r.body.v.x()) < 1e-15);
}

TEST_CASE("cbf cost is the hinge of -G") {
  // Single-integrator-like fixture where G(u) = u_x + offset.
  LinearModel m;
  m.a = Eigen::MatrixXd::Identity(2, 2);
  m.b = Eigen::MatrixXd::Identity(2, 2);
  m.position_selector = Eigen::MatrixXd::Identity(2, 2);
  CbfConfig cfg;
  cfg.gamma_cbf = 1.0;
  const BarrierEval b = make_barrier(Vec2::Zero(), Vec2::Zero(), Vec2(1.0, 0.0), 1.0);
  const std::array<double, 2> s = {0.0, 0.0};
  const std::array<double, 2> u_pos = {1.5, 0.0};
  const std::array<double, 2> u_neg = {0.7, 0.0};
  CHECK(g_d(m, cfg, b, s, u_pos) == doctest::Approx(0.5));
  CHECK(cbf_cost(m, cfg, b, s, u_pos) == 0.0);
  CHECK(g_d(m, cfg, b, s, u_neg) == doctest::Approx(-0.3));
  CHECK(cbf_cost(m, cfg, b, s, u_neg) == doctest::Approx(0.3));
}

TEST_CASE("dcbf check thresholds") {
  CHECK(dcbf_check(0.0, 0.0, 0.6));
  CHECK(dcbf_check(0.5, 1.0, 0.5));
  CHECK_FALSE(dcbf_check(0.49, 1.0, 0.5));
}

TEST_CASE("projection onto a half-space") {
  LinearModel m;
  m.a = Eigen::MatrixXd::Identity(2, 2);
  m.b = Eigen::MatrixXd::Identity(2, 2);
  m.position_selector = Eigen::MatrixXd::Identity(2, 2);
  CbfConfig cfg;
  cfg.gamma_cbf = 1.0;
  const BarrierEval b = make_barrier(Vec2::Zero(), Vec2::Zero(), Vec2(1.0, 0.0), 1.0);
  const std::array<double, 2> s = {0.0, 0.0};

  const std::array<double, 2> inside = {2.0, -3.0};
  const Projection keep = safe_projection(m, cfg, b, s, inside);
  CHECK_FALSE(keep.modified);
  CHECK(keep.control(0) == 2.0);
  CHECK(keep.control(1) == -3.0);

  const std::array<double, 2> zero = {0.0, 0.0};
  const Projection p = safe_projection(m, cfg, b, s, zero);
  CHECK(p.modified);
  CHECK(p.control(0) == doctest::Approx(1.0));
  CHECK(p.control(1) == doctest::Approx(0.0));
}

TEST_CASE("zero control sensitivity is flagged unconstrainable") {
  LinearModel m;
  m.a = Eigen::MatrixXd::Identity(2, 2);
  m.b = Eigen::MatrixXd::Zero(2, 1);
  m.position_selector = Eigen::MatrixXd::Identity(2, 2);
  const BarrierEval b = make_barrier(Vec2::Zero(), Vec2(1.0, 0.0), Vec2(1.0, 0.0), 1.0);
  const std::array<double, 2> s = {0.0, 0.0};
  const std::array<double, 1> u = {0.4};
  const Projection p = safe_projection(m, CbfConfig{}, b, s, u);
  CHECK(p.unconstrainable);
  CHECK(p.control(0) == 0.4);
}

TEST_CASE("G is affine in the control") {
  const LinearModel m = LinearModel::double_integrator(0.05);
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const BarrierEval b = make_barrier(Vec2::Zero(), Vec2(rng.normal(), rng.normal()),
                                       Vec2(rng.normal(), rng.normal()).normalized(), 0.8);
    const std::array<double, 4> s = {rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    const std::array<double, 2> u1 = {rng.normal(), rng.normal()};
    const std::array<double, 2> u2 = {rng.normal(), rng.normal()};
    const double t = rng.uniform();
    const std::array<double, 2> mix = {t * u1[0] + (1 - t) * u2[0], t * u1[1] + (1 - t) * u2[1]};
    CbfConfig cfg;
    const double lhs = g_d(m, cfg, b, s, mix);
    const double rhs = t * g_d(m, cfg, b, s, u1) + (1 - t) * g_d(m, cfg, b, s, u2);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("projected rollouts stay in the safe set") {
  for (double gamma : {0.3, 0.6, 1.0}) {
    const auto r = safeloco::testing::dcbf_invariance(gamma, 20, 300, 77);
    INFO("gamma " << gamma);
    CHECK(r.min_h >= -1e-9);
    CHECK(r.projections > 0);
  }
}

TEST_CASE("config validation") {
  CbfConfig c;
  c.gamma_cbf = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.gamma_cbf = 1.2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.gamma_cbf = 0.5;
  c.d_min = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

}  // TEST_SUITE

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "safeloco/checkpoint.hpp"
#include "safeloco/errors.hpp"
#include "safeloco/trainer.hpp"
#include "support/gradcheck.hpp"

using namespace safeloco;
using namespace safeloco::rl;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run(std::uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  c.name = "tiny";
  c.env.lidar.n_azimuth = 16;
  c.train.num_envs = 4;
  c.train.horizon = 32;
  c.train.epochs = 2;
  c.train.minibatches = 2;
  c.train.total_steps = 256;
  c.train.net = NetConfig{16, 8, {16}, {16}, -0.7, 0.01};
  return c;
}

std::vector<sim::Scenario> scenarios_for(const RunConfig& c) {
  std::vector<sim::Scenario> out;
  for (const auto& n : c.train.scenarios) out.push_back(sim::load_scenario(n));
  return out;
}

bool params_bit_equal(const ad::ParamStore& a, const ad::ParamStore& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, m] : a.entries()) {
    const auto& o = b.at(name);
    if (o.size() != m.size() || std::memcmp(o.data(), m.data(), sizeof(double) * m.size()) != 0) return false;
  }
  return true;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("safeloco_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("round trip is exact to f32 precision") {
  Rng rng(1);
  Checkpoint c;
  c.arrays.add("a/w", testing::random_matrix(3, 5, rng));
  c.arrays.add("b", testing::random_matrix(1, 7, rng, 100.0));
  c.training_step = 1234;
  c.config = {{"seed", 3}, {"name", "x"}};
  c.config_hash = config_hash(c.config);
  const fs::path dir = scratch("ckpt");
  save_checkpoint(dir / "ck", c);
  for (const fs::path& p : {dir / "ck", dir / "ck.json", dir / "ck.bin"}) {
    const Checkpoint back = load_checkpoint(p, c.config_hash);
    CHECK(back.training_step == 1234);
    CHECK(back.config == c.config);
    for (const auto& [name, m] : c.arrays.entries()) {
      const auto& o = back.arrays.at(name);
      REQUIRE(o.rows() == m.rows());
      for (Eigen::Index i = 0; i < m.size(); ++i)
        CHECK(o.data()[i] == static_cast<double>(static_cast<float>(m.data()[i])));
    }
  }
  CHECK(config_hash(c.config).size() == 16);
  CHECK(config_hash(c.config) != config_hash({{"seed", 4}}));
}

TEST_CASE("missing and malformed checkpoints") {
  const fs::path dir = scratch("ckpt_bad");
  CHECK_THROWS_AS(load_checkpoint(dir / "nothing"), MissingArtifact);
  std::ofstream(dir / "bad.json") << "{\"format_version\": 1}";
  std::ofstream(dir / "bad.bin") << "";
  CHECK_THROWS_AS(load_checkpoint(dir / "bad"), ConfigError);
}

}  // TEST_SUITE

TEST_SUITE("trainer") {

TEST_CASE("run config is strict about unknown keys") {
  nlohmann::json j = run_config_to_json(tiny_run(1));
  CHECK(run_config_to_json(run_config_from_json(j)) == j);
  nlohmann::json bad = j;
  bad["train"]["learning_rate"] = 0.1;
  try {
    run_config_from_json(bad);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("learning_rate") != std::string::npos);
  }
  bad = j;
  bad["extra"] = 1;
  CHECK_THROWS_AS(run_config_from_json(bad), ConfigError);
  CHECK_THROWS_AS(parse_mode("sac"), ConfigError);
}

TEST_CASE("mode switches") {
  TrainConfig t;
  t.mode = Mode::kP3oCbf;
  CHECK(t.uses_cbf_cost());
  CHECK(t.uses_comfort());
  t.mode = Mode::kP3o;
  CHECK_FALSE(t.uses_cbf_cost());
  CHECK_FALSE(t.uses_comfort());
  t.cbf_cost = true;
  CHECK(t.uses_cbf_cost());
}

TEST_CASE("learning rate decays linearly to its final fraction") {
  RunConfig cfg = tiny_run(2);
  Trainer constant(cfg, scenarios_for(cfg));
  CHECK(constant.learning_rate() == cfg.train.lr);
  cfg.train.lr_final_frac = 0.25;
  cfg.train.total_steps = 4L * cfg.train.num_envs * cfg.train.horizon;
  Trainer tr(cfg, scenarios_for(cfg));
  for (int it = 0; it <= 4; ++it) {
    CHECK(tr.learning_rate() == doctest::Approx(cfg.train.lr * (1.0 - 0.75 * it / 4.0)).epsilon(1e-12));
    if (it < 4) tr.iterate();
  }
  cfg.train.lr_final_frac = 1.5;
  CHECK_THROWS_AS(cfg.train.validate(), ConfigError);
}

TEST_CASE("rollout batch shapes and bookkeeping") {
  const RunConfig cfg = tiny_run(2);
  Trainer tr(cfg, scenarios_for(cfg));
  const RolloutBatch b = tr.collect();
  const std::size_t n = static_cast<std::size_t>(cfg.train.num_envs * cfg.train.horizon);
  CHECK(b.size() == n);
  CHECK(static_cast<std::size_t>(b.actor_obs.rows()) == n);
  CHECK(b.values.cols() == 4);
  CHECK(b.costs.cols() == 3);
  for (std::size_t i = 0; i < n; ++i)
    if (b.terminal[i]) CHECK(b.boundary[i]);
  CHECK((b.costs.array() >= 0.0).all());
}

TEST_CASE("an update is deterministic for a fixed seed and batch") {
  const RunConfig cfg = tiny_run(3);
  Trainer a(cfg, scenarios_for(cfg));
  Trainer b(cfg, scenarios_for(cfg));
  const RolloutBatch ba = a.collect();
  const RolloutBatch bb = b.collect();
  CHECK(ba.actor_obs == bb.actor_obs);
  a.update(ba);
  b.update(bb);
  CHECK(params_bit_equal(a.net().params(), b.net().params()));
}

TEST_CASE("critic regression on a fixed batch") {
  NetConfig nc{16, 8, {32}, {32}, -0.7, 0.01};
  Dims dims;
  dims.scan = 8;
  ActorCritic net(nc, dims, 5);
  Rng rng(6);
  const ad::Matrix obs = testing::random_matrix(64, dims.critic_obs(), rng);
  ad::Matrix targets(64, 4);
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 4; ++c) targets(r, c) = std::tanh(obs(r, c)) + 0.5 * obs(r, c + 4) * (c + 1) / 4.0;
  nn::Adam adam(net.params());
  auto loss_of = [&](ad::Graph& g) {
    const ad::Var v = net.critic(g, g.constant(obs));
    return g.mean(g.square(g.sub(v, g.constant(targets))));
  };
  double initial = 0.0, last = 0.0;
  for (int it = 0; it < 200; ++it) {
    ad::Graph g(net.params());
    const ad::Var loss = loss_of(g);
    if (it == 0) initial = g.scalar(loss);
    last = g.scalar(loss);
    ad::ParamStore grads = g.backward(loss);
    adam.step(net.params(), grads, {1e-3});
  }
  CHECK(last < 0.1 * initial);
}

TEST_CASE("a non-finite loss aborts with a training error") {
  const RunConfig cfg = tiny_run(4);
  Trainer tr(cfg, scenarios_for(cfg));
  const RolloutBatch b = tr.collect();
  tr.net().params().mutable_at("actor/log_std")(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(tr.update(b), TrainingError);
}

TEST_CASE("training writes metrics and a loadable checkpoint; reruns are byte-identical") {
  const RunConfig cfg = tiny_run(7);
  const fs::path a = scratch("train_a"), b = scratch("train_b");
  Trainer(cfg, scenarios_for(cfg)).train(a);
  Trainer(cfg, scenarios_for(cfg)).train(b);
  const std::string metrics = slurp(a / "metrics.csv");
  CHECK(metrics.rfind("step,reward,J_C1,J_C2,J_C3,success_rate,level\n", 0) == 0);
  CHECK(metrics == slurp(b / "metrics.csv"));
  CHECK(slurp(a / "config.json") == slurp(b / "config.json"));
  REQUIRE(fs::exists(a / "ckpt_256.json"));
  CHECK(slurp(a / "ckpt_256.bin") == slurp(b / "ckpt_256.bin"));

  const LoadedPolicy lp = load_policy(a / "ckpt_256");
  CHECK(lp.step == 256);
  CHECK(run_config_to_json(lp.config) == run_config_to_json(cfg));
  CHECK(lp.bundle.obs_norm.dim() == lp.bundle.dims.critic_obs());
}

}  // TEST_SUITE

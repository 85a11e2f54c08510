#include <gtest/gtest.h>

#include <random>

#include "cruise/orchestrator.hpp"
#include "cruise/ppo.hpp"

using namespace cruise;

namespace {

Eigen::VectorXd random_vector(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = g(rng);
  return v;
}

// Direct double sum: A_t = Σ_{l≥0} (γλ)^l δ_{t+l}, cut at the first done.
Eigen::VectorXd gae_oracle(const Eigen::VectorXd& r, const Eigen::VectorXd& v,
                           const std::vector<char>& done, double gamma, double lambda) {
  const int T = static_cast<int>(r.size());
  Eigen::VectorXd adv = Eigen::VectorXd::Zero(T);
  for (int t = 0; t < T; ++t) {
    double weight = 1.0;
    for (int l = t; l < T; ++l) {
      const double next = done[l] ? 0.0 : gamma * v(l + 1);
      adv(t) += weight * (r(l) + next - v(l));
      if (done[l]) break;
      weight *= gamma * lambda;
    }
  }
  return adv;
}

// One-step bandit: constant observation, reward = first action component.
class BanditEnv : public TrainingEnv {
 public:
  int obs_dim() const override { return 2; }
  Eigen::VectorXd reset() override { return Eigen::Vector2d(1.0, -1.0); }
  Transition step(const Eigen::Vector3d& a) override {
    Transition t;
    t.obs = reset();
    t.reward = a.x();
    t.terminated = true;
    return t;
  }
};

// Records, for every step, the reward rebuilt from the env's own state history.
class ReconstructingEnv : public TrainingEnv {
 public:
  ReconstructingEnv(const EnvConfig& cfg, int index, std::vector<double>* log)
      : inner_(cfg, 17, index, cfg.num_agents), cfg_(cfg.resolved()), log_(log) {}
  int obs_dim() const override { return inner_.obs_dim(); }
  Eigen::VectorXd reset() override { return inner_.reset(); }
  Transition step(const Eigen::Vector3d& a) override {
    const DroneStated before = inner_.env().states()[0];
    const ProgressState prog = inner_.env().progress()[0];
    const Transition tr = inner_.step(a);
    const DroneStated after = inner_.env().states()[0];
    const Gate& g = cfg_.track.gates[prog.next_gate_index];
    const bool passed = check_gate_passage(before.position, after.position, g, cfg_.stage.gate_tolerance);
    const Gate& next = cfg_.track.gates[inner_.env().progress()[0].next_gate_index];
    RewardComponents c;
    const double d_now = (next.center - after.position).norm();
    c.proximity = reward_proximity(d_now, cfg_.norm, cfg_.weights);
    c.progress = reward_progress((g.center - before.position).norm(), d_now, cfg_.weights, passed);
    c.alignment = reward_alignment(after.velocity, (next.center - after.position) / d_now, cfg_.weights);
    c.speed = reward_speed(after.velocity.norm(), cfg_.stage);
    c.out_of_bounds = inner_.env().bounds().contains(after.position) ? 0 : 1;
    c.gate_passed = passed;
    log_->push_back(total_reward(c, cfg_.weights, cfg_.stage, false));
    return tr;
  }

 private:
  RacingActiveEnv inner_;
  EnvConfig cfg_;
  std::vector<double>* log_;
};

PpoConfig small_config() {
  PpoConfig c;
  c.horizon = 32;
  c.num_envs = 2;
  c.minibatch_size = 16;
  c.epochs = 2;
  c.hidden = {16, 16};
  return c;
}

}  // namespace

TEST(Gae, LambdaZeroIsTdError) {
  std::mt19937_64 rng(1);
  const Eigen::VectorXd r = random_vector(10, rng), v = random_vector(11, rng);
  std::vector<char> done(10, 0);
  done[4] = 1;
  const GaeResult g = compute_gae(r, v, done, 0.9, 0.0);
  for (int t = 0; t < 10; ++t) {
    const double delta = r(t) + (done[t] ? 0.0 : 0.9 * v(t + 1)) - v(t);
    EXPECT_DOUBLE_EQ(g.advantages(t), delta);
    EXPECT_DOUBLE_EQ(g.returns(t), g.advantages(t) + v(t));
  }
}

TEST(Gae, UndiscountedZeroValuesAreSuffixSums) {
  std::mt19937_64 rng(2);
  const Eigen::VectorXd r = random_vector(12, rng);
  std::vector<char> done(12, 0);
  done[6] = 1;
  const GaeResult g = compute_gae(r, Eigen::VectorXd::Zero(13), done, 1.0, 1.0);
  for (int t = 0; t < 12; ++t) {
    const int end = t <= 6 ? 7 : 12;
    EXPECT_NEAR(g.advantages(t), r.segment(t, end - t).sum(), 1e-14);
  }
}

TEST(Gae, MatchesQuadraticOracle) {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution coin(0.1);
  for (int trial = 0; trial < 20; ++trial) {
    const int T = 64;
    const Eigen::VectorXd r = random_vector(T, rng), v = random_vector(T + 1, rng);
    std::vector<char> done(T);
    for (auto& d : done) d = coin(rng);
    const GaeResult g = compute_gae(r, v, done, 0.99, 0.95);
    const Eigen::VectorXd oracle = gae_oracle(r, v, done, 0.99, 0.95);
    EXPECT_LE((g.advantages - oracle).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((g.returns - (oracle + v.head(T))).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Gae, LengthMismatch) {
  EXPECT_THROW(compute_gae(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3), {0, 0, 0}, 0.9, 0.9),
               LengthMismatch);
  EXPECT_THROW(compute_gae(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(4), {0, 0}, 0.9, 0.9),
               LengthMismatch);
}

TEST(PpoLossTest, ZeroAdvantagesGiveZeroPolicyLoss) {
  const PolicyParams p = PolicyParams::initialize(5, {8}, 1);
  std::mt19937_64 rng(4);
  Eigen::MatrixXd obs(5, 10), act(3, 10);
  for (int b = 0; b < 10; ++b) {
    obs.col(b) = random_vector(5, rng);
    act.col(b) = random_vector(3, rng);
  }
  const PpoLoss l = ppo_loss(p, obs, act, Eigen::VectorXd::Zero(10), Eigen::VectorXd::Zero(10),
                             Eigen::VectorXd::Zero(10), PpoConfig{}, false);
  EXPECT_EQ(l.policy_loss, 0.0);
}

TEST(PpoLossTest, IdentityRatioSurrogate) {
  const PolicyParams p = PolicyParams::initialize(5, {8}, 2);
  std::mt19937_64 rng(5);
  Eigen::MatrixXd obs(5, 12), act(3, 12);
  Eigen::VectorXd old_lp(12);
  for (int b = 0; b < 12; ++b) {
    obs.col(b) = random_vector(5, rng);
    const ActorCriticOutput out = forward(p, obs.col(b));
    act.col(b) = sample_action(out, rng);
    old_lp(b) = log_prob_and_entropy(out, act.col(b)).log_prob;
  }
  const Eigen::VectorXd adv = random_vector(12, rng);
  const PpoLoss l = ppo_loss(p, obs, act, old_lp, adv, Eigen::VectorXd::Zero(12), PpoConfig{}, false);
  EXPECT_NEAR(l.policy_loss, -adv.mean(), 1e-12);
  EXPECT_EQ(l.clip_fraction, 0.0);
  EXPECT_NEAR(l.approx_kl, 0.0, 1e-12);
}

TEST(PpoLossTest, GradientMatchesFiniteDifferences) {
  PolicyParams p = PolicyParams::initialize(6, {16, 16}, 3);
  std::mt19937_64 rng(6);
  p.flat() += random_vector(int(p.size()), rng, 0.05);
  Eigen::MatrixXd obs(6, 20), act(3, 20);
  Eigen::VectorXd old_lp(20);
  for (int b = 0; b < 20; ++b) {
    obs.col(b) = random_vector(6, rng);
    const ActorCriticOutput out = forward(p, obs.col(b));
    act.col(b) = sample_action(out, rng);
    old_lp(b) = log_prob_and_entropy(out, act.col(b)).log_prob + 0.05 * random_vector(1, rng)(0);
  }
  const Eigen::VectorXd adv = random_vector(20, rng), ret = random_vector(20, rng);
  PpoConfig cfg;
  cfg.clip_ratio = 0.5;  // keep every sample away from the clip kink
  const PpoLoss l = ppo_loss(p, obs, act, old_lp, adv, ret, cfg, true);
  std::uniform_int_distribution<Eigen::Index> pick(0, p.size() - 1);
  for (int k = 0; k < 60; ++k) {
    const Eigen::Index i = k < 3 ? p.log_std_offset() + k : pick(rng);
    PolicyParams a = p, b = p;
    a.flat()(i) += 1e-5;
    b.flat()(i) -= 1e-5;
    const double fd = (ppo_loss(a, obs, act, old_lp, adv, ret, cfg, true).total -
                       ppo_loss(b, obs, act, old_lp, adv, ret, cfg, true).total) / 2e-5;
    const double scale = std::max({std::abs(fd), std::abs(l.gradient(i)), 1e-6});
    EXPECT_LE(std::abs(fd - l.gradient(i)) / scale, 1e-4) << "coordinate " << i;
  }
}

TEST(PpoUpdate, ZeroLearningRateKeepsParamsBitIdentical) {
  EnvConfig cfg;
  std::vector<std::unique_ptr<TrainingEnv>> envs;
  for (int e = 0; e < 2; ++e) envs.push_back(std::make_unique<RacingActiveEnv>(cfg, 1, e, 1));
  VecEnv vec(std::move(envs));
  const PolicyParams p = PolicyParams::initialize(vec.obs_dim(), {16, 16}, 1);
  std::mt19937_64 rng(1);
  RolloutBuffer buf = collect_rollouts(p, {}, vec, 32, 0.99, rng);
  buf.finalize(0.99, 0.95);
  PpoConfig c = small_config();
  c.learning_rate = 0.0;
  AdamState adam;
  const UpdateResult r = ppo_update(p, buf, c, adam, rng);
  EXPECT_TRUE(r.params.bitwise_equal(p));
  EXPECT_GE(r.stats.first_epoch_kl, -1e-6);
  EXPECT_GE(r.stats.clip_fraction, 0.0);
  EXPECT_LE(r.stats.clip_fraction, 1.0);
}

TEST(PpoUpdate, NonFiniteLossPreservesParamsAndOptimizer) {
  EnvConfig cfg;
  std::vector<std::unique_ptr<TrainingEnv>> envs;
  envs.push_back(std::make_unique<RacingActiveEnv>(cfg, 1, 0, 1));
  VecEnv vec(std::move(envs));
  const PolicyParams p = PolicyParams::initialize(vec.obs_dim(), {16}, 1);
  std::mt19937_64 rng(2);
  RolloutBuffer buf = collect_rollouts(p, {}, vec, 16, 0.99, rng);
  buf.rewards(3) = std::numeric_limits<double>::quiet_NaN();
  buf.finalize(0.99, 0.95);
  AdamState adam;
  PpoConfig c = small_config();
  c.minibatch_size = 16;
  EXPECT_THROW(ppo_update(p, buf, c, adam, rng), NonFiniteLoss);
  EXPECT_EQ(adam.t, 0);
  EXPECT_EQ(adam.m.size(), 0);
}

TEST(PpoUpdate, BanditMeanMovesTowardRewardedAction) {
  PpoConfig c;
  c.horizon = 64;
  c.num_envs = 1;
  c.minibatch_size = 64;
  c.epochs = 1;
  c.hidden = {8};
  c.normalize_rewards = false;
  c.learning_rate = 1e-2;
  std::vector<std::unique_ptr<TrainingEnv>> envs;
  envs.push_back(std::make_unique<BanditEnv>());
  VecEnv vec(std::move(envs));
  PpoLearner learner(PolicyParams::initialize(2, c.hidden, 4), c, 4);
  const Eigen::VectorXd obs = BanditEnv().reset();
  const double before = forward(learner.params(), obs).action_mean.x();
  double prev = before;
  int increases = 0;
  for (int i = 0; i < 100; ++i) {
    learner.iterate(vec);
    const double now = forward(learner.params(), obs).action_mean.x();
    increases += now > prev;
    prev = now;
  }
  EXPECT_GT(prev, before + 0.5);
  EXPECT_GT(increases, 60);
}

TEST(Adam, FirstStepIsSignedLearningRate) {
  Eigen::VectorXd p = Eigen::VectorXd::Zero(3);
  AdamState s;
  adam_step(p, Eigen::Vector3d(2.0, -0.5, 0.0), s, 0.1);
  EXPECT_NEAR(p(0), -0.1, 1e-6);
  EXPECT_NEAR(p(1), 0.1, 1e-6);
  EXPECT_EQ(p(2), 0.0);
  EXPECT_EQ(s.t, 1);
}

TEST(Rollouts, SingleAgentAndBufferShape) {
  EnvConfig cfg;
  std::vector<std::unique_ptr<TrainingEnv>> envs;
  for (int e = 0; e < 3; ++e) envs.push_back(std::make_unique<RacingActiveEnv>(cfg, 2, e, 1));
  VecEnv vec(std::move(envs));
  const PolicyParams p = PolicyParams::initialize(vec.obs_dim(), {16}, 2);
  std::mt19937_64 rng(3);
  RolloutBuffer buf = collect_rollouts(p, {}, vec, 20, 0.99, rng);
  EXPECT_EQ(buf.capacity(), 60);
  EXPECT_EQ(buf.obs.cols(), 60);
  EXPECT_FALSE(buf.finalized());
  buf.finalize(0.99, 0.95);
  EXPECT_TRUE(buf.finalized());
  EXPECT_TRUE(buf.advantages.allFinite());
}

TEST(Rollouts, OpponentsStayFrozen) {
  EnvConfig cfg;
  cfg.num_agents = 3;
  cfg.stage = builtin_stage(3);
  std::vector<std::unique_ptr<TrainingEnv>> envs;
  for (int e = 0; e < 2; ++e) envs.push_back(std::make_unique<RacingActiveEnv>(cfg, 3, e, 3));
  VecEnv vec(std::move(envs));
  const PolicyParams active = PolicyParams::initialize(vec.obs_dim(), {16}, 5);
  auto opponent = std::make_shared<const PolicyParams>(PolicyParams::initialize(vec.obs_dim(), {16}, 6));
  const PolicyParams copy = *opponent;
  std::mt19937_64 rng(4);
  collect_rollouts(active, {opponent, opponent}, vec, 64, 0.99, rng);
  EXPECT_TRUE(opponent->bitwise_equal(copy));
}

TEST(Rollouts, RewardsMatchReconstructionFromStates) {
  EnvConfig cfg;
  cfg.stage = builtin_stage(2);
  std::vector<std::vector<double>> logs(2);
  std::vector<std::unique_ptr<TrainingEnv>> envs;
  for (int e = 0; e < 2; ++e) envs.push_back(std::make_unique<ReconstructingEnv>(cfg, e, &logs[e]));
  VecEnv vec(std::move(envs));
  const PolicyParams p = PolicyParams::initialize(vec.obs_dim(), {16}, 7);
  std::mt19937_64 rng(5);
  const int horizon = 150;
  const RolloutBuffer buf = collect_rollouts(p, {}, vec, horizon, 0.99, rng, false);
  for (int e = 0; e < 2; ++e) {
    ASSERT_EQ(static_cast<int>(logs[e].size()), horizon);
    double buffer_sum = 0.0, log_sum = 0.0;
    for (int t = 0; t < horizon; ++t) {
      buffer_sum += buf.rewards(e * horizon + t);
      log_sum += logs[e][t];
      EXPECT_NEAR(buf.rewards(e * horizon + t), logs[e][t], 1e-12);
    }
    EXPECT_NEAR(buffer_sum, log_sum, 1e-9);
  }
}

TEST(Learner, DeterministicForFixedSeeds) {
  auto run = [] {
    EnvConfig cfg;
    std::vector<std::unique_ptr<TrainingEnv>> envs;
    for (int e = 0; e < 2; ++e) envs.push_back(std::make_unique<RacingActiveEnv>(cfg, 9, e, 1));
    VecEnv vec(std::move(envs));
    PpoLearner l(PolicyParams::initialize(vec.obs_dim(), {16, 16}, 9), small_config(), 9);
    std::vector<double> returns;
    for (int i = 0; i < 3; ++i) returns.push_back(l.iterate(vec).update.policy_loss);
    return std::make_pair(l.params(), returns);
  };
  const auto a = run(), b = run();
  EXPECT_TRUE(a.first.bitwise_equal(b.first));
  EXPECT_EQ(a.second, b.second);
}

TEST(PointMass, RewardIsNegativeVelocityError) {
  PointMassVelocityEnv env(3);
  const Eigen::VectorXd o = env.reset();
  ASSERT_EQ(o.size(), 9);
  EXPECT_EQ(o.head<3>(), Eigen::Vector3d::Zero());
  const Eigen::Vector3d target = env.target();
  Transition t;
  for (int i = 0; i < PointMassVelocityEnv::kEpisodeLength; ++i) {
    t = env.step(Eigen::Vector3d(2, 0, -2));
    const Eigen::Vector3d v = env.velocity();
    EXPECT_NEAR(t.reward, -(v - target).norm(), 1e-12);
  }
  EXPECT_TRUE(t.terminated || t.truncated);
  EXPECT_NEAR(env.velocity().x(), PointMassVelocityEnv::kAgility * PointMassVelocityEnv::kDt * 50, 1e-9);
}

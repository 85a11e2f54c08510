// PPO for a single learning agent. Environments expose only the active agent;
// any opponents are driven inside the environment by frozen parameters.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include "cruise/nn.hpp"

namespace cruise {

struct PpoConfig {
  int horizon{2048};
  int num_envs{8};
  int minibatch_size{512};
  int epochs{10};
  double clip_ratio{0.2};
  double gae_lambda{0.95};
  double gamma{0.99};
  double learning_rate{3e-4};
  double value_coef{0.5};
  double entropy_coef{0.003};
  double max_grad_norm{0.5};
  bool normalize_rewards{true};  // divide rewards by a running std of the discounted return
  bool normalize_observations{false};  // refresh the network's input normalizer each iteration
  std::int64_t total_timesteps{1'000'000};
  std::vector<int> hidden{128, 128};

  void validate() const;
  std::int64_t steps_per_iteration() const { return std::int64_t(horizon) * num_envs; }
};

struct GaeResult {
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;
};

/// `values` carries one extra trailing entry: the bootstrap value after the
/// last step. dones[t] marks that the episode ended after step t.
GaeResult compute_gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values,
                      const std::vector<char>& dones, double gamma, double lambda);

struct Transition {
  Eigen::VectorXd obs;
  double reward{0.0};
  bool terminated{false};
  bool truncated{false};
};

class RolloutBuffer;

/// Single-agent view of an environment, as seen by the learner.
class TrainingEnv {
 public:
  virtual ~TrainingEnv() = default;
  virtual int obs_dim() const = 0;
  virtual Eigen::VectorXd reset() = 0;
  virtual Transition step(const Eigen::Vector3d& action) = 0;
  /// Frozen opponents, if the environment has any.
  virtual void set_opponents(const std::vector<std::shared_ptr<const PolicyParams>>& opponents) {
    (void)opponents;
  }
};

/// Running mean/variance (parallel Welford update).
struct RunningMoments {
  double mean{0.0};
  double var{1.0};
  double count{1e-4};

  void update(const Eigen::VectorXd& batch);
};

/// A set of environments advanced in lock step, with per-env episode tallies.
class VecEnv {
 public:
  explicit VecEnv(std::vector<std::unique_ptr<TrainingEnv>> envs);

  int size() const { return static_cast<int>(envs_.size()); }
  int obs_dim() const { return envs_.front()->obs_dim(); }
  TrainingEnv& env(int i) { return *envs_[i]; }
  const Eigen::VectorXd& current_obs(int i) const { return obs_[i]; }
  void reset_all();
  /// Scale applied to rewards when normalization is on.
  double reward_scale() const { return 1.0 / std::sqrt(return_moments_.var + 1e-8); }

 private:
  friend class RolloutBuffer;
  friend RolloutBuffer collect_rollouts(const PolicyParams&,
                                        const std::vector<std::shared_ptr<const PolicyParams>>&,
                                        VecEnv&, int, double, std::mt19937_64&, bool);
  std::vector<std::unique_ptr<TrainingEnv>> envs_;
  std::vector<Eigen::VectorXd> obs_;
  std::vector<double> episode_return_;
  std::vector<int> episode_length_;
  std::vector<double> discounted_return_;
  RunningMoments return_moments_;
};

/// Fixed-capacity storage for horizon × num_envs active-agent transitions.
/// Entry (env, t) lives at column env * horizon + t.
class RolloutBuffer {
 public:
  RolloutBuffer(int obs_dim, int horizon, int num_envs);

  int horizon() const { return horizon_; }
  int num_envs() const { return num_envs_; }
  int capacity() const { return horizon_ * num_envs_; }
  bool finalized() const { return finalized_; }

  void store(int env, int t, const Eigen::VectorXd& obs, const Eigen::Vector3d& action,
             double log_prob, double value, double reward, bool done);
  void set_bootstrap(int env, double value) { bootstrap_(env) = value; }
  void finalize(double gamma, double lambda);

  Eigen::MatrixXd obs;
  Eigen::MatrixXd actions;
  Eigen::VectorXd log_probs;
  Eigen::VectorXd values;
  Eigen::VectorXd rewards;
  std::vector<char> dones;
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;

  // Completed-episode tallies gathered during collection.
  std::vector<double> episode_returns;
  std::vector<int> episode_lengths;

 private:
  int horizon_;
  int num_envs_;
  Eigen::VectorXd bootstrap_;
  bool finalized_{false};
};

/// Steps every env for `horizon` steps with actions sampled from `active`;
/// truncated episodes are bootstrapped by adding γ·V(s_T) to the last reward.
/// With `normalize_rewards`, stored rewards are divided by the running std of
/// the per-env discounted return (episode tallies stay raw).
RolloutBuffer collect_rollouts(const PolicyParams& active,
                               const std::vector<std::shared_ptr<const PolicyParams>>& opponents,
                               VecEnv& envs, int horizon, double gamma, std::mt19937_64& rng,
                               bool normalize_rewards = false);

/// Bias-corrected first/second moment optimizer state.
struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t t{0};
  double beta1{0.9};
  double beta2{0.999};
  double epsilon{1e-8};
};

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& state, double lr);

struct PpoLoss {
  double policy_loss{0.0};
  double value_loss{0.0};
  double entropy{0.0};
  double approx_kl{0.0};
  double clip_fraction{0.0};
  double total{0.0};
  Eigen::VectorXd gradient;  // d total / d params
};

/// Clipped-surrogate loss and its gradient on one minibatch. Advantages are
/// standardized inside when `normalize_advantages` is set.
PpoLoss ppo_loss(const PolicyParams& params, const Eigen::MatrixXd& obs,
                 const Eigen::MatrixXd& actions, const Eigen::VectorXd& old_log_probs,
                 const Eigen::VectorXd& advantages, const Eigen::VectorXd& returns,
                 const PpoConfig& config, bool normalize_advantages = true);

struct UpdateStats {
  double policy_loss{0.0};
  double value_loss{0.0};
  double entropy{0.0};
  double approx_kl{0.0};
  double first_epoch_kl{0.0};
  double clip_fraction{0.0};
  double grad_norm{0.0};
  int minibatches{0};
};

struct UpdateResult {
  PolicyParams params;
  UpdateStats stats;
};

/// Epochs of shuffled minibatch updates. Throws NonFiniteLoss before touching
/// `adam` if any minibatch loss or gradient is non-finite.
UpdateResult ppo_update(const PolicyParams& params, const RolloutBuffer& buffer,
                        const PpoConfig& config, AdamState& adam, std::mt19937_64& rng);

struct IterationStats {
  std::int64_t timesteps{0};
  UpdateStats update;
  double mean_episode_return{0.0};
  double mean_episode_length{0.0};
  int episodes{0};
};

/// Collect-then-update loop state for one learning agent.
class PpoLearner {
 public:
  PpoLearner(PolicyParams params, PpoConfig config, std::uint64_t seed);

  IterationStats iterate(VecEnv& envs,
                         const std::vector<std::shared_ptr<const PolicyParams>>& opponents = {});

  const PolicyParams& params() const { return params_; }
  void set_params(const PolicyParams& params);
  const PpoConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  void reset_optimizer() { adam_ = AdamState{}; }

 private:
  PolicyParams params_;
  PpoConfig config_;
  AdamState adam_;
  std::mt19937_64 rng_;
};

/// Built-in sanity task: a 3D point mass whose velocity must reach a random
/// target. Observation [v, v*, v* - v]; v += α·clip(a)·dt; reward −‖v − v*‖.
class PointMassVelocityEnv : public TrainingEnv {
 public:
  static constexpr int kEpisodeLength = 50;
  static constexpr double kAgility = 2.0;
  static constexpr double kDt = 0.1;

  explicit PointMassVelocityEnv(std::uint64_t seed);

  int obs_dim() const override { return 9; }
  Eigen::VectorXd reset() override;
  Transition step(const Eigen::Vector3d& action) override;

  const Eigen::Vector3d& velocity() const { return velocity_; }
  const Eigen::Vector3d& target() const { return target_; }

 private:
  Eigen::VectorXd observe() const;

  std::mt19937_64 rng_;
  Eigen::Vector3d velocity_{Eigen::Vector3d::Zero()};
  Eigen::Vector3d target_{Eigen::Vector3d::Zero()};
  int t_{0};
};

}  // namespace cruise

#include "cruise/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cruise/errors.hpp"

namespace cruise {

void PpoConfig::validate() const {
  if (horizon < 1) throw ConfigError("ppo.horizon", "must be >= 1");
  if (num_envs < 1) throw ConfigError("ppo.num_envs", "must be >= 1");
  if (minibatch_size < 1) throw ConfigError("ppo.minibatch_size", "must be >= 1");
  if (epochs < 1) throw ConfigError("ppo.epochs", "must be >= 1");
  if (!(clip_ratio > 0.0 && clip_ratio < 1.0)) throw ConfigError("ppo.clip_ratio", "must lie in (0, 1)");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("ppo.gamma", "must lie in (0, 1]");
  if (!(gae_lambda > 0.0 && gae_lambda <= 1.0)) throw ConfigError("ppo.gae_lambda", "must lie in (0, 1]");
  if (!(learning_rate >= 0.0)) throw ConfigError("ppo.learning_rate", "must be >= 0");
  if (!(value_coef >= 0.0)) throw ConfigError("ppo.value_coef", "must be >= 0");
  if (!(entropy_coef >= 0.0)) throw ConfigError("ppo.entropy_coef", "must be >= 0");
  if (!(max_grad_norm > 0.0)) throw ConfigError("ppo.max_grad_norm", "must be > 0");
  if (total_timesteps < 1) throw ConfigError("ppo.total_timesteps", "must be >= 1");
  for (int h : hidden)
    if (h < 1) throw ConfigError("ppo.hidden", "widths must be >= 1");
}

GaeResult compute_gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values,
                      const std::vector<char>& dones, double gamma, double lambda) {
  const Eigen::Index n = rewards.size();
  if (values.size() != n + 1 || static_cast<Eigen::Index>(dones.size()) != n)
    throw LengthMismatch("compute_gae expects |values| = |rewards| + 1 = |dones| + 1");
  GaeResult out;
  out.advantages.resize(n);
  double running = 0.0;
  for (Eigen::Index t = n; t-- > 0;) {
    const double live = dones[t] ? 0.0 : 1.0;
    const double delta = rewards(t) + gamma * values(t + 1) * live - values(t);
    running = delta + gamma * lambda * live * running;
    out.advantages(t) = running;
  }
  out.returns = out.advantages + values.head(n);
  return out;
}

void RunningMoments::update(const Eigen::VectorXd& batch) {
  const double n = double(batch.size());
  if (n == 0.0) return;
  const double b_mean = batch.mean();
  const double b_var = (batch.array() - b_mean).square().mean();
  const double delta = b_mean - mean;
  const double total = count + n;
  mean += delta * n / total;
  var = (var * count + b_var * n + delta * delta * count * n / total) / total;
  count = total;
}

VecEnv::VecEnv(std::vector<std::unique_ptr<TrainingEnv>> envs) : envs_(std::move(envs)) {
  if (envs_.empty()) throw ConfigError("ppo.num_envs", "need at least one environment");
  reset_all();
}

void VecEnv::reset_all() {
  obs_.clear();
  for (auto& e : envs_) obs_.push_back(e->reset());
  episode_return_.assign(envs_.size(), 0.0);
  episode_length_.assign(envs_.size(), 0);
  discounted_return_.assign(envs_.size(), 0.0);
  return_moments_ = RunningMoments{};
}

RolloutBuffer::RolloutBuffer(int obs_dim, int horizon, int num_envs)
    : obs(obs_dim, horizon * num_envs),
      actions(kActionDim, horizon * num_envs),
      log_probs(horizon * num_envs),
      values(horizon * num_envs),
      rewards(horizon * num_envs),
      dones(static_cast<std::size_t>(horizon) * num_envs, 0),
      horizon_(horizon),
      num_envs_(num_envs),
      bootstrap_(Eigen::VectorXd::Zero(num_envs)) {}

void RolloutBuffer::store(int env, int t, const Eigen::VectorXd& o, const Eigen::Vector3d& a,
                          double log_prob, double value, double reward, bool done) {
  const int col = env * horizon_ + t;
  obs.col(col) = o;
  actions.col(col) = a;
  log_probs(col) = log_prob;
  values(col) = value;
  rewards(col) = reward;
  dones[col] = done;
}

void RolloutBuffer::finalize(double gamma, double lambda) {
  advantages.resize(capacity());
  returns.resize(capacity());
  for (int e = 0; e < num_envs_; ++e) {
    const int begin = e * horizon_;
    Eigen::VectorXd v(horizon_ + 1);
    v.head(horizon_) = values.segment(begin, horizon_);
    v(horizon_) = bootstrap_(e);
    const std::vector<char> d(dones.begin() + begin, dones.begin() + begin + horizon_);
    const GaeResult g = compute_gae(rewards.segment(begin, horizon_), v, d, gamma, lambda);
    advantages.segment(begin, horizon_) = g.advantages;
    returns.segment(begin, horizon_) = g.returns;
  }
  finalized_ = true;
}

RolloutBuffer collect_rollouts(const PolicyParams& active,
                               const std::vector<std::shared_ptr<const PolicyParams>>& opponents,
                               VecEnv& envs, int horizon, double gamma, std::mt19937_64& rng,
                               bool normalize_rewards) {
  const int n_env = envs.size();
  for (int e = 0; e < n_env; ++e) envs.env(e).set_opponents(opponents);
  RolloutBuffer buffer(envs.obs_dim(), horizon, n_env);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::Array3d std_dev = active.log_std().array().exp();

  Eigen::MatrixXd batch(envs.obs_dim(), n_env);
  Eigen::VectorXd step_returns(n_env);
  for (int t = 0; t < horizon; ++t) {
    for (int e = 0; e < n_env; ++e) batch.col(e) = envs.obs_[e];
    const BatchForward fwd = forward_batch(active, batch);
    std::vector<Transition> trs(n_env);
    std::vector<Eigen::Vector3d> acts(n_env);
    std::vector<double> lps(n_env);
    for (int e = 0; e < n_env; ++e) {
      Eigen::Vector3d action;
      for (int d = 0; d < kActionDim; ++d) action(d) = fwd.means(d, e) + std_dev(d) * normal(rng);
      acts[e] = action;
      lps[e] = gaussian_log_prob(fwd.means.col(e), active.log_std(), action);
      trs[e] = envs.env(e).step(action);
      envs.discounted_return_[e] = envs.discounted_return_[e] * gamma + trs[e].reward;
      step_returns(e) = envs.discounted_return_[e];
    }
    if (normalize_rewards) envs.return_moments_.update(step_returns);
    const double scale = normalize_rewards ? envs.reward_scale() : 1.0;
    for (int e = 0; e < n_env; ++e) {
      Transition& tr = trs[e];
      double reward = tr.reward * scale;
      envs.episode_return_[e] += tr.reward;
      envs.episode_length_[e] += 1;
      const bool done = tr.terminated || tr.truncated;
      if (tr.truncated && !tr.terminated) reward += gamma * forward(active, tr.obs).value;
      buffer.store(e, t, batch.col(e), acts[e], lps[e], fwd.values(e), reward, done);
      if (done) {
        envs.discounted_return_[e] = 0.0;
        buffer.episode_returns.push_back(envs.episode_return_[e]);
        buffer.episode_lengths.push_back(envs.episode_length_[e]);
        envs.episode_return_[e] = 0.0;
        envs.episode_length_[e] = 0;
        envs.obs_[e] = envs.env(e).reset();
      } else {
        envs.obs_[e] = std::move(tr.obs);
      }
    }
  }
  for (int e = 0; e < n_env; ++e) batch.col(e) = envs.obs_[e];
  const BatchForward last = forward_batch(active, batch);
  for (int e = 0; e < n_env; ++e) buffer.set_bootstrap(e, last.values(e));
  return buffer;
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& s, double lr) {
  if (s.m.size() != params.size()) {
    s.m = Eigen::VectorXd::Zero(params.size());
    s.v = Eigen::VectorXd::Zero(params.size());
    s.t = 0;
  }
  s.t += 1;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grad;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(s.beta1, double(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, double(s.t));
  params.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.epsilon);
}

PpoLoss ppo_loss(const PolicyParams& params, const Eigen::MatrixXd& obs,
                 const Eigen::MatrixXd& actions, const Eigen::VectorXd& old_log_probs,
                 const Eigen::VectorXd& advantages, const Eigen::VectorXd& returns,
                 const PpoConfig& config, bool normalize_advantages) {
  const Eigen::Index b = obs.cols();
  const double inv_b = 1.0 / double(b);
  Eigen::VectorXd adv = advantages;
  if (normalize_advantages) {
    const double mean = adv.mean();
    const double var = (adv.array() - mean).square().mean();
    adv = (adv.array() - mean) / std::max(std::sqrt(var), 1e-8);
  }

  const BatchForward fwd = forward_batch(params, obs);
  const Eigen::Vector3d log_std = params.log_std();
  Eigen::RowVectorXd policy_coef(b), value_coef(b);
  PpoLoss loss;
  for (Eigen::Index i = 0; i < b; ++i) {
    const double log_prob = gaussian_log_prob(fwd.means.col(i), log_std, actions.col(i));
    const double log_ratio = log_prob - old_log_probs(i);
    const double ratio = std::exp(log_ratio);
    const double unclipped = ratio * adv(i);
    const double clipped =
        std::clamp(ratio, 1.0 - config.clip_ratio, 1.0 + config.clip_ratio) * adv(i);
    loss.policy_loss -= std::min(unclipped, clipped) * inv_b;
    policy_coef(i) = unclipped <= clipped ? -unclipped * inv_b : 0.0;
    if (std::abs(ratio - 1.0) > config.clip_ratio) loss.clip_fraction += inv_b;
    loss.approx_kl += ((ratio - 1.0) - log_ratio) * inv_b;
    const double err = fwd.values(i) - returns(i);
    loss.value_loss += err * err * inv_b;
    value_coef(i) = config.value_coef * 2.0 * err * inv_b;
  }
  loss.entropy = gaussian_entropy(log_std);
  loss.total = loss.policy_loss + config.value_coef * loss.value_loss -
               config.entropy_coef * loss.entropy;
  loss.gradient =
      backward_batch(params, obs, actions, fwd, policy_coef, value_coef, -config.entropy_coef);
  return loss;
}

UpdateResult ppo_update(const PolicyParams& params, const RolloutBuffer& buffer,
                        const PpoConfig& config, AdamState& adam, std::mt19937_64& rng) {
  if (!buffer.finalized()) throw CruiseError("ppo_update needs a finalized rollout buffer");
  const int n = buffer.capacity();
  const int mb = std::min(config.minibatch_size, n);
  UpdateResult result{params, {}};
  AdamState opt = adam;
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  const int obs_dim = static_cast<int>(buffer.obs.rows());
  Eigen::MatrixXd obs(obs_dim, mb), actions(kActionDim, mb);
  Eigen::VectorXd old_lp(mb), adv(mb), ret(mb);
  int first_epoch_batches = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int start = 0; start + mb <= n; start += mb) {
      for (int k = 0; k < mb; ++k) {
        const int idx = order[start + k];
        obs.col(k) = buffer.obs.col(idx);
        actions.col(k) = buffer.actions.col(idx);
        old_lp(k) = buffer.log_probs(idx);
        adv(k) = buffer.advantages(idx);
        ret(k) = buffer.returns(idx);
      }
      PpoLoss loss = ppo_loss(result.params, obs, actions, old_lp, adv, ret, config);
      if (!std::isfinite(loss.total) || !loss.gradient.allFinite())
        throw NonFiniteLoss("non-finite PPO loss in epoch " + std::to_string(epoch));
      const double norm = loss.gradient.norm();
      if (norm > config.max_grad_norm) loss.gradient *= config.max_grad_norm / norm;
      adam_step(result.params.flat(), loss.gradient, opt, config.learning_rate);

      UpdateStats& s = result.stats;
      s.policy_loss += loss.policy_loss;
      s.value_loss += loss.value_loss;
      s.entropy += loss.entropy;
      s.approx_kl += loss.approx_kl;
      s.clip_fraction += loss.clip_fraction;
      s.grad_norm += norm;
      s.minibatches += 1;
      if (epoch == 0) {
        s.first_epoch_kl += loss.approx_kl;
        ++first_epoch_batches;
      }
    }
  }
  UpdateStats& s = result.stats;
  if (s.minibatches > 0) {
    const double inv = 1.0 / s.minibatches;
    s.policy_loss *= inv;
    s.value_loss *= inv;
    s.entropy *= inv;
    s.approx_kl *= inv;
    s.clip_fraction *= inv;
    s.grad_norm *= inv;
  }
  if (first_epoch_batches > 0) s.first_epoch_kl /= first_epoch_batches;
  if (!result.params.flat().allFinite()) throw NonFiniteLoss("non-finite parameters after update");
  adam = std::move(opt);
  return result;
}

PpoLearner::PpoLearner(PolicyParams params, PpoConfig config, std::uint64_t seed)
    : params_(std::move(params)), config_(std::move(config)), rng_(seed) {
  config_.validate();
}

void PpoLearner::set_params(const PolicyParams& params) {
  if (!params.same_shape(params_)) throw ShapeMismatch("set_params: network shape differs");
  params_ = params;
}

IterationStats PpoLearner::iterate(VecEnv& envs,
                                   const std::vector<std::shared_ptr<const PolicyParams>>& opponents) {
  RolloutBuffer buffer = collect_rollouts(params_, opponents, envs, config_.horizon, config_.gamma, rng_,
                                          config_.normalize_rewards);
  buffer.finalize(config_.gamma, config_.gae_lambda);
  UpdateResult upd = ppo_update(params_, buffer, config_, adam_, rng_);
  params_ = std::move(upd.params);
  if (config_.normalize_observations) params_.input_normalizer().update(buffer.obs);

  IterationStats it;
  it.timesteps = buffer.capacity();
  it.update = upd.stats;
  it.episodes = static_cast<int>(buffer.episode_returns.size());
  if (it.episodes > 0) {
    it.mean_episode_return =
        std::accumulate(buffer.episode_returns.begin(), buffer.episode_returns.end(), 0.0) / it.episodes;
    it.mean_episode_length =
        std::accumulate(buffer.episode_lengths.begin(), buffer.episode_lengths.end(), 0.0) / it.episodes;
  }
  return it;
}

PointMassVelocityEnv::PointMassVelocityEnv(std::uint64_t seed) : rng_(seed) {}

Eigen::VectorXd PointMassVelocityEnv::observe() const {
  Eigen::VectorXd o(9);
  o << velocity_, target_, target_ - velocity_;
  return o;
}

Eigen::VectorXd PointMassVelocityEnv::reset() {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  velocity_.setZero();
  target_ = Eigen::Vector3d(u(rng_), u(rng_), u(rng_));
  t_ = 0;
  return observe();
}

Transition PointMassVelocityEnv::step(const Eigen::Vector3d& action) {
  velocity_ += kAgility * action.cwiseMax(-1.0).cwiseMin(1.0) * kDt;
  ++t_;
  Transition tr;
  tr.reward = -(velocity_ - target_).norm();
  tr.truncated = t_ >= kEpisodeLength;
  tr.obs = observe();
  return tr;
}

}  // namespace cruise

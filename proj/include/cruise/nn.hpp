// Dense actor-critic: separate tanh MLP trunks for the Gaussian policy mean and
// the value function, plus a state-independent log standard deviation.
//
// Parameters live in one flat vector so the optimizer, checkpointing and
// self-play copies all operate on plain bytes. Layout: every actor layer
// (weights column-major out×in, then bias), every critic layer, then log_std.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cruise/dynamics.hpp"

namespace cruise {

inline constexpr int kActionDim = 3;

struct LayerShape {
  int in{0};
  int out{0};

  bool operator==(const LayerShape&) const = default;
};

/// Running per-feature statistics used to standardize observations before the
/// first layer. Not trained by gradient; carried with the parameters.
struct InputNormalizer {
  static constexpr double kClip = 10.0;
  static constexpr double kEpsilon = 1e-8;

  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  double count{0.0};  // 0: identity transform

  void reset(int dim);
  /// Parallel Welford update with the columns of `batch`.
  void update(const Eigen::MatrixXd& batch);
  /// clip((x - mean) / sqrt(max(var, floor) + ε), ±kClip), column-wise.
  Eigen::MatrixXd apply(const Eigen::MatrixXd& obs) const;
};

class PolicyParams {
 public:
  PolicyParams() = default;
  /// Zero-initialized network with the given hidden widths for both trunks.
  PolicyParams(int obs_dim, const std::vector<int>& hidden);

  /// Orthogonal init: gain √2 on hidden layers, 0.01 on the policy head, 1 on
  /// the value head; log_std = ln(0.5).
  static PolicyParams initialize(int obs_dim, const std::vector<int>& hidden, std::uint64_t seed);

  int obs_dim() const { return actor_layers_.empty() ? 0 : actor_layers_.front().in; }
  std::vector<int> hidden_sizes() const;
  const std::vector<LayerShape>& actor_layers() const { return actor_layers_; }
  const std::vector<LayerShape>& critic_layers() const { return critic_layers_; }
  std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t seed) { seed_ = seed; }

  Eigen::VectorXd& flat() { return flat_; }
  const Eigen::VectorXd& flat() const { return flat_; }
  Eigen::Index size() const { return flat_.size(); }

  // Offsets into flat() for layer l of the actor or critic trunk.
  Eigen::Index actor_weight_offset(std::size_t l) const { return actor_offsets_[l]; }
  Eigen::Index critic_weight_offset(std::size_t l) const { return critic_offsets_[l]; }
  Eigen::Index log_std_offset() const { return flat_.size() - kActionDim; }
  /// True when index i belongs to an actor layer or log_std.
  bool is_actor_parameter(Eigen::Index i) const;

  Eigen::Map<const Eigen::MatrixXd> weight(bool actor, std::size_t l) const;
  Eigen::Map<const Eigen::VectorXd> bias(bool actor, std::size_t l) const;
  Eigen::Vector3d log_std() const { return flat_.tail<kActionDim>(); }

  const InputNormalizer& input_normalizer() const { return input_; }
  InputNormalizer& input_normalizer() { return input_; }

  bool same_shape(const PolicyParams& other) const {
    return actor_layers_ == other.actor_layers_ && critic_layers_ == other.critic_layers_;
  }
  /// Bit-exact comparison of shapes, every parameter and the input normalizer.
  bool bitwise_equal(const PolicyParams& other) const;

 private:
  void layout(int obs_dim, const std::vector<int>& hidden);

  std::vector<LayerShape> actor_layers_;
  std::vector<LayerShape> critic_layers_;
  std::vector<Eigen::Index> actor_offsets_;
  std::vector<Eigen::Index> critic_offsets_;
  Eigen::VectorXd flat_;
  InputNormalizer input_;
  std::uint64_t seed_{0};
};

struct ActorCriticOutput {
  Eigen::Vector3d action_mean{Eigen::Vector3d::Zero()};
  Eigen::Vector3d action_log_std{Eigen::Vector3d::Zero()};
  double value{0.0};
};

ActorCriticOutput forward(const PolicyParams& params, const Eigen::VectorXd& obs);

/// Column-batched forward pass; obs is obs_dim × B (raw, standardized inside).
struct BatchForward {
  Eigen::MatrixXd input;   // standardized observations
  Eigen::MatrixXd means;   // 3 × B
  Eigen::RowVectorXd values;
  std::vector<Eigen::MatrixXd> actor_hidden;   // post-activation, one per hidden layer
  std::vector<Eigen::MatrixXd> critic_hidden;
};

BatchForward forward_batch(const PolicyParams& params, const Eigen::MatrixXd& obs);

struct LogProbEntropy {
  double log_prob{0.0};
  double entropy{0.0};
};

LogProbEntropy log_prob_and_entropy(const ActorCriticOutput& out, const Eigen::Vector3d& action);

double gaussian_log_prob(const Eigen::Vector3d& mean, const Eigen::Vector3d& log_std,
                         const Eigen::Vector3d& action);
double gaussian_entropy(const Eigen::Vector3d& log_std);

/// Coefficients of the differentiated objective
/// policy·logp + value·V + entropy·H.
struct GradCoefficients {
  double policy{0.0};
  double value{0.0};
  double entropy{0.0};
};

/// Exact gradient of the weighted objective for one sample.
Eigen::VectorXd backward(const PolicyParams& params, const Eigen::VectorXd& obs,
                         const Eigen::Vector3d& action, const GradCoefficients& coef);

/// Gradient of Σ_b (policy_coef_b·logp_b + value_coef_b·V_b) + entropy_coef·H
/// over a column batch. `cache` must come from forward_batch on the same input.
Eigen::VectorXd backward_batch(const PolicyParams& params, const Eigen::MatrixXd& obs,
                               const Eigen::MatrixXd& actions, const BatchForward& cache,
                               const Eigen::RowVectorXd& policy_coef,
                               const Eigen::RowVectorXd& value_coef, double entropy_coef);

/// mean + σ ⊙ N(0, I).
Eigen::Vector3d sample_action(const ActorCriticOutput& out, std::mt19937_64& rng);

// Checkpoints: a text header (format version, obs dim, seed, layer shapes,
// parameter count) followed by one shortest round-trip decimal per line, then
// the input normalizer (count, means, variances).
void save_checkpoint(const PolicyParams& params, const std::filesystem::path& path);
PolicyParams load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_to_string(const PolicyParams& params);
PolicyParams checkpoint_from_string(const std::string& text);

}  // namespace cruise

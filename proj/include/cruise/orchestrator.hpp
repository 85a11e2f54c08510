// Curriculum schedule and iterative self-play: stage-by-stage PPO training of
// one active policy against frozen opponents, periodic evaluation and
// win-rate gated opponent synchronization.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cruise/curriculum.hpp"
#include "cruise/env.hpp"
#include "cruise/episode.hpp"
#include "cruise/nn.hpp"
#include "cruise/ppo.hpp"

namespace cruise {

enum class SelfPlayMode { kSingleAgentThenSelfPlay, kCurriculumSelfPlay };

const char* to_string(SelfPlayMode mode);
SelfPlayMode self_play_mode_from_string(const std::string& name);

struct SelfPlayConfig {
  std::int64_t eval_interval{100'000};  // T_eval [timesteps]
  int eval_episodes{20};                // M (also n_eval of the win rate)
  double win_threshold{0.6};            // τ
  int num_agents{4};                    // n
  SelfPlayMode mode{SelfPlayMode::kSingleAgentThenSelfPlay};
  std::int64_t selfplay_budget{10'000'000};  // default mode only

  void validate() const;
};

/// Outcome of one evaluation episode, by gates passed.
struct MatchResult {
  int active_progress{0};
  std::vector<int> opponent_progress;
  bool fault{false};

  /// Strictly ahead of every opponent; faults always lose.
  bool winner() const;
};

/// Fraction of strict wins. Throws EmptyResults on an empty list.
double win_rate(const std::vector<MatchResult>& results);

/// Evaluation seeds are drawn from a block disjoint from every training seed.
std::uint64_t eval_seed(int episode);
std::uint64_t training_seed(std::uint64_t run_seed, int env_index, std::uint64_t episode);

/// M deterministic episodes with agent 0 = active and agents 1..n-1 driven by
/// `opponents` (cycled when shorter). Each env config's stage is honoured.
std::vector<MatchResult> evaluate_active(const Policy& active, const std::vector<Policy>& opponents,
                                         const EnvConfig& config, int episodes,
                                         int layout_agents = 0);

/// Single-agent training view of a RacingEnv: the learner drives agent 0 and
/// frozen opponent networks (sampled actions) drive the rest.
class RacingActiveEnv : public TrainingEnv {
 public:
  RacingActiveEnv(const EnvConfig& config, std::uint64_t run_seed, int env_index,
                  int layout_agents);

  int obs_dim() const override;
  Eigen::VectorXd reset() override;
  Transition step(const Eigen::Vector3d& action) override;
  void set_opponents(const std::vector<std::shared_ptr<const PolicyParams>>& opponents) override;

  const RacingEnv& env() const { return env_; }

 private:
  RacingEnv env_;
  std::uint64_t run_seed_;
  int env_index_;
  int layout_;
  std::uint64_t episodes_{0};
  std::vector<std::shared_ptr<const PolicyParams>> opponents_;
  std::mt19937_64 opponent_rng_;
};

/// One contiguous block of training at fixed stage parameters.
struct TrainingPhase {
  std::string label;  // "stage_k" or "selfplay"
  CurriculumStage stage;
  int num_agents{1};
  std::int64_t budget{0};
};

std::vector<TrainingPhase> build_phases(const std::vector<CurriculumStage>& schedule,
                                        const SelfPlayConfig& sp);

/// Win rate of `active` against `opponents` at `stage`; replaceable in tests.
using Evaluator = std::function<double(const PolicyParams& active,
                                       const std::vector<std::shared_ptr<const PolicyParams>>& opponents,
                                       const TrainingPhase& phase, std::int64_t phase_timesteps)>;

struct IterationView {
  int phase{0};
  int iteration{0};
  std::int64_t phase_timesteps{0};
  std::int64_t total_timesteps{0};
  const PolicyParams* active{nullptr};
  const std::vector<std::shared_ptr<const PolicyParams>>* opponents{nullptr};
  bool evaluated{false};
  bool synced{false};
  double win_rate{0.0};
};

struct EvalRecord {
  int phase{0};
  std::int64_t phase_timesteps{0};
  std::int64_t total_timesteps{0};
  double win_rate{0.0};
  bool synced{false};
};

struct TrainingOptions {
  EnvConfig env;  // track, weights, drone, timing; stage and num_agents are set per phase
  std::vector<CurriculumStage> schedule{default_curriculum()};
  SelfPlayConfig selfplay;
  PpoConfig ppo;
  std::uint64_t seed{0};
  std::filesystem::path out_dir;  // empty: keep everything in memory
  Evaluator evaluator;            // empty: evaluate_active + win_rate
  std::function<void(const IterationView&)> observer;
  bool resume{false};
  int max_iterations{-1};  // stop early (for interruption tests); < 0 = unlimited
  int max_rollbacks{5};
};

struct TrainingResult {
  PolicyParams final_params;
  std::vector<TrainingPhase> phases;
  std::vector<PolicyParams> phase_start_params;
  std::vector<PolicyParams> phase_end_params;
  std::vector<IterationStats> iterations;
  std::vector<EvalRecord> evaluations;
  int syncs{0};
  int rollbacks{0};
  std::int64_t total_timesteps{0};
  bool completed{false};
};

TrainingResult run_training(const TrainingOptions& options);

/// Same machinery with a single stage-5 phase whose budget is the sum of the
/// given schedule's budgets.
TrainingResult run_vanilla_baseline(const TrainingOptions& options);

}  // namespace cruise

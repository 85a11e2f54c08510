// Multi-agent drone racing environment.
//
// Each env step holds the policy's reference velocity for `substeps` control
// and physics ticks, then evaluates gate passage, collisions, rewards and
// termination on the env-step positions.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cruise/control.hpp"
#include "cruise/curriculum.hpp"
#include "cruise/dynamics.hpp"
#include "cruise/track.hpp"

namespace cruise {

/// Stage-independent reward shaping. The collision and overtake weights live
/// on CurriculumStage because they change per stage.
struct RewardWeights {
  double proximity{1.0};
  double progress{1.0};
  double alignment{0.1};
  double speed{0.05};
  double proximity_shape{2.0};   // a
  double progress_scale{10.0};   // β [1/m]
  double align_epsilon{0.1};     // ε [m/s]
  double overtake_bonus{1.0};    // r_over
  double collision_radius{0.3};  // δ [m]
  double gate_bonus{1.0};        // extension, off in paper-strict mode

  void validate() const;
};

struct NormalizationConfig {
  double d_max{12.0};  // [m]
  double v_max{12.0};  // [m/s]

  void validate() const;
};

/// d_max = track diameter + 2 m.
NormalizationConfig default_normalization(const Track& track);

/// Dimension of one agent's observation: 13 + G + 4 (n - 1).
int observation_dim(int num_gates, int num_agents);

Eigen::VectorXd build_observation(int agent_idx, const std::vector<DroneStated>& states,
                                  const Track& track, const std::vector<ProgressState>& progress,
                                  const NormalizationConfig& norm,
                                  const std::vector<char>& active = {});

/// v_des = v + α clip(a, -1, 1) dt, then limited to ‖v_des‖ ≤ v_cap.
Vec3d apply_action(const Vec3d& raw_action, const DroneStated& state,
                   const CurriculumStage& stage, double dt, double v_cap);

double reward_proximity(double distance, const NormalizationConfig& norm,
                        const RewardWeights& weights);
double reward_progress(double d_prev, double d_now, const RewardWeights& weights,
                       bool target_switched = false);
double reward_alignment(const Vec3d& velocity, const Vec3d& unit_to_gate,
                        const RewardWeights& weights);
double reward_speed(double speed, const CurriculumStage& stage);

/// True when `other` moved from behind to ahead of `self` along self's heading
/// (heading taken at the matching time). Zero-speed headings never count.
bool overtook(const Vec3d& self_prev, const Vec3d& self_now, const Vec3d& vel_prev,
              const Vec3d& vel_now, const Vec3d& other_prev, const Vec3d& other_now,
              double epsilon);

/// Number of opponents j whose projection onto i's heading went from < 0 to > 0.
int overtake_events(int agent_idx, const std::vector<Vec3d>& positions_now,
                    const std::vector<Vec3d>& positions_prev,
                    const std::vector<Vec3d>& velocities_now,
                    const std::vector<Vec3d>& velocities_prev, double epsilon);

/// r_over · w_over^k · (overtake count).
double reward_overtake(int agent_idx, const std::vector<Vec3d>& positions_now,
                       const std::vector<Vec3d>& positions_prev,
                       const std::vector<Vec3d>& velocities_now,
                       const std::vector<Vec3d>& velocities_prev, const RewardWeights& weights,
                       const CurriculumStage& stage);

/// 1 iff another (active) agent is strictly closer than δ.
int reward_collision(int agent_idx, const std::vector<Vec3d>& positions,
                     const RewardWeights& weights, const std::vector<char>& active = {});

struct RewardComponents {
  double proximity{0.0};
  double progress{0.0};
  double alignment{0.0};
  double speed{0.0};
  double overtake{0.0};  // r_over · count, before w_over^k
  int collision{0};
  int out_of_bounds{0};
  int gate_passed{0};
};

double total_reward(const RewardComponents& c, const RewardWeights& weights,
                    const CurriculumStage& stage, bool paper_strict);

struct Bounds {
  Vec3d lower{Vec3d::Constant(-1e9)};
  Vec3d upper{Vec3d::Constant(1e9)};

  bool contains(const Vec3d& p) const {
    return (p.array() >= lower.array()).all() && (p.array() <= upper.array()).all();
  }
};

/// Gate-center bounding box grown by `margin`, floored at the ground (z = 0).
Bounds track_bounds(const Track& track, double margin);

struct EnvConfig {
  Track track{make_ring_track()};
  int num_agents{1};
  CurriculumStage stage{builtin_stage(1)};
  RewardWeights weights;
  NormalizationConfig norm;  // d_max <= 0 selects default_normalization(track)
  DroneParamsd drone;
  ControllerGainsd gains{ControllerGainsd::defaults_for(DroneParamsd{})};
  double control_dt{0.05};
  int substeps{5};
  int max_steps{1200};
  int lap_target{0};  // 0 disables lap-based finishing
  bool paper_strict{false};
  double v_cap{12.0};
  double spawn_radius{1.0};
  double spawn_distance{2.0};
  double spawn_spacing{0.6};
  double bounds_margin{3.0};

  void validate() const;
  /// Copy with `norm` resolved against the track when left at defaults.
  EnvConfig resolved() const;
};

enum class AgentStatus { kActive, kCollided, kOutOfBounds, kFault, kFinished, kTruncated };

const char* to_string(AgentStatus status);

enum class EventKind { kGatePass, kLap, kOvertake, kCollision, kOutOfBounds, kTermination, kTruncation, kFault };

const char* to_string(EventKind kind);

struct EnvEvent {
  EventKind kind{EventKind::kGatePass};
  int agent{-1};
  int other{-1};
  int gate{-1};
  int step{0};
  double time{0.0};
  std::string detail;
};

struct StepOutcome {
  std::vector<Eigen::VectorXd> observations;
  std::vector<double> rewards;
  std::vector<char> terminated;  // became terminal on this step
  std::vector<char> truncated;   // hit the step limit on this step
  std::vector<RewardComponents> components;
  std::vector<EnvEvent> events;
};

class RacingEnv {
 public:
  explicit RacingEnv(EnvConfig config);

  /// Randomized spawn behind gate 0; returns initial observations.
  std::vector<Eigen::VectorXd> reset(std::uint64_t seed);

  /// One action per agent; inactive agents' actions are ignored.
  StepOutcome step(const std::vector<Vec3d>& actions);

  Eigen::VectorXd observation(int agent) const;

  const EnvConfig& config() const { return config_; }
  int num_agents() const { return config_.num_agents; }
  int obs_dim() const;
  const std::vector<DroneStated>& states() const { return states_; }
  const std::vector<ProgressState>& progress() const { return progress_; }
  const std::vector<AgentStatus>& status() const { return status_; }
  bool is_active(int agent) const { return status_[agent] == AgentStatus::kActive; }
  bool episode_done() const;
  double sim_time() const { return sim_time_; }
  int step_count() const { return step_count_; }
  const Bounds& bounds() const { return bounds_; }

  /// Swap curriculum parameters; takes effect from the next step.
  void set_stage(const CurriculumStage& stage);

 private:
  std::vector<char> active_mask() const;

  EnvConfig config_;
  Bounds bounds_;
  std::vector<DroneStated> states_;
  std::vector<ControllerStated> controllers_;
  std::vector<ProgressState> progress_;
  std::vector<AgentStatus> status_;
  double sim_time_{0.0};
  int step_count_{0};
};

}  // namespace cruise

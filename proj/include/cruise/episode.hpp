// Policy sources and a deterministic episode runner shared by evaluation,
// self-play matches and trajectory export.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "cruise/env.hpp"
#include "cruise/nn.hpp"

namespace cruise {

/// Maps one agent's observation to a raw action.
using Policy = std::function<Vec3d(const Eigen::VectorXd&)>;

/// Mean action of a network (no sampling).
Policy deterministic_policy(std::shared_ptr<const PolicyParams> params);

/// Always outputs zero acceleration.
Policy zero_policy();

/// Observation of `agent` laid out for `layout_agents` agents. Slots beyond
/// the env's own agent count are filled as inactive opponents, which lets a
/// network sized for n agents act in smaller environments.
Eigen::VectorXd padded_observation(const RacingEnv& env, int agent, int layout_agents);

struct TrajectoryRecord {
  double t{0.0};
  int step{0};
  int agent{0};
  Vec3d position{Vec3d::Zero()};
  Vec3d velocity{Vec3d::Zero()};
  int next_gate_index{0};
  std::vector<EnvEvent> events;
};

struct EpisodeTrace {
  std::uint64_t seed{0};
  int steps{0};
  double duration{0.0};
  std::vector<DroneStated> initial_states;
  std::vector<ProgressState> progress;
  std::vector<AgentStatus> status;
  std::vector<double> path_length;  // [m] while active
  std::vector<double> active_time;  // [s]
  std::vector<EnvEvent> events;
  std::vector<TrajectoryRecord> history;  // filled when recording
  bool fault{false};
};

/// Runs one episode to completion with one policy per agent.
/// `layout_agents` = 0 uses the env's own agent count.
EpisodeTrace play_episode(const EnvConfig& config, const std::vector<Policy>& policies,
                          std::uint64_t seed, int layout_agents = 0, bool record = false);

}  // namespace cruise

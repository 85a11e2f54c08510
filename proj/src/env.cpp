#include "cruise/env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace cruise {

void RewardWeights::validate() const {
  auto nonneg = [](double v, const char* field) {
    if (!(v >= 0.0)) throw ConfigError(std::string("reward.") + field, "must be >= 0");
  };
  auto pos = [](double v, const char* field) {
    if (!(v > 0.0)) throw ConfigError(std::string("reward.") + field, "must be > 0");
  };
  nonneg(proximity, "proximity");
  nonneg(progress, "progress");
  nonneg(alignment, "alignment");
  nonneg(speed, "speed");
  nonneg(overtake_bonus, "overtake_bonus");
  nonneg(gate_bonus, "gate_bonus");
  pos(proximity_shape, "proximity_shape");
  pos(progress_scale, "progress_scale");
  pos(align_epsilon, "align_epsilon");
  pos(collision_radius, "collision_radius");
}

void NormalizationConfig::validate() const {
  if (!(d_max > 0.0)) throw ConfigError("normalization.d_max", "must be > 0");
  if (!(v_max > 0.0)) throw ConfigError("normalization.v_max", "must be > 0");
}

NormalizationConfig default_normalization(const Track& track) {
  return {track.diameter() + 2.0, 12.0};
}

int observation_dim(int num_gates, int num_agents) {
  return 13 + num_gates + 4 * (num_agents - 1);
}

Eigen::VectorXd build_observation(int agent_idx, const std::vector<DroneStated>& states,
                                  const Track& track, const std::vector<ProgressState>& progress,
                                  const NormalizationConfig& norm,
                                  const std::vector<char>& active) {
  const int n = static_cast<int>(states.size());
  const int num_gates = track.num_gates();
  Eigen::VectorXd obs(observation_dim(num_gates, n));
  const DroneStated& self = states[agent_idx];
  const Gate& gate = track.gates[progress[agent_idx].next_gate_index];

  const Vec3d to_gate = gate.center - self.position;
  const double dist = to_gate.norm();
  const Vec3d unit_to_gate = dist > 0.0 ? Vec3d(to_gate / dist) : Vec3d::Zero();

  int k = 0;
  obs.segment<3>(k) = (to_gate / norm.d_max).cwiseMax(-1.0).cwiseMin(1.0);
  k += 3;
  obs(k++) = std::clamp(dist / norm.d_max, 0.0, 1.0);
  obs.segment<3>(k) = self.velocity / norm.v_max;
  k += 3;
  obs(k++) = self.velocity.dot(unit_to_gate) / norm.v_max;
  obs.segment(k, num_gates).setZero();
  obs(k + progress[agent_idx].next_gate_index) = 1.0;
  k += num_gates;
  obs.segment<3>(k) = self.position / norm.d_max;
  k += 3;
  const double yaw_delta = gate.yaw - self.euler.z();
  obs(k++) = std::sin(yaw_delta);
  obs(k++) = std::cos(yaw_delta);

  // Opponents nearest first; inactive ones go last at the clamped distance.
  struct Entry {
    int index;
    double distance;
    bool live;
  };
  std::vector<Entry> opponents;
  for (int j = 0; j < n; ++j) {
    if (j == agent_idx) continue;
    const bool live = active.empty() || active[j];
    opponents.push_back({j, (states[j].position - self.position).norm(), live});
  }
  std::stable_sort(opponents.begin(), opponents.end(), [](const Entry& a, const Entry& b) {
    if (a.live != b.live) return a.live;
    if (!a.live) return false;
    return a.distance < b.distance;
  });
  const int rel_offset = k;
  const int dist_offset = k + 3 * (n - 1);
  for (int m = 0; m < n - 1; ++m) {
    const Entry& e = opponents[m];
    if (e.live) {
      const Vec3d rel = (states[e.index].position - self.position) / norm.d_max;
      obs.segment<3>(rel_offset + 3 * m) = rel.cwiseMax(-1.0).cwiseMin(1.0);
      obs(dist_offset + m) = std::clamp(e.distance / norm.d_max, 0.0, 1.0);
    } else {
      obs.segment<3>(rel_offset + 3 * m).setZero();
      obs(dist_offset + m) = 1.0;
    }
  }
  return obs;
}

Vec3d apply_action(const Vec3d& raw_action, const DroneStated& state,
                   const CurriculumStage& stage, double dt, double v_cap) {
  const Vec3d clipped = raw_action.cwiseMax(-1.0).cwiseMin(1.0);
  Vec3d v_des = state.velocity + (stage.agility * clipped) * dt;
  const double speed = v_des.norm();
  if (speed > v_cap) v_des *= v_cap / speed;
  return v_des;
}

double reward_proximity(double distance, const NormalizationConfig& norm,
                        const RewardWeights& weights) {
  const double a = weights.proximity_shape;
  const double x = std::clamp(distance / norm.d_max, 0.0, 1.0);
  const double floor = std::exp(-a);
  return 2.0 * (std::exp(-a * x) - floor) / (1.0 - floor) - 1.0;
}

double reward_progress(double d_prev, double d_now, const RewardWeights& weights,
                       bool target_switched) {
  if (target_switched) return 0.0;
  return weights.progress_scale * (d_prev - d_now);
}

double reward_alignment(const Vec3d& velocity, const Vec3d& unit_to_gate,
                        const RewardWeights& weights) {
  const double speed = velocity.norm();
  const double u_norm = unit_to_gate.norm();
  if (!(speed > weights.align_epsilon) || u_norm == 0.0) return 0.0;
  const double cosine = std::clamp(velocity.dot(unit_to_gate) / (speed * u_norm), -1.0, 1.0);
  return 1.0 - cosine;
}

double reward_speed(double speed, const CurriculumStage& stage) {
  return speed <= stage.v_min ? speed - stage.v_min : stage.v_min - speed;
}

bool overtook(const Vec3d& self_prev, const Vec3d& self_now, const Vec3d& vel_prev,
              const Vec3d& vel_now, const Vec3d& other_prev, const Vec3d& other_now,
              double epsilon) {
  const double speed_prev = vel_prev.norm();
  const double speed_now = vel_now.norm();
  if (!(speed_prev > epsilon) || !(speed_now > epsilon)) return false;
  const double proj_prev = (other_prev - self_prev).dot(vel_prev / speed_prev);
  const double proj_now = (other_now - self_now).dot(vel_now / speed_now);
  return proj_prev < 0.0 && proj_now > 0.0;
}

int overtake_events(int agent_idx, const std::vector<Vec3d>& positions_now,
                    const std::vector<Vec3d>& positions_prev,
                    const std::vector<Vec3d>& velocities_now,
                    const std::vector<Vec3d>& velocities_prev, double epsilon) {
  int count = 0;
  for (std::size_t j = 0; j < positions_now.size(); ++j) {
    if (static_cast<int>(j) == agent_idx) continue;
    count += overtook(positions_prev[agent_idx], positions_now[agent_idx],
                      velocities_prev[agent_idx], velocities_now[agent_idx], positions_prev[j],
                      positions_now[j], epsilon);
  }
  return count;
}

double reward_overtake(int agent_idx, const std::vector<Vec3d>& positions_now,
                       const std::vector<Vec3d>& positions_prev,
                       const std::vector<Vec3d>& velocities_now,
                       const std::vector<Vec3d>& velocities_prev, const RewardWeights& weights,
                       const CurriculumStage& stage) {
  const int count = overtake_events(agent_idx, positions_now, positions_prev, velocities_now,
                                    velocities_prev, weights.align_epsilon);
  return weights.overtake_bonus * stage.overtake_weight * count;
}

int reward_collision(int agent_idx, const std::vector<Vec3d>& positions,
                     const RewardWeights& weights, const std::vector<char>& active) {
  for (std::size_t j = 0; j < positions.size(); ++j) {
    if (static_cast<int>(j) == agent_idx) continue;
    if (!active.empty() && !active[j]) continue;
    if ((positions[j] - positions[agent_idx]).norm() < weights.collision_radius) return 1;
  }
  return 0;
}

double total_reward(const RewardComponents& c, const RewardWeights& weights,
                    const CurriculumStage& stage, bool paper_strict) {
  double r = weights.proximity * c.proximity + weights.progress * c.progress -
             weights.alignment * c.alignment + weights.speed * c.speed +
             stage.overtake_weight * c.overtake;
  if (stage.collisions_enabled) r -= stage.collision_weight * c.collision;
  if (!paper_strict) {
    r += weights.gate_bonus * c.gate_passed;
    if (stage.collisions_enabled) r -= stage.collision_weight * c.out_of_bounds;
  }
  return r;
}

Bounds track_bounds(const Track& track, double margin) {
  Bounds b;
  b.lower = Vec3d::Constant(std::numeric_limits<double>::infinity());
  b.upper = -b.lower;
  for (const Gate& g : track.gates) {
    b.lower = b.lower.cwiseMin(g.center);
    b.upper = b.upper.cwiseMax(g.center);
  }
  b.lower.array() -= margin;
  b.upper.array() += margin;
  b.lower.z() = std::max(b.lower.z(), 0.0);
  return b;
}

void EnvConfig::validate() const {
  track.validate();
  if (num_agents < 1) throw ConfigError("env.num_agents", "must be >= 1");
  stage.validate();
  weights.validate();
  if (norm.d_max > 0.0) norm.validate();
  drone.validate();
  gains.validate();
  if (!(control_dt > 0.0)) throw ConfigError("env.control_dt", "must be > 0");
  if (substeps < 1) throw ConfigError("env.substeps", "must be >= 1");
  if (max_steps < 1) throw ConfigError("env.max_steps", "must be >= 1");
  if (lap_target < 0) throw ConfigError("env.lap_target", "must be >= 0");
  if (!(v_cap > 0.0)) throw ConfigError("env.v_cap", "must be > 0");
  if (!(spawn_radius > 0.0)) throw ConfigError("env.spawn_radius", "must be > 0");
  if (num_agents > 1 && !(spawn_spacing >= weights.collision_radius))
    throw ConfigError("env.spawn_spacing", "must be >= the collision radius");
}

EnvConfig EnvConfig::resolved() const {
  EnvConfig out = *this;
  if (!(out.norm.d_max > 0.0)) out.norm.d_max = default_normalization(track).d_max;
  return out;
}

const char* to_string(AgentStatus status) {
  switch (status) {
    case AgentStatus::kActive: return "active";
    case AgentStatus::kCollided: return "collision";
    case AgentStatus::kOutOfBounds: return "out_of_bounds";
    case AgentStatus::kFault: return "fault";
    case AgentStatus::kFinished: return "finished";
    case AgentStatus::kTruncated: return "truncated";
  }
  return "unknown";
}

const char* to_string(EventKind kind) {
  switch (kind) {
    case EventKind::kGatePass: return "gate_pass";
    case EventKind::kLap: return "lap";
    case EventKind::kOvertake: return "overtake";
    case EventKind::kCollision: return "collision";
    case EventKind::kOutOfBounds: return "out_of_bounds";
    case EventKind::kTermination: return "termination";
    case EventKind::kTruncation: return "truncation";
    case EventKind::kFault: return "fault";
  }
  return "unknown";
}

RacingEnv::RacingEnv(EnvConfig config) : config_(std::move(config)) {
  config_ = config_.resolved();
  config_.validate();
  bounds_ = track_bounds(config_.track, config_.bounds_margin);
  reset(0);
}

int RacingEnv::obs_dim() const {
  return observation_dim(config_.track.num_gates(), config_.num_agents);
}

void RacingEnv::set_stage(const CurriculumStage& stage) {
  stage.validate();
  config_.stage = stage;
}

std::vector<Eigen::VectorXd> RacingEnv::reset(std::uint64_t seed) {
  const int n = config_.num_agents;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  const Gate& first = config_.track.gates.front();
  const Vec3d behind = first.center - config_.spawn_distance * first.normal();

  // Random slot assignment, then jitter inside the spawn disc.
  std::vector<int> slots(n);
  std::iota(slots.begin(), slots.end(), 0);
  std::shuffle(slots.begin(), slots.end(), rng);
  const double jitter = std::max(0.0, std::min(0.1, (config_.spawn_spacing - config_.weights.collision_radius) / 2.0));

  states_.assign(n, DroneStated{});
  controllers_.assign(n, ControllerStated{});
  progress_.assign(n, ProgressState{});
  status_.assign(n, AgentStatus::kActive);
  for (int i = 0; i < n; ++i) {
    const double slot = slots[i] - 0.5 * (n - 1);
    Vec3d offset = slot * config_.spawn_spacing * first.lateral();
    offset += jitter * Vec3d(unit(rng), unit(rng), unit(rng));
    if (offset.norm() > config_.spawn_radius) offset *= config_.spawn_radius / offset.norm();
    states_[i].position = behind + offset;
    states_[i].euler.z() = 0.0;
  }
  sim_time_ = 0.0;
  step_count_ = 0;

  std::vector<Eigen::VectorXd> obs;
  for (int i = 0; i < n; ++i) obs.push_back(observation(i));
  return obs;
}

std::vector<char> RacingEnv::active_mask() const {
  std::vector<char> mask(status_.size());
  for (std::size_t i = 0; i < status_.size(); ++i) mask[i] = status_[i] == AgentStatus::kActive;
  return mask;
}

Eigen::VectorXd RacingEnv::observation(int agent) const {
  return build_observation(agent, states_, config_.track, progress_, config_.norm, active_mask());
}

bool RacingEnv::episode_done() const {
  return std::none_of(status_.begin(), status_.end(),
                      [](AgentStatus s) { return s == AgentStatus::kActive; });
}

StepOutcome RacingEnv::step(const std::vector<Vec3d>& actions) {
  const int n = config_.num_agents;
  if (static_cast<int>(actions.size()) != n)
    throw ShapeMismatch("expected one action per agent");
  const CurriculumStage& stage = config_.stage;
  const Track& track = config_.track;
  const double dt = config_.control_dt;
  const double sub_dt = dt / config_.substeps;

  StepOutcome out;
  out.rewards.assign(n, 0.0);
  out.terminated.assign(n, 0);
  out.truncated.assign(n, 0);
  out.components.assign(n, RewardComponents{});

  const std::vector<char> was_active = active_mask();
  std::vector<Vec3d> pos_prev(n), vel_prev(n);
  for (int i = 0; i < n; ++i) {
    pos_prev[i] = states_[i].position;
    vel_prev[i] = states_[i].velocity;
  }

  sim_time_ += dt;
  ++step_count_;

  auto emit = [&](EventKind kind, int agent, int other = -1, int gate = -1,
                  std::string detail = {}) {
    out.events.push_back({kind, agent, other, gate, step_count_, sim_time_, std::move(detail)});
  };

  for (int i = 0; i < n; ++i) {
    if (!was_active[i]) continue;
    const Vec3d v_des = apply_action(actions[i], states_[i], stage, dt, config_.v_cap);
    try {
      for (int s = 0; s < config_.substeps; ++s) {
        const TrackingOutput<double> ctl = track_velocity(v_des, states_[i], controllers_[i],
                                                          config_.gains, config_.drone, sub_dt);
        controllers_[i] = ctl.state;
        states_[i] = cruise::step(states_[i], ctl.command, config_.drone, sub_dt);
      }
    } catch (const CruiseError& e) {
      status_[i] = AgentStatus::kFault;
      states_[i].position = pos_prev[i];
      states_[i].velocity.setZero();
      out.terminated[i] = 1;
      emit(EventKind::kFault, i, -1, -1, e.what());
    }
  }

  std::vector<Vec3d> pos_now(n), vel_now(n);
  for (int i = 0; i < n; ++i) {
    pos_now[i] = states_[i].position;
    vel_now[i] = states_[i].velocity;
  }
  const std::vector<char> live = active_mask();

  for (int i = 0; i < n; ++i) {
    if (!live[i]) continue;
    RewardComponents& c = out.components[i];
    const int target = progress_[i].next_gate_index;
    const Gate& gate = track.gates[target];
    const double d_prev = (gate.center - pos_prev[i]).norm();
    const bool passed = check_gate_passage(pos_prev[i], pos_now[i], gate, stage.gate_tolerance);
    const int laps_before = progress_[i].laps_completed;
    progress_[i] = update_progress(progress_[i], passed, sim_time_, track.num_gates());
    if (passed) {
      c.gate_passed = 1;
      emit(EventKind::kGatePass, i, -1, target);
      if (progress_[i].laps_completed > laps_before) emit(EventKind::kLap, i, -1, target);
    }

    const Gate& next_gate = track.gates[progress_[i].next_gate_index];
    const Vec3d to_gate = next_gate.center - pos_now[i];
    const double d_now = to_gate.norm();
    const Vec3d unit_to_gate = d_now > 0.0 ? Vec3d(to_gate / d_now) : Vec3d::Zero();

    c.proximity = reward_proximity(d_now, config_.norm, config_.weights);
    c.progress = reward_progress(d_prev, d_now, config_.weights, passed);
    c.alignment = reward_alignment(vel_now[i], unit_to_gate, config_.weights);
    c.speed = reward_speed(vel_now[i].norm(), stage);
    if (n > 1) {
      int events = 0;
      for (int j = 0; j < n; ++j) {
        if (j == i || !live[j]) continue;
        if (overtook(pos_prev[i], pos_now[i], vel_prev[i], vel_now[i], pos_prev[j], pos_now[j],
                     config_.weights.align_epsilon)) {
          emit(EventKind::kOvertake, i, j);
          ++events;
        }
      }
      c.overtake = config_.weights.overtake_bonus * events;
    }
    c.collision = reward_collision(i, pos_now, config_.weights, live);
    c.out_of_bounds = bounds_.contains(pos_now[i]) ? 0 : 1;
    out.rewards[i] = total_reward(c, config_.weights, stage, config_.paper_strict);
  }

  // Termination is decided after every agent's reward so collisions stay symmetric.
  for (int i = 0; i < n; ++i) {
    if (!live[i]) continue;
    const RewardComponents& c = out.components[i];
    if (c.collision) {
      for (int j = 0; j < n; ++j)
        if (j > i && live[j] && (pos_now[j] - pos_now[i]).norm() < config_.weights.collision_radius)
          emit(EventKind::kCollision, i, j);
    }
    if (c.out_of_bounds) emit(EventKind::kOutOfBounds, i);
    if (stage.collision_terminal && (c.collision || c.out_of_bounds)) {
      status_[i] = c.collision ? AgentStatus::kCollided : AgentStatus::kOutOfBounds;
      out.terminated[i] = 1;
      emit(EventKind::kTermination, i, -1, -1, to_string(status_[i]));
    } else if (config_.lap_target > 0 && progress_[i].laps_completed >= config_.lap_target) {
      status_[i] = AgentStatus::kFinished;
      out.terminated[i] = 1;
      emit(EventKind::kTermination, i, -1, -1, to_string(status_[i]));
    } else if (step_count_ >= config_.max_steps) {
      status_[i] = AgentStatus::kTruncated;
      out.truncated[i] = 1;
      emit(EventKind::kTruncation, i);
    }
  }

  out.observations.reserve(n);
  for (int i = 0; i < n; ++i) out.observations.push_back(observation(i));
  return out;
}

}  // namespace cruise

#include "cruise/episode.hpp"

#include "cruise/errors.hpp"

namespace cruise {

Policy deterministic_policy(std::shared_ptr<const PolicyParams> params) {
  return [params = std::move(params)](const Eigen::VectorXd& obs) -> Vec3d {
    return forward(*params, obs).action_mean;
  };
}

Policy zero_policy() {
  return [](const Eigen::VectorXd&) -> Vec3d { return Vec3d::Zero(); };
}

Eigen::VectorXd padded_observation(const RacingEnv& env, int agent, int layout_agents) {
  const int n = env.num_agents();
  if (layout_agents <= n) return env.observation(agent);
  std::vector<DroneStated> states = env.states();
  std::vector<ProgressState> progress = env.progress();
  std::vector<char> active(layout_agents, 0);
  for (int i = 0; i < n; ++i) active[i] = env.is_active(i);
  active[agent] = 1;
  states.resize(layout_agents);
  progress.resize(layout_agents);
  return build_observation(agent, states, env.config().track, progress, env.config().norm, active);
}

EpisodeTrace play_episode(const EnvConfig& config, const std::vector<Policy>& policies,
                          std::uint64_t seed, int layout_agents, bool record) {
  RacingEnv env(config);
  const int n = env.num_agents();
  if (static_cast<int>(policies.size()) != n)
    throw ShapeMismatch("play_episode: expected one policy per agent");
  const int layout = std::max(layout_agents, n);
  env.reset(seed);

  EpisodeTrace trace;
  trace.seed = seed;
  trace.initial_states = env.states();
  trace.path_length.assign(n, 0.0);
  trace.active_time.assign(n, 0.0);

  std::vector<Vec3d> actions(n, Vec3d::Zero());
  while (!env.episode_done()) {
    std::vector<char> live(n);
    std::vector<Vec3d> before(n);
    for (int i = 0; i < n; ++i) {
      live[i] = env.is_active(i);
      before[i] = env.states()[i].position;
      actions[i] = live[i] ? policies[i](padded_observation(env, i, layout)) : Vec3d::Zero();
    }
    StepOutcome out = env.step(actions);
    for (int i = 0; i < n; ++i) {
      if (!live[i]) continue;
      const DroneStated& s = env.states()[i];
      trace.path_length[i] += (s.position - before[i]).norm();
      trace.active_time[i] += config.control_dt;
      if (record) {
        TrajectoryRecord r;
        r.t = env.sim_time();
        r.step = env.step_count();
        r.agent = i;
        r.position = s.position;
        r.velocity = s.velocity;
        r.next_gate_index = env.progress()[i].next_gate_index;
        for (const EnvEvent& e : out.events)
          if (e.agent == i) r.events.push_back(e);
        trace.history.push_back(std::move(r));
      }
    }
    for (EnvEvent& e : out.events) {
      if (e.kind == EventKind::kFault) trace.fault = true;
      trace.events.push_back(std::move(e));
    }
  }
  trace.steps = env.step_count();
  trace.duration = env.sim_time();
  trace.progress = env.progress();
  trace.status = env.status();
  return trace;
}

}  // namespace cruise

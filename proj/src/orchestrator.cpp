#include "cruise/orchestrator.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "cruise/errors.hpp"

namespace cruise {

namespace {

using json = nlohmann::json;
using OpponentSet = std::vector<std::shared_ptr<const PolicyParams>>;

constexpr std::uint64_t kEvalSeedBit = 1ULL << 63;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix(a ^ splitmix(b)); }

OpponentSet copies_of(const PolicyParams& params, int count) {
  OpponentSet out;
  for (int i = 0; i < count; ++i) out.push_back(std::make_shared<const PolicyParams>(params));
  return out;
}

void append_line(const std::filesystem::path& path, const json& j) {
  std::ofstream f(path, std::ios::app);
  f << j.dump() << '\n';
  if (!f) throw CruiseError("cannot write " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  f << text;
  if (!f) throw CruiseError("cannot write " + path.string());
}

struct RunState {
  int phase{0};
  std::int64_t phase_timesteps{0};
  std::int64_t total_timesteps{0};
  std::int64_t evals_done{0};
  int iteration{0};
  int syncs{0};
  int rollbacks{0};
  double learning_rate{0.0};
};

json to_json(const RunState& s) {
  return {{"phase", s.phase},
          {"phase_timesteps", s.phase_timesteps},
          {"total_timesteps", s.total_timesteps},
          {"evals_done", s.evals_done},
          {"iteration", s.iteration},
          {"syncs", s.syncs},
          {"rollbacks", s.rollbacks},
          {"learning_rate", s.learning_rate}};
}

RunState run_state_from_json(const json& j) {
  RunState s;
  s.phase = j.at("phase").get<int>();
  s.phase_timesteps = j.at("phase_timesteps").get<std::int64_t>();
  s.total_timesteps = j.at("total_timesteps").get<std::int64_t>();
  s.evals_done = j.at("evals_done").get<std::int64_t>();
  s.iteration = j.at("iteration").get<int>();
  s.syncs = j.at("syncs").get<int>();
  s.rollbacks = j.at("rollbacks").get<int>();
  s.learning_rate = j.at("learning_rate").get<double>();
  return s;
}

json stats_line(const TrainingPhase& phase, const RunState& s, const IterationStats& it) {
  return {{"phase", phase.label},
          {"stage", phase.stage.index},
          {"iteration", s.iteration},
          {"phase_timesteps", s.phase_timesteps},
          {"total_timesteps", s.total_timesteps},
          {"episodes", it.episodes},
          {"mean_return", it.mean_episode_return},
          {"mean_length", it.mean_episode_length},
          {"policy_loss", it.update.policy_loss},
          {"value_loss", it.update.value_loss},
          {"entropy", it.update.entropy},
          {"approx_kl", it.update.approx_kl},
          {"clip_fraction", it.update.clip_fraction},
          {"grad_norm", it.update.grad_norm},
          {"learning_rate", s.learning_rate}};
}

EnvConfig phase_env(const EnvConfig& base, const TrainingPhase& phase) {
  EnvConfig cfg = base;
  cfg.stage = phase.stage;
  cfg.num_agents = phase.num_agents;
  return cfg;
}

}  // namespace

const char* to_string(SelfPlayMode mode) {
  switch (mode) {
    case SelfPlayMode::kSingleAgentThenSelfPlay: return "single_agent_then_selfplay";
    case SelfPlayMode::kCurriculumSelfPlay: return "curriculum_selfplay";
  }
  return "unknown";
}

SelfPlayMode self_play_mode_from_string(const std::string& name) {
  if (name == "single_agent_then_selfplay") return SelfPlayMode::kSingleAgentThenSelfPlay;
  if (name == "curriculum_selfplay") return SelfPlayMode::kCurriculumSelfPlay;
  throw ConfigError("selfplay.mode", "unknown mode '" + name + "'");
}

void SelfPlayConfig::validate() const {
  if (eval_interval < 1) throw ConfigError("selfplay.eval_interval", "must be > 0");
  if (eval_episodes < 1) throw ConfigError("selfplay.eval_episodes", "must be >= 1");
  if (!(win_threshold >= 0.0 && win_threshold <= 1.0))
    throw ConfigError("selfplay.win_threshold", "must lie in [0, 1]");
  if (num_agents < 1) throw ConfigError("selfplay.num_agents", "must be >= 1");
  if (selfplay_budget < 0) throw ConfigError("selfplay.selfplay_budget", "must be >= 0");
}

bool MatchResult::winner() const {
  if (fault) return false;
  for (int p : opponent_progress)
    if (!(active_progress > p)) return false;
  return true;
}

double win_rate(const std::vector<MatchResult>& results) {
  if (results.empty()) throw EmptyResults("win_rate needs at least one match result");
  const auto wins = std::count_if(results.begin(), results.end(),
                                  [](const MatchResult& r) { return r.winner(); });
  return double(wins) / double(results.size());
}

std::uint64_t eval_seed(int episode) { return kEvalSeedBit | std::uint64_t(episode); }

std::uint64_t training_seed(std::uint64_t run_seed, int env_index, std::uint64_t episode) {
  return mix(mix(run_seed, std::uint64_t(env_index)), episode) & ~kEvalSeedBit;
}

std::vector<MatchResult> evaluate_active(const Policy& active, const std::vector<Policy>& opponents,
                                         const EnvConfig& config, int episodes,
                                         int layout_agents) {
  const int n = config.num_agents;
  std::vector<Policy> policies(n);
  policies[0] = active;
  for (int j = 1; j < n; ++j)
    policies[j] = opponents.empty() ? zero_policy() : opponents[(j - 1) % opponents.size()];

  std::vector<MatchResult> results;
  for (int m = 0; m < episodes; ++m) {
    MatchResult r;
    try {
      const EpisodeTrace trace = play_episode(config, policies, eval_seed(m), layout_agents);
      r.active_progress = trace.progress[0].gates_passed_total;
      for (int j = 1; j < n; ++j) r.opponent_progress.push_back(trace.progress[j].gates_passed_total);
      r.fault = trace.status[0] == AgentStatus::kFault;
    } catch (const CruiseError&) {
      r.fault = true;
    }
    results.push_back(std::move(r));
  }
  return results;
}

RacingActiveEnv::RacingActiveEnv(const EnvConfig& config, std::uint64_t run_seed, int env_index,
                                 int layout_agents)
    : env_(config), run_seed_(run_seed), env_index_(env_index),
      layout_(std::max(layout_agents, config.num_agents)) {}

int RacingActiveEnv::obs_dim() const {
  return observation_dim(env_.config().track.num_gates(), layout_);
}

Eigen::VectorXd RacingActiveEnv::reset() {
  const std::uint64_t seed = training_seed(run_seed_, env_index_, episodes_++);
  env_.reset(seed);
  opponent_rng_.seed(seed ^ 0x5bd1e9955bd1e995ULL);
  return padded_observation(env_, 0, layout_);
}

void RacingActiveEnv::set_opponents(const OpponentSet& opponents) { opponents_ = opponents; }

Transition RacingActiveEnv::step(const Eigen::Vector3d& action) {
  const int n = env_.num_agents();
  std::vector<Vec3d> actions(n, Vec3d::Zero());
  actions[0] = action;
  for (int j = 1; j < n; ++j) {
    if (!env_.is_active(j) || opponents_.empty()) continue;
    const PolicyParams& p = *opponents_[(j - 1) % opponents_.size()];
    actions[j] = sample_action(forward(p, padded_observation(env_, j, layout_)), opponent_rng_);
  }
  const StepOutcome out = env_.step(actions);
  Transition tr;
  tr.reward = out.rewards[0];
  tr.terminated = out.terminated[0];
  tr.truncated = out.truncated[0];
  tr.obs = padded_observation(env_, 0, layout_);
  return tr;
}

std::vector<TrainingPhase> build_phases(const std::vector<CurriculumStage>& schedule,
                                        const SelfPlayConfig& sp) {
  validate_schedule(schedule);
  std::vector<TrainingPhase> phases;
  const bool literal = sp.mode == SelfPlayMode::kCurriculumSelfPlay;
  for (const CurriculumStage& s : schedule)
    phases.push_back({"stage_" + std::to_string(s.index), s, literal ? sp.num_agents : 1,
                      s.timestep_budget});
  if (!literal && sp.num_agents > 1 && sp.selfplay_budget > 0)
    phases.push_back({"selfplay", schedule.back(), sp.num_agents, sp.selfplay_budget});
  return phases;
}

TrainingResult run_training(const TrainingOptions& options) {
  options.selfplay.validate();
  options.ppo.validate();
  options.env.validate();

  TrainingResult result;
  result.phases = build_phases(options.schedule, options.selfplay);
  const auto& phases = result.phases;
  int layout = 1;
  for (const TrainingPhase& p : phases) layout = std::max(layout, p.num_agents);
  const int obs_dim = observation_dim(options.env.track.num_gates(), layout);

  const std::filesystem::path& dir = options.out_dir;
  const bool persist = !dir.empty();
  if (persist) std::filesystem::create_directories(dir);
  const auto state_path = dir / "run_state.json";
  const auto stats_path = dir / "stats.jsonl";
  const auto syncs_path = dir / "syncs.jsonl";

  RunState st;
  st.learning_rate = options.ppo.learning_rate;
  PolicyParams active = PolicyParams::initialize(obs_dim, options.ppo.hidden, options.seed);
  OpponentSet opponents;

  if (options.resume) {
    if (!persist) throw ConfigError("out_dir", "resume needs a run directory");
    std::ifstream f(state_path);
    if (!f) throw CheckpointError("no run state at " + state_path.string());
    st = run_state_from_json(json::parse(f));
    active = load_checkpoint(dir / "resume_active.ckpt");
    if (std::filesystem::exists(dir / "resume_opponent.ckpt"))
      opponents = copies_of(load_checkpoint(dir / "resume_opponent.ckpt"), layout - 1);
    else
      opponents = copies_of(active, layout - 1);
  } else {
    if (persist) {
      std::filesystem::remove(stats_path);
      std::filesystem::remove(syncs_path);
    }
    opponents = copies_of(active, layout - 1);  // initial sync
  }
  if (active.obs_dim() != obs_dim) throw ShapeMismatch("checkpoint does not match the run layout");

  PolicyParams last_good = active;
  auto save_resume = [&] {
    if (!persist) return;
    save_checkpoint(active, dir / "resume_active.ckpt");
    if (!opponents.empty()) save_checkpoint(*opponents.front(), dir / "resume_opponent.ckpt");
    write_text(state_path, to_json(st).dump(2) + "\n");
  };
  auto log_sync = [&](const TrainingPhase& phase, const char* reason, double w) {
    ++st.syncs;
    if (!persist) return;
    save_checkpoint(active, dir / ("sync_" + std::to_string(st.syncs) + ".ckpt"));
    append_line(syncs_path, {{"sync", st.syncs},
                             {"reason", reason},
                             {"phase", phase.label},
                             {"phase_timesteps", st.phase_timesteps},
                             {"total_timesteps", st.total_timesteps},
                             {"win_rate", w}});
  };

  int iterations_run = 0;
  for (; st.phase < static_cast<int>(phases.size()); ++st.phase) {
    const TrainingPhase& phase = phases[st.phase];
    const bool selfplay = phase.num_agents > 1;
    const EnvConfig cfg = phase_env(options.env, phase);

    if (st.phase_timesteps == 0) {
      result.phase_start_params.push_back(active);
      // The self-play phase starts every opponent from the final single-agent policy.
      if (phase.label == "selfplay") {
        opponents = copies_of(active, layout - 1);
        log_sync(phase, "phase_start", 0.0);
      }
    }

    const std::uint64_t phase_seed = mix(mix(options.seed, std::uint64_t(st.phase) + 1),
                                         std::uint64_t(st.phase_timesteps));
    auto make_envs = [&] {
      std::vector<std::unique_ptr<TrainingEnv>> envs;
      for (int e = 0; e < options.ppo.num_envs; ++e)
        envs.push_back(std::make_unique<RacingActiveEnv>(cfg, phase_seed, e, layout));
      return VecEnv(std::move(envs));
    };
    VecEnv venv = make_envs();
    PpoConfig ppo = options.ppo;
    ppo.learning_rate = st.learning_rate;
    auto learner = std::make_unique<PpoLearner>(active, ppo, phase_seed);

    while (st.phase_timesteps < phase.budget) {
      if (options.max_iterations >= 0 && iterations_run >= options.max_iterations) {
        save_resume();
        result.final_params = active;
        result.syncs = st.syncs;
        result.rollbacks = st.rollbacks;
        result.total_timesteps = st.total_timesteps;
        return result;
      }
      IterationStats it;
      try {
        it = learner->iterate(venv, selfplay ? opponents : OpponentSet{});
      } catch (const NonFiniteLoss& e) {
        ++st.rollbacks;
        if (st.rollbacks > options.max_rollbacks) {
          save_resume();
          throw;
        }
        st.learning_rate *= 0.5;
        active = last_good;
        ppo.learning_rate = st.learning_rate;
        learner = std::make_unique<PpoLearner>(active, ppo, mix(phase_seed, st.rollbacks));
        if (persist)
          append_line(stats_path, {{"phase", phase.label},
                                   {"rollback", st.rollbacks},
                                   {"reason", e.what()},
                                   {"learning_rate", st.learning_rate}});
        continue;
      }
      ++iterations_run;
      ++st.iteration;
      st.phase_timesteps += it.timesteps;
      st.total_timesteps += it.timesteps;
      active = learner->params();
      result.iterations.push_back(it);
      if (persist) append_line(stats_path, stats_line(phase, st, it));

      IterationView view;
      view.phase = st.phase;
      view.iteration = st.iteration;
      view.phase_timesteps = st.phase_timesteps;
      view.total_timesteps = st.total_timesteps;

      const std::int64_t boundary = st.phase_timesteps / options.selfplay.eval_interval;
      if (selfplay && boundary > st.evals_done) {
        st.evals_done = boundary;
        double w = 0.0;
        if (options.evaluator) {
          w = options.evaluator(active, opponents, phase, st.phase_timesteps);
        } else {
          std::vector<Policy> opp;
          for (const auto& p : opponents) opp.push_back(deterministic_policy(p));
          w = win_rate(evaluate_active(deterministic_policy(std::make_shared<const PolicyParams>(active)),
                                       opp, cfg, options.selfplay.eval_episodes, layout));
        }
        const bool sync = w >= options.selfplay.win_threshold;
        if (sync) {
          opponents = copies_of(active, layout - 1);
          log_sync(phase, "win_rate", w);
        }
        result.evaluations.push_back({st.phase, st.phase_timesteps, st.total_timesteps, w, sync});
        if (persist)
          append_line(dir / "evals.jsonl", {{"phase", phase.label},
                                            {"phase_timesteps", st.phase_timesteps},
                                            {"total_timesteps", st.total_timesteps},
                                            {"win_rate", w},
                                            {"synced", sync}});
        last_good = active;
        save_resume();
        view.evaluated = true;
        view.synced = sync;
        view.win_rate = w;
      }
      if (options.observer) {
        view.active = &active;
        view.opponents = &opponents;
        options.observer(view);
      }
    }

    result.phase_end_params.push_back(active);
    if (persist) save_checkpoint(active, dir / (phase.label + ".ckpt"));
    last_good = active;
    st.phase_timesteps = 0;
    st.evals_done = 0;
    if (persist) {
      RunState next = st;
      ++next.phase;
      std::swap(st, next);
      save_resume();
      std::swap(st, next);
    }
  }

  if (persist) save_checkpoint(active, dir / "final.ckpt");
  result.final_params = active;
  result.syncs = st.syncs;
  result.rollbacks = st.rollbacks;
  result.total_timesteps = st.total_timesteps;
  result.completed = true;
  return result;
}

TrainingResult run_vanilla_baseline(const TrainingOptions& options) {
  TrainingOptions vanilla = options;
  std::int64_t budget = 0;
  for (const CurriculumStage& s : options.schedule) budget += s.timestep_budget;
  CurriculumStage last = builtin_stage(5);
  for (const CurriculumStage& s : options.schedule)
    if (s.index == 5) last = s;
  last.timestep_budget = budget;
  vanilla.schedule = {last};
  return run_training(vanilla);
}

}  // namespace cruise

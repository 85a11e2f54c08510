#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cruise/errors.hpp"
#include "cruise/orchestrator.hpp"

using namespace cruise;

namespace {

std::vector<CurriculumStage> tiny_schedule(std::int64_t budget) {
  return with_budgets(default_curriculum(), {budget, budget, budget, budget, budget});
}

TrainingOptions tiny_options() {
  TrainingOptions o;
  o.schedule = tiny_schedule(64);
  o.ppo.horizon = 16;
  o.ppo.num_envs = 2;
  o.ppo.minibatch_size = 16;
  o.ppo.epochs = 1;
  o.ppo.hidden = {8};
  o.selfplay.num_agents = 2;
  o.selfplay.mode = SelfPlayMode::kCurriculumSelfPlay;
  o.selfplay.eval_interval = 32;
  o.seed = 11;
  return o;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cruise_orch_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST(WinRate, Cases) {
  EXPECT_EQ(win_rate({{5, {1, 2}, false}, {3, {2}, false}}), 1.0);
  EXPECT_EQ(win_rate({{3, {3}, false}, {3, {3, 1}, false}}), 0.0);
  std::vector<MatchResult> r = {{4, {1}, false}, {4, {1}, false}, {4, {1}, false},
                                {1, {4}, false}, {9, {1}, true}};
  EXPECT_DOUBLE_EQ(win_rate(r), 0.6);
  EXPECT_THROW(win_rate({}), EmptyResults);
}

TEST(WinRate, StationaryOpponentsAlwaysLose) {
  EnvConfig cfg;
  cfg.num_agents = 3;
  cfg.stage = builtin_stage(1);
  cfg.max_steps = 120;
  const std::vector<MatchResult> r = evaluate_active(zero_policy(), {}, cfg, 3);
  ASSERT_EQ(r.size(), 3u);
  for (const MatchResult& m : r) {
    EXPECT_EQ(m.opponent_progress, std::vector<int>(2, 0));
    EXPECT_FALSE(m.winner());  // ties lose
  }
}

TEST(Seeds, EvaluationDisjointFromTraining) {
  for (int m = 0; m < 100; ++m)
    for (int e = 0; e < 8; ++e)
      for (std::uint64_t k = 0; k < 20; ++k) EXPECT_NE(eval_seed(m), training_seed(3, e, k));
}

TEST(Phases, SingleAgentThenSelfPlay) {
  SelfPlayConfig sp;
  sp.num_agents = 4;
  sp.selfplay_budget = 500;
  const auto phases = build_phases(default_curriculum(), sp);
  ASSERT_EQ(phases.size(), 6u);
  for (int k = 0; k < 5; ++k) {
    EXPECT_EQ(phases[k].num_agents, 1);
    EXPECT_EQ(phases[k].stage, builtin_stage(k + 1));
    EXPECT_EQ(phases[k].label, "stage_" + std::to_string(k + 1));
  }
  EXPECT_EQ(phases[5].label, "selfplay");
  EXPECT_EQ(phases[5].num_agents, 4);
  EXPECT_EQ(phases[5].budget, 500);
  EXPECT_EQ(phases[5].stage, builtin_stage(5));
}

TEST(Phases, CurriculumSelfPlay) {
  SelfPlayConfig sp;
  sp.num_agents = 3;
  sp.mode = SelfPlayMode::kCurriculumSelfPlay;
  const auto phases = build_phases(default_curriculum(), sp);
  ASSERT_EQ(phases.size(), 5u);
  for (const auto& p : phases) {
    EXPECT_EQ(p.num_agents, 3);
    EXPECT_EQ(p.budget, p.stage.timestep_budget);
  }
}

TEST(Phases, RejectsBadSchedule) {
  SelfPlayConfig sp;
  EXPECT_THROW(build_phases({}, sp), ConfigError);
  auto s = default_curriculum();
  std::swap(s[0], s[1]);
  EXPECT_THROW(build_phases(s, sp), ConfigError);
}

TEST(Training, ThresholdAboveWinRateNeverSyncs) {
  TrainingOptions o = tiny_options();
  o.selfplay.win_threshold = 1.0;
  o.evaluator = [](auto&&...) { return 0.9; };
  const PolicyParams* first = nullptr;
  PolicyParams initial;
  o.observer = [&](const IterationView& v) {
    if (!first) initial = *v.opponents->front(), first = &initial;
    for (const auto& p : *v.opponents) EXPECT_TRUE(p->bitwise_equal(initial));
    EXPECT_FALSE(v.synced);
  };
  const TrainingResult r = run_training(o);
  EXPECT_TRUE(r.completed);
  EXPECT_EQ(r.syncs, 0);
  EXPECT_EQ(r.evaluations.size(), 10u);  // 64 / 32 per stage
  for (const auto& e : r.evaluations) EXPECT_FALSE(e.synced);
  EXPECT_TRUE(initial.bitwise_equal(r.phase_start_params.front()));
}

TEST(Training, PerfectWinRateAlwaysSyncs) {
  TrainingOptions o = tiny_options();
  o.selfplay.win_threshold = 1.0;
  o.evaluator = [](auto&&...) { return 1.0; };
  PolicyParams held;
  bool have = false;
  int evaluated = 0;
  o.observer = [&](const IterationView& v) {
    if (!have) held = *v.opponents->front(), have = true;
    if (v.evaluated) {
      ++evaluated;
      EXPECT_TRUE(v.synced);
      for (const auto& p : *v.opponents) EXPECT_TRUE(p->bitwise_equal(*v.active));
      held = *v.active;
    } else {
      for (const auto& p : *v.opponents) EXPECT_TRUE(p->bitwise_equal(held));
    }
  };
  const TrainingResult r = run_training(o);
  EXPECT_EQ(evaluated, 10);
  EXPECT_EQ(r.syncs, 10);
}

TEST(Training, StageTransitionsCarryParametersExactly) {
  TrainingOptions o = tiny_options();
  o.selfplay.num_agents = 1;
  o.selfplay.mode = SelfPlayMode::kSingleAgentThenSelfPlay;
  const TrainingResult r = run_training(o);
  ASSERT_EQ(r.phase_start_params.size(), 5u);
  ASSERT_EQ(r.phase_end_params.size(), 5u);
  for (int k = 1; k < 5; ++k)
    EXPECT_TRUE(r.phase_start_params[k].bitwise_equal(r.phase_end_params[k - 1]));
  EXPECT_FALSE(r.phase_end_params[0].bitwise_equal(r.phase_start_params[0]));
  EXPECT_TRUE(r.final_params.bitwise_equal(r.phase_end_params.back()));
  EXPECT_EQ(r.total_timesteps, 5 * 64);
  EXPECT_TRUE(r.evaluations.empty());  // no evaluation without opponents
}

TEST(Training, VanillaRunsTheSummedBudgetAtFinalStage) {
  TrainingOptions o = tiny_options();
  o.selfplay.num_agents = 1;
  o.schedule = with_budgets(default_curriculum(), {32, 32, 64, 32, 32});
  std::vector<int> stages_seen;
  o.observer = [&](const IterationView& v) { stages_seen.push_back(v.phase); };
  const TrainingResult r = run_vanilla_baseline(o);
  ASSERT_EQ(r.phases.size(), 1u);
  EXPECT_EQ(r.phases[0].stage.index, 5);
  EXPECT_EQ(r.phases[0].budget, 192);
  EXPECT_EQ(r.total_timesteps, 192);
  for (int p : stages_seen) EXPECT_EQ(p, 0);
}

TEST(Training, DeterministicForFixedSeed) {
  TrainingOptions o = tiny_options();
  o.schedule = tiny_schedule(32);
  o.evaluator = [](auto&&...) { return 0.5; };
  const TrainingResult a = run_training(o), b = run_training(o);
  EXPECT_TRUE(a.final_params.bitwise_equal(b.final_params));
  o.seed = 12;
  EXPECT_FALSE(run_training(o).final_params.bitwise_equal(a.final_params));
}

TEST(Training, ResumeAfterInterruptionFinishesRemainingBudget) {
  const auto dir = scratch_dir("resume");
  TrainingOptions o = tiny_options();
  o.out_dir = dir;
  o.evaluator = [](auto&&...) { return 0.7; };
  o.max_iterations = 7;  // stops after the first iteration of stage 4
  const TrainingResult part = run_training(o);
  EXPECT_FALSE(part.completed);
  EXPECT_EQ(part.total_timesteps, 7 * 32);
  ASSERT_TRUE(std::filesystem::exists(dir / "run_state.json"));
  ASSERT_TRUE(std::filesystem::exists(dir / "stage_1.ckpt"));

  o.resume = true;
  o.max_iterations = -1;
  const TrainingResult rest = run_training(o);
  EXPECT_TRUE(rest.completed);
  EXPECT_EQ(rest.total_timesteps, 5 * 64);
  for (int k = 1; k <= 5; ++k)
    EXPECT_TRUE(std::filesystem::exists(dir / ("stage_" + std::to_string(k) + ".ckpt")));
  EXPECT_TRUE(rest.final_params.bitwise_equal(load_checkpoint(dir / "final.ckpt")));

  std::istringstream stats(slurp(dir / "stats.jsonl"));
  int lines = 0;
  for (std::string line; std::getline(stats, line);) ++lines;
  EXPECT_EQ(lines, 10);
  std::filesystem::remove_all(dir);
}

TEST(Training, ResumeWithoutStateFails) {
  TrainingOptions o = tiny_options();
  o.resume = true;
  EXPECT_THROW(run_training(o), ConfigError);
  o.out_dir = scratch_dir("missing");
  EXPECT_THROW(run_training(o), CheckpointError);
  std::filesystem::remove_all(o.out_dir);
}

TEST(Evaluation, IdenticalPoliciesAreSymmetric) {
  EnvConfig cfg;
  cfg.num_agents = 2;
  cfg.stage = builtin_stage(3);
  cfg.max_steps = 200;
  auto p = std::make_shared<const PolicyParams>(PolicyParams::initialize(
      observation_dim(cfg.track.num_gates(), 2), {16}, 5));
  const Policy pol = deterministic_policy(p);
  const auto results = evaluate_active(pol, {pol}, cfg, 20);
  int active_wins = 0, opponent_wins = 0;
  for (const auto& m : results) {
    active_wins += m.winner();
    opponent_wins += m.opponent_progress[0] > m.active_progress;
  }
  // Spawns are shuffled per seed; neither seat has a structural edge.
  EXPECT_LE(std::abs(active_wins - opponent_wins), 8);
}

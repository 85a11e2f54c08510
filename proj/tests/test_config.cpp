#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cruise/config.hpp"
#include "cruise/errors.hpp"

using namespace cruise;
namespace fs = std::filesystem;

namespace {

std::string field_of(const std::string& text) {
  try {
    config_from_string(text);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<no error>";
}

std::string message_of(const std::string& text) {
  try {
    config_from_string(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "<no error>";
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cruise_cfg_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CRUISE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

constexpr const char* kTinyRun = R"({
  "curriculum": {"budgets": [32, 32, 32, 32, 32]},
  "ppo": {"horizon": 16, "num_envs": 2, "minibatch_size": 16, "epochs": 1, "hidden": [8]},
  "selfplay": {"num_agents": 2, "selfplay_budget": 64, "eval_interval": 32, "eval_episodes": 1},
  "env": {"max_steps": 40}
})";

}  // namespace

TEST(Config, EmptyDocumentGivesDefaults) {
  const AppConfig c = config_from_string("{}");
  EXPECT_EQ(c.curriculum, default_curriculum());
  EXPECT_EQ(c.env.track.name, "ring");
  EXPECT_EQ(c.selfplay.num_agents, 4);
  EXPECT_NEAR(c.env.norm.d_max, default_normalization(c.env.track).d_max, 1e-12);
}

TEST(Config, UnknownFieldNamed) {
  EXPECT_EQ(field_of(R"({"ppo": {"learning_rat": 0.1}})"), "ppo.learning_rat");
  EXPECT_EQ(field_of(R"({"bogus": 1})"), "bogus");
  EXPECT_EQ(field_of(R"({"curriculum": {"stages": [{"v_mn": 1}]}})").rfind("curriculum.stages[0]", 0), 0u);
}

TEST(Config, WrongTypesAndRanges) {
  EXPECT_EQ(field_of(R"({"ppo": {"horizon": "long"}})"), "ppo.horizon");
  EXPECT_EQ(field_of(R"({"selfplay": {"win_threshold": 1.5}})"), "selfplay.win_threshold");
  EXPECT_EQ(field_of(R"({"selfplay": {"mode": "league"}})"), "selfplay.mode");
  EXPECT_EQ(field_of(R"({"track": {"name": "oval"}})"), "track.name");
  EXPECT_EQ(field_of(R"({"curriculum": {"budgets": [1, 2]}})"), "curriculum.budgets");
  EXPECT_EQ(field_of(R"({"drone": {"inertia": [1, 2]}})"), "drone.inertia");
}

TEST(Config, MalformedTextReportsLineAndColumn) {
  const std::string msg = message_of("{\n  \"seed\": 3,\n  \"ppo\": {\"horizon\": }\n}");
  EXPECT_NE(msg.find("line 3, column"), std::string::npos) << msg;
}

TEST(Config, SnapshotRoundTrip) {
  AppConfig c = config_from_string(R"({
    "seed": 42,
    "track": {"name": "figure_eight"},
    "ppo": {"learning_rate": 0.001, "hidden": [32, 16]},
    "curriculum": {"budgets": [1, 2, 3, 4, 5]},
    "selfplay": {"mode": "curriculum_selfplay", "num_agents": 3},
    "evaluation": {"success_mode": "per_agent"}
  })");
  const std::string once = config_to_string(c);
  const AppConfig again = config_from_string(once);
  EXPECT_EQ(config_to_string(again), once);
  EXPECT_EQ(again.seed, 42u);
  EXPECT_EQ(again.env.track.num_gates(), 6);
  EXPECT_EQ(again.ppo.hidden, (std::vector<int>{32, 16}));
  EXPECT_EQ(again.curriculum[4].timestep_budget, 5);
  EXPECT_EQ(again.selfplay.mode, SelfPlayMode::kCurriculumSelfPlay);
  EXPECT_EQ(again.evaluation.success_mode, SuccessMode::kPerAgent);
}

TEST(Config, RelativePathsResolveAgainstConfigDir) {
  const fs::path dir = scratch("rel");
  save_track(make_ring_track(3, 4.0), dir / "t.json");
  std::ofstream(dir / "run.json") << R"({"track": {"file": "t.json"}, "evaluation": {"checkpoints": ["a.ckpt"]}})";
  const AppConfig c = load_config(dir / "run.json");
  EXPECT_EQ(c.env.track.num_gates(), 3);
  EXPECT_EQ(fs::path(c.evaluation.checkpoints[0]), dir / "a.ckpt");
  EXPECT_THROW(load_config(dir / "missing.json"), ConfigError);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("codes");
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("no-such-command"), 1);
  std::ofstream(dir / "bad.json") << R"({"ppo": {"nope": 1}})";
  EXPECT_EQ(run_cli("--config " + (dir / "bad.json").string() + " --out-dir " + dir.string() + " train"), 1);
  EXPECT_EQ(run_cli("--out-dir " + dir.string() + " evaluate --checkpoint " + (dir / "none.ckpt").string()), 2);
  EXPECT_EQ(run_cli("--out-dir " + dir.string() + " export-track --track figure_eight"), 0);
  EXPECT_TRUE(fs::exists(dir / "track.json"));
}

TEST(Cli, TrainingIsByteReproducible) {
  const fs::path dir = scratch("repro");
  std::ofstream(dir / "tiny.json") << kTinyRun;
  const std::string cfg = "--config " + (dir / "tiny.json").string();
  ASSERT_EQ(run_cli(cfg + " --seed 7 --out-dir " + (dir / "a").string() + " train"), 0);
  ASSERT_EQ(run_cli(cfg + " --seed 7 --out-dir " + (dir / "b").string() + " train"), 0);
  const std::string a = slurp(dir / "a" / "stats.jsonl");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir / "b" / "stats.jsonl"));
  EXPECT_EQ(slurp(dir / "a" / "final.ckpt"), slurp(dir / "b" / "final.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "a" / "config.json"));
  EXPECT_NO_THROW(load_config(dir / "a" / "config.json"));

  ASSERT_EQ(run_cli(cfg + " --seed 8 --out-dir " + (dir / "c").string() + " train"), 0);
  EXPECT_NE(slurp(dir / "c" / "final.ckpt"), slurp(dir / "a" / "final.ckpt"));
}

TEST(Cli, EvaluateAndReplay) {
  const fs::path dir = scratch("eval");
  std::ofstream(dir / "tiny.json") << kTinyRun;
  const std::string cfg = "--config " + (dir / "tiny.json").string() + " --out-dir " + dir.string();
  ASSERT_EQ(run_cli(cfg + " train"), 0);
  ASSERT_EQ(run_cli(cfg + " evaluate --checkpoint " + (dir / "final.ckpt").string() +
                    " --episodes 2 --agents 2 --trajectories"),
            0);
  const std::string metrics = slurp(dir / "metrics.csv");
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 2);
  ASSERT_TRUE(fs::exists(dir / "trajectory_0.jsonl"));
  EXPECT_EQ(run_cli("replay " + (dir / "trajectory_0.jsonl").string()), 0);
}

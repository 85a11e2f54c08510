// cruise: train, evaluate and inspect racing policies.
#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "cruise/config.hpp"
#include "cruise/errors.hpp"
#include "cruise/evalharness.hpp"
#include "cruise/orchestrator.hpp"

namespace fs = std::filesystem;
using namespace cruise;

namespace {

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool paper_strict{false};
};

AppConfig resolve(const GlobalFlags& g) {
  AppConfig cfg = g.config.empty() ? config_from_string("{}") : load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (g.paper_strict) cfg.env.paper_strict = true;
  if (!g.out_dir.empty()) {
    cfg.out_dir = g.out_dir;
  } else if (cfg.out_dir.empty()) {
    const char* env = std::getenv("CRUISE_OUT_DIR");
    cfg.out_dir = env && *env ? env : "cruise_out";
  }
  return cfg;
}

void write_snapshot(const AppConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  std::ofstream f(fs::path(cfg.out_dir) / "config.json");
  f << config_to_string(cfg);
}

TrainingOptions training_options(const AppConfig& cfg) {
  TrainingOptions o;
  o.env = cfg.env;
  o.schedule = cfg.curriculum;
  o.selfplay = cfg.selfplay;
  o.ppo = cfg.ppo;
  o.seed = cfg.seed;
  o.out_dir = cfg.out_dir;
  return o;
}

void report_training(const TrainingResult& r, const AppConfig& cfg) {
  std::cout << "timesteps " << r.total_timesteps << ", iterations " << r.iterations.size()
            << ", evaluations " << r.evaluations.size() << ", syncs " << r.syncs << ", rollbacks "
            << r.rollbacks << (r.completed ? "" : " (stopped early)") << '\n'
            << "final checkpoint: " << (fs::path(cfg.out_dir) / "final.ckpt").string() << '\n';
}

std::shared_ptr<const PolicyParams> load_shared(const std::string& path) {
  return std::make_shared<const PolicyParams>(load_checkpoint(path));
}

int cmd_evaluate(const AppConfig& cfg, const std::vector<std::string>& cli_ckpts) {
  const EvaluationSettings& ev = cfg.evaluation;
  const std::vector<std::string>& paths = cli_ckpts.empty() ? ev.checkpoints : cli_ckpts;
  if (paths.empty()) throw ConfigError("evaluation.checkpoints", "no checkpoint given");
  if (paths.size() != 1 && static_cast<int>(paths.size()) != ev.num_agents)
    throw ConfigError("evaluation.checkpoints", "give one checkpoint or one per agent");

  EvaluationRun run;
  run.env = cfg.env;
  run.env.num_agents = ev.num_agents;
  run.env.stage = builtin_stage(ev.stage);
  for (const CurriculumStage& s : cfg.curriculum)
    if (s.index == ev.stage) run.env.stage = s;
  run.env.lap_target = ev.lap_target;
  run.episodes = ev.episodes;
  run.seed_base = ev.seed_base;
  run.success_mode = ev.success_mode;
  run.record = ev.record_trajectories;
  run.label = cfg.env.track.name + "_n" + std::to_string(ev.num_agents);
  for (int i = 0; i < ev.num_agents; ++i) {
    auto params = load_shared(paths[paths.size() == 1 ? 0 : i]);
    run.layout_agents = std::max(run.layout_agents, layout_agents_for(*params, cfg.env.track));
    run.policies.push_back(deterministic_policy(params));
  }
  const EvaluationReport report = run_evaluation(run);

  const fs::path dir = cfg.out_dir;
  {
    std::ofstream f(dir / "metrics.csv");
    f << metrics_csv_header() << '\n' << metrics_csv_row(report.summary) << '\n';
  }
  {
    std::ofstream f(dir / "episodes.jsonl");
    for (const EpisodeResult& e : report.results) {
      nlohmann::json agents = nlohmann::json::array();
      for (const AgentResult& a : e.agents)
        agents.push_back({{"mean_velocity", a.mean_velocity},
                          {"lap_times", a.lap_times},
                          {"gates_passed", a.gates_passed},
                          {"collided", a.collided},
                          {"terminated_cause", a.terminated_cause}});
      f << nlohmann::json{{"seed", e.seed}, {"success", e.success}, {"duration", e.duration}, {"agents", agents}}.dump()
        << '\n';
    }
  }
  for (std::size_t k = 0; k < report.traces.size(); ++k)
    export_trajectories(report.traces[k], cfg.env.track, run.env.stage.gate_tolerance,
                        dir / ("trajectory_" + std::to_string(k) + ".jsonl"));
  std::cout << metrics_csv_header() << '\n' << metrics_csv_row(report.summary) << '\n';
  return 0;
}

int cmd_ablate(const AppConfig& cfg, const std::vector<std::string>& cli_ckpts) {
  const EvaluationSettings& ev = cfg.evaluation;
  const std::vector<std::string>& paths = cli_ckpts.empty() ? ev.stage_checkpoints : cli_ckpts;
  if (paths.empty()) throw ConfigError("evaluation.stage_checkpoints", "no checkpoints given");
  if (paths.size() > cfg.curriculum.size())
    throw ConfigError("evaluation.stage_checkpoints", "more checkpoints than curriculum stages");
  std::vector<std::shared_ptr<const PolicyParams>> params;
  for (const std::string& p : paths) params.push_back(load_shared(p));
  const std::vector<CurriculumStage> stages(cfg.curriculum.begin(), cfg.curriculum.begin() + paths.size());
  const auto rows = run_ablation(params, stages, cfg.env, ev.ablation_agents, ev.episodes,
                                 ev.seed_base, ev.lap_target);
  const std::string csv = ablation_csv(rows);
  std::ofstream(fs::path(cfg.out_dir) / "ablation.csv") << csv;
  std::cout << csv;
  return 0;
}

int cmd_replay(const std::string& path, const std::string& track_path) {
  const TrajectoryFile file = load_trajectories(path);
  const Track track = load_track(track_path.empty() ? path + ".track.json" : track_path);
  const auto logged = logged_gate_events(file);
  const auto replayed = replay_gate_events(file, track);
  std::cout << "records " << file.records.size() << ", logged gate events " << logged.size()
            << ", replayed " << replayed.size() << '\n';
  if (logged != replayed) {
    std::cout << "MISMATCH between logged and replayed gate events\n";
    return 2;
  }
  std::cout << "gate events match\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Curriculum self-play drone racing: training, evaluation and tooling"};
  app.require_subcommand(1);
  GlobalFlags g;
  app.add_option("--config", g.config, "JSON config file");
  app.add_option("--seed", g.seed, "Run seed");
  app.add_option("--out-dir", g.out_dir, "Output directory (default: $CRUISE_OUT_DIR or ./cruise_out)");
  app.add_flag("--paper-strict", g.paper_strict, "Disable reward extensions");

  auto* train = app.add_subcommand("train", "Curriculum schedule followed by self-play");
  bool resume = false;
  train->add_flag("--resume", resume, "Continue from the run state in the out dir");
  auto* vanilla = app.add_subcommand("train-vanilla", "Stage-5-only baseline at the same total budget");

  std::vector<std::string> eval_ckpts;
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate checkpoints and write metrics");
  evaluate->add_option("--checkpoint", eval_ckpts, "Checkpoint per agent (or one shared)");
  std::optional<int> episodes, agents;
  evaluate->add_option("--episodes", episodes, "Episode count");
  evaluate->add_option("--agents", agents, "Number of agents");
  evaluate->add_flag("--trajectories", "Export per-episode trajectories");

  std::vector<std::string> ablate_ckpts;
  auto* ablate = app.add_subcommand("ablate", "Mean velocity per curriculum stage");
  ablate->add_option("--checkpoint", ablate_ckpts, "One checkpoint per stage, in order");
  ablate->add_option("--episodes", episodes, "Episodes per stage and agent count");

  std::string track_name, track_out;
  auto* export_track = app.add_subcommand("export-track", "Write a built-in track as JSON");
  export_track->add_option("--track", track_name, "ring or figure_eight (default: config track)");
  export_track->add_option("--output", track_out, "Output file (default: <out-dir>/track.json)");

  std::string traj_path, traj_track;
  auto* replay = app.add_subcommand("replay", "Recompute gate events from a trajectory file");
  replay->add_option("trajectory", traj_path, "Trajectory .jsonl file")->required();
  replay->add_option("--track", traj_track, "Track file (default: <trajectory>.track.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (replay->parsed()) return cmd_replay(traj_path, traj_track);

    AppConfig cfg = resolve(g);
    if (episodes) cfg.evaluation.episodes = *episodes;
    if (agents) cfg.evaluation.num_agents = *agents;
    if (evaluate->parsed() && evaluate->count("--trajectories")) cfg.evaluation.record_trajectories = true;
    cfg.validate();
    write_snapshot(cfg);

    if (train->parsed()) {
      TrainingOptions o = training_options(cfg);
      o.resume = resume;
      report_training(run_training(o), cfg);
      return 0;
    }
    if (vanilla->parsed()) {
      report_training(run_vanilla_baseline(training_options(cfg)), cfg);
      return 0;
    }
    if (evaluate->parsed()) return cmd_evaluate(cfg, eval_ckpts);
    if (ablate->parsed()) return cmd_ablate(cfg, ablate_ckpts);
    if (export_track->parsed()) {
      const Track t = track_name.empty() ? cfg.env.track : make_track(track_name);
      const fs::path out = track_out.empty() ? fs::path(cfg.out_dir) / "track.json" : fs::path(track_out);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      save_track(t, out);
      std::cout << out.string() << '\n';
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

// Episode-level evaluation, summary metrics, the per-stage ablation and
// trajectory export.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cruise/config.hpp"
#include "cruise/episode.hpp"

namespace cruise {

struct AgentResult {
  double mean_velocity{0.0};  // path length / active flight time [m/s]
  std::vector<double> lap_times;
  int gates_passed{0};
  bool collided{false};
  std::string terminated_cause;
};

struct EpisodeResult {
  std::vector<AgentResult> agents;
  bool success{false};
  double duration{0.0};
  std::uint64_t seed{0};
};

/// Per-agent success: lap target reached without a collision, out-of-bounds or fault.
bool agent_succeeded(const AgentResult& agent, int lap_target);

EpisodeResult episode_result(const EpisodeTrace& trace, int lap_target);

struct Stat {
  double mean{0.0};
  double stddev{0.0};  // sample standard deviation; 0 for a single sample
};

Stat mean_std(const std::vector<double>& values);

struct MetricsSummary {
  std::string label;
  int num_agents{0};
  int episodes{0};
  int successes{0};        // episodes or agent-episodes, per success mode
  int trials{0};           // denominator of the success rate
  double success_rate{0.0};  // percent
  std::optional<Stat> lap_time;  // over successful trials only
  std::optional<Stat> velocity;  // over successful trials only
  Stat velocity_all;             // over every agent-episode
};

/// Recomputes every statistic from the episode list.
MetricsSummary summarize(const std::vector<EpisodeResult>& episodes, int lap_target,
                         SuccessMode mode = SuccessMode::kPerEpisode);

struct EvaluationRun {
  EnvConfig env;  // stage, agent count and lap target already applied
  std::vector<Policy> policies;  // one per agent
  int layout_agents{0};
  int episodes{100};
  std::uint64_t seed_base{0};
  SuccessMode success_mode{SuccessMode::kPerEpisode};
  bool record{false};
  std::string label;
};

struct EvaluationReport {
  std::vector<EpisodeResult> results;
  std::vector<EpisodeTrace> traces;  // kept when recording
  MetricsSummary summary;
};

/// Episodes use seeds seed_base + index and deterministic actions.
EvaluationReport run_evaluation(const EvaluationRun& run);

/// Number of agents a network's observation layout was built for.
int layout_agents_for(const PolicyParams& params, const Track& track);

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsSummary& s);

struct AblationRow {
  int stage{0};
  int num_agents{0};
  MetricsSummary summary;
  bool increased{true};  // velocity above the previous stage's at the same n
};

/// Each stage's policy evaluated under that stage's parameters for every
/// agent count. Velocity is the all-episode mean.
std::vector<AblationRow> run_ablation(const std::vector<std::shared_ptr<const PolicyParams>>& stage_params,
                                      const std::vector<CurriculumStage>& stages,
                                      const EnvConfig& base, const std::vector<int>& agent_counts,
                                      int episodes, std::uint64_t seed_base, int lap_target);

std::string ablation_csv(const std::vector<AblationRow>& rows);

struct TrajectoryHeader {
  std::uint64_t seed{0};
  int num_agents{0};
  double gate_tolerance{0.0};
  std::vector<Vec3d> initial_positions;
};

struct TrajectoryFile {
  TrajectoryHeader header;
  std::vector<TrajectoryRecord> records;
};

/// Line-delimited JSON: one header line, then one line per (step, live agent).
/// The track is written next to it as <path>.track.json.
void export_trajectories(const EpisodeTrace& trace, const Track& track, double gate_tolerance,
                         const std::filesystem::path& path);
TrajectoryFile load_trajectories(const std::filesystem::path& path);

struct GateCrossing {
  int step{0};
  int agent{0};
  int gate{0};

  bool operator==(const GateCrossing&) const = default;
};

/// Gate events recorded in the file.
std::vector<GateCrossing> logged_gate_events(const TrajectoryFile& file);
/// Gate events recomputed from the positions alone.
std::vector<GateCrossing> replay_gate_events(const TrajectoryFile& file, const Track& track);

}  // namespace cruise

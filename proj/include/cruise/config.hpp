// Run configuration file. A JSON document whose top-level sections mirror the
// typed configs: drone, controller, track, env, reward, normalization,
// curriculum, ppo, selfplay, evaluation. Every key is optional; unknown keys
// are rejected with the offending path.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cruise/curriculum.hpp"
#include "cruise/env.hpp"
#include "cruise/orchestrator.hpp"
#include "cruise/ppo.hpp"

namespace cruise {

enum class SuccessMode { kPerEpisode, kPerAgent };

const char* to_string(SuccessMode mode);

struct EvaluationSettings {
  int episodes{100};
  int num_agents{4};
  std::uint64_t seed_base{0};
  int stage{5};
  int lap_target{2};
  SuccessMode success_mode{SuccessMode::kPerEpisode};
  std::vector<std::string> checkpoints;        // one per agent, or one shared
  std::vector<std::string> stage_checkpoints;  // ablation, one per stage
  std::vector<int> ablation_agents{2, 3, 4};
  bool record_trajectories{false};

  void validate() const;
};

struct AppConfig {
  EnvConfig env;
  std::string track_name{"ring"};
  std::string track_file;  // overrides track_name when set
  std::vector<CurriculumStage> curriculum{default_curriculum()};
  PpoConfig ppo;
  SelfPlayConfig selfplay;
  EvaluationSettings evaluation;
  std::uint64_t seed{0};
  std::string out_dir;

  void validate() const;
};

/// Parses and validates a config document. Throws ConfigError naming the
/// field, or "line L, column C" for malformed text.
AppConfig config_from_string(const std::string& text, const std::filesystem::path& base_dir = {});
AppConfig load_config(const std::filesystem::path& path);

/// Fully resolved document (every field present), parseable by config_from_string.
std::string config_to_string(const AppConfig& config);

}  // namespace cruise

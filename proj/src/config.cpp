#include "cruise/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cruise/errors.hpp"

namespace cruise {

namespace {

using json = nlohmann::json;

// Reads optional keys from one JSON object and rejects anything left unread.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key), "wrong type");
    }
  }

  void get(const std::string& key, std::uint64_t& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(where(key), "expected a non-negative integer");
    out = v.get<std::uint64_t>();
  }

  void vec3(const std::string& key, Vec3d& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array() || v.size() != 3) throw ConfigError(where(key), "expected [x, y, z]");
    for (int i = 0; i < 3; ++i) {
      if (!v[i].is_number()) throw ConfigError(where(key), "expected numbers");
      out(i) = v[i].get<double>();
    }
  }

  const json* child(const std::string& key) {
    if (!has(key)) return nullptr;
    return &j_.at(key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(where(it.key()), "unknown field");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_stage(const json& j, const std::string& path, CurriculumStage& s) {
  Section sec(j, path);
  int index = s.index;
  sec.get("index", index);
  if (index >= 1 && index <= 5 && index != s.index) s = builtin_stage(index);
  s.index = index;
  sec.get("name", s.name);
  sec.get("timestep_budget", s.timestep_budget);
  sec.get("v_min", s.v_min);
  sec.get("agility", s.agility);
  sec.get("collisions_enabled", s.collisions_enabled);
  sec.get("collision_weight", s.collision_weight);
  sec.get("gate_tolerance", s.gate_tolerance);
  sec.get("overtake_weight", s.overtake_weight);
  sec.get("collision_terminal", s.collision_terminal);
  sec.finish();
}

json stage_to_json(const CurriculumStage& s) {
  return {{"index", s.index},
          {"name", s.name},
          {"timestep_budget", s.timestep_budget},
          {"v_min", s.v_min},
          {"agility", s.agility},
          {"collisions_enabled", s.collisions_enabled},
          {"collision_weight", s.collision_weight},
          {"gate_tolerance", s.gate_tolerance},
          {"overtake_weight", s.overtake_weight},
          {"collision_terminal", s.collision_terminal}};
}

json vec_json(const Vec3d& v) { return json::array({v.x(), v.y(), v.z()}); }

std::string line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace

const char* to_string(SuccessMode mode) {
  return mode == SuccessMode::kPerAgent ? "per_agent" : "per_episode";
}

void EvaluationSettings::validate() const {
  if (episodes < 1) throw ConfigError("evaluation.episodes", "must be >= 1");
  if (num_agents < 1) throw ConfigError("evaluation.num_agents", "must be >= 1");
  if (stage < 1 || stage > 5) throw ConfigError("evaluation.stage", "must be 1..5");
  if (lap_target < 1) throw ConfigError("evaluation.lap_target", "must be >= 1");
  for (int n : ablation_agents)
    if (n < 1) throw ConfigError("evaluation.ablation_agents", "agent counts must be >= 1");
}

void AppConfig::validate() const {
  env.validate();
  validate_schedule(curriculum);
  ppo.validate();
  selfplay.validate();
  evaluation.validate();
}

AppConfig config_from_string(const std::string& text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("", "malformed config at " + line_column(text, e.byte));
  }

  AppConfig cfg;
  Section top(root, "");
  top.get("seed", cfg.seed);
  top.get("out_dir", cfg.out_dir);

  if (const json* j = top.child("drone")) {
    Section s(*j, "drone");
    DroneParamsd& d = cfg.env.drone;
    s.get("mass", d.mass);
    Vec3d inertia = d.inertia.diagonal();
    s.vec3("inertia", inertia);
    d.inertia = inertia.asDiagonal();
    s.get("gravity", d.gravity);
    s.get("arm_length", d.arm_length);
    s.get("max_thrust", d.max_thrust);
    s.get("max_torque", d.max_torque);
    s.finish();
  }
  cfg.env.gains = ControllerGainsd::defaults_for(cfg.env.drone);
  if (const json* j = top.child("controller")) {
    Section s(*j, "controller");
    ControllerGainsd& g = cfg.env.gains;
    s.vec3("vel_p", g.vel_p);
    s.vec3("vel_d", g.vel_d);
    s.vec3("pos_p", g.pos_p);
    s.vec3("pos_d", g.pos_d);
    s.vec3("att_p", g.att_p);
    s.vec3("att_d", g.att_d);
    s.get("max_tilt", g.max_tilt);
    s.finish();
  }
  if (const json* j = top.child("track")) {
    Section s(*j, "track");
    s.get("name", cfg.track_name);
    s.get("file", cfg.track_file);
    s.finish();
  }
  try {
    if (!cfg.track_file.empty()) {
      std::filesystem::path p = cfg.track_file;
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      cfg.track_file = p.string();
      cfg.env.track = load_track(p);
    } else {
      cfg.env.track = make_track(cfg.track_name);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const CruiseError& e) {
    throw ConfigError(cfg.track_file.empty() ? "track.name" : "track.file", e.what());
  }
  if (const json* j = top.child("env")) {
    Section s(*j, "env");
    EnvConfig& e = cfg.env;
    s.get("control_dt", e.control_dt);
    s.get("substeps", e.substeps);
    s.get("max_steps", e.max_steps);
    s.get("lap_target", e.lap_target);
    s.get("paper_strict", e.paper_strict);
    s.get("v_cap", e.v_cap);
    s.get("spawn_radius", e.spawn_radius);
    s.get("spawn_distance", e.spawn_distance);
    s.get("spawn_spacing", e.spawn_spacing);
    s.get("bounds_margin", e.bounds_margin);
    s.finish();
  }
  if (const json* j = top.child("reward")) {
    Section s(*j, "reward");
    RewardWeights& w = cfg.env.weights;
    s.get("proximity", w.proximity);
    s.get("progress", w.progress);
    s.get("alignment", w.alignment);
    s.get("speed", w.speed);
    s.get("proximity_shape", w.proximity_shape);
    s.get("progress_scale", w.progress_scale);
    s.get("align_epsilon", w.align_epsilon);
    s.get("overtake_bonus", w.overtake_bonus);
    s.get("collision_radius", w.collision_radius);
    s.get("gate_bonus", w.gate_bonus);
    s.finish();
  }
  cfg.env.norm.d_max = 0.0;  // resolved against the track
  if (const json* j = top.child("normalization")) {
    Section s(*j, "normalization");
    s.get("d_max", cfg.env.norm.d_max);
    s.get("v_max", cfg.env.norm.v_max);
    s.finish();
  }
  cfg.env = cfg.env.resolved();
  if (const json* j = top.child("curriculum")) {
    Section s(*j, "curriculum");
    if (const json* stages = s.child("stages")) {
      if (!stages->is_array()) throw ConfigError("curriculum.stages", "expected an array");
      cfg.curriculum.clear();
      for (std::size_t i = 0; i < stages->size(); ++i) {
        CurriculumStage st = builtin_stage(std::min<int>(int(i) + 1, 5));
        read_stage((*stages)[i], "curriculum.stages[" + std::to_string(i) + "]", st);
        cfg.curriculum.push_back(st);
      }
    }
    std::vector<std::int64_t> budgets;
    s.get("budgets", budgets);
    if (!budgets.empty()) cfg.curriculum = with_budgets(cfg.curriculum, budgets);
    s.finish();
  }
  if (const json* j = top.child("ppo")) {
    Section s(*j, "ppo");
    PpoConfig& p = cfg.ppo;
    s.get("horizon", p.horizon);
    s.get("num_envs", p.num_envs);
    s.get("minibatch_size", p.minibatch_size);
    s.get("epochs", p.epochs);
    s.get("clip_ratio", p.clip_ratio);
    s.get("gae_lambda", p.gae_lambda);
    s.get("gamma", p.gamma);
    s.get("learning_rate", p.learning_rate);
    s.get("value_coef", p.value_coef);
    s.get("entropy_coef", p.entropy_coef);
    s.get("max_grad_norm", p.max_grad_norm);
    s.get("total_timesteps", p.total_timesteps);
    s.get("hidden", p.hidden);
    s.get("normalize_rewards", p.normalize_rewards);
    s.get("normalize_observations", p.normalize_observations);
    s.finish();
  }
  if (const json* j = top.child("selfplay")) {
    Section s(*j, "selfplay");
    SelfPlayConfig& sp = cfg.selfplay;
    s.get("eval_interval", sp.eval_interval);
    s.get("eval_episodes", sp.eval_episodes);
    s.get("win_threshold", sp.win_threshold);
    s.get("num_agents", sp.num_agents);
    std::string mode = to_string(sp.mode);
    s.get("mode", mode);
    sp.mode = self_play_mode_from_string(mode);
    s.get("selfplay_budget", sp.selfplay_budget);
    s.finish();
  }
  if (const json* j = top.child("evaluation")) {
    Section s(*j, "evaluation");
    EvaluationSettings& ev = cfg.evaluation;
    s.get("episodes", ev.episodes);
    s.get("num_agents", ev.num_agents);
    s.get("seed_base", ev.seed_base);
    s.get("stage", ev.stage);
    s.get("lap_target", ev.lap_target);
    std::string mode = to_string(ev.success_mode);
    s.get("success_mode", mode);
    if (mode == "per_episode")
      ev.success_mode = SuccessMode::kPerEpisode;
    else if (mode == "per_agent")
      ev.success_mode = SuccessMode::kPerAgent;
    else
      throw ConfigError("evaluation.success_mode", "expected per_episode or per_agent");
    s.get("checkpoints", ev.checkpoints);
    s.get("stage_checkpoints", ev.stage_checkpoints);
    s.get("ablation_agents", ev.ablation_agents);
    s.get("record_trajectories", ev.record_trajectories);
    s.finish();
    auto resolve = [&](std::vector<std::string>& paths) {
      for (std::string& p : paths) {
        std::filesystem::path q = p;
        if (q.is_relative() && !base_dir.empty()) p = (base_dir / q).string();
      }
    };
    resolve(ev.checkpoints);
    resolve(ev.stage_checkpoints);
  }
  top.finish();
  cfg.validate();
  return cfg;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("--config", "cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return config_from_string(ss.str(), path.parent_path());
}

std::string config_to_string(const AppConfig& c) {
  const EnvConfig& e = c.env;
  json stages = json::array();
  for (const CurriculumStage& s : c.curriculum) stages.push_back(stage_to_json(s));
  json track = {{"name", c.track_name}};
  if (!c.track_file.empty()) track["file"] = c.track_file;
  json root = {
      {"seed", c.seed},
      {"out_dir", c.out_dir},
      {"drone",
       {{"mass", e.drone.mass},
        {"inertia", vec_json(e.drone.inertia.diagonal())},
        {"gravity", e.drone.gravity},
        {"arm_length", e.drone.arm_length},
        {"max_thrust", e.drone.max_thrust},
        {"max_torque", e.drone.max_torque}}},
      {"controller",
       {{"vel_p", vec_json(e.gains.vel_p)},
        {"vel_d", vec_json(e.gains.vel_d)},
        {"pos_p", vec_json(e.gains.pos_p)},
        {"pos_d", vec_json(e.gains.pos_d)},
        {"att_p", vec_json(e.gains.att_p)},
        {"att_d", vec_json(e.gains.att_d)},
        {"max_tilt", e.gains.max_tilt}}},
      {"track", track},
      {"env",
       {{"control_dt", e.control_dt},
        {"substeps", e.substeps},
        {"max_steps", e.max_steps},
        {"lap_target", e.lap_target},
        {"paper_strict", e.paper_strict},
        {"v_cap", e.v_cap},
        {"spawn_radius", e.spawn_radius},
        {"spawn_distance", e.spawn_distance},
        {"spawn_spacing", e.spawn_spacing},
        {"bounds_margin", e.bounds_margin}}},
      {"reward",
       {{"proximity", e.weights.proximity},
        {"progress", e.weights.progress},
        {"alignment", e.weights.alignment},
        {"speed", e.weights.speed},
        {"proximity_shape", e.weights.proximity_shape},
        {"progress_scale", e.weights.progress_scale},
        {"align_epsilon", e.weights.align_epsilon},
        {"overtake_bonus", e.weights.overtake_bonus},
        {"collision_radius", e.weights.collision_radius},
        {"gate_bonus", e.weights.gate_bonus}}},
      {"normalization", {{"d_max", e.norm.d_max}, {"v_max", e.norm.v_max}}},
      {"curriculum", {{"stages", stages}}},
      {"ppo",
       {{"horizon", c.ppo.horizon},
        {"num_envs", c.ppo.num_envs},
        {"minibatch_size", c.ppo.minibatch_size},
        {"epochs", c.ppo.epochs},
        {"clip_ratio", c.ppo.clip_ratio},
        {"gae_lambda", c.ppo.gae_lambda},
        {"gamma", c.ppo.gamma},
        {"learning_rate", c.ppo.learning_rate},
        {"value_coef", c.ppo.value_coef},
        {"entropy_coef", c.ppo.entropy_coef},
        {"max_grad_norm", c.ppo.max_grad_norm},
        {"total_timesteps", c.ppo.total_timesteps},
        {"hidden", c.ppo.hidden},
        {"normalize_rewards", c.ppo.normalize_rewards},
        {"normalize_observations", c.ppo.normalize_observations}}},
      {"selfplay",
       {{"eval_interval", c.selfplay.eval_interval},
        {"eval_episodes", c.selfplay.eval_episodes},
        {"win_threshold", c.selfplay.win_threshold},
        {"num_agents", c.selfplay.num_agents},
        {"mode", to_string(c.selfplay.mode)},
        {"selfplay_budget", c.selfplay.selfplay_budget}}},
      {"evaluation",
       {{"episodes", c.evaluation.episodes},
        {"num_agents", c.evaluation.num_agents},
        {"seed_base", c.evaluation.seed_base},
        {"stage", c.evaluation.stage},
        {"lap_target", c.evaluation.lap_target},
        {"success_mode", to_string(c.evaluation.success_mode)},
        {"checkpoints", c.evaluation.checkpoints},
        {"stage_checkpoints", c.evaluation.stage_checkpoints},
        {"ablation_agents", c.evaluation.ablation_agents},
        {"record_trajectories", c.evaluation.record_trajectories}}},
  };
  return root.dump(2) + "\n";
}

}  // namespace cruise

#include "cruise/evalharness.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "cruise/errors.hpp"

namespace cruise {

namespace {

using json = nlohmann::json;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

json vec_json(const Vec3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3d vec_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

EventKind event_kind_from(const std::string& s) {
  for (EventKind k : {EventKind::kGatePass, EventKind::kLap, EventKind::kOvertake,
                      EventKind::kCollision, EventKind::kOutOfBounds, EventKind::kTermination,
                      EventKind::kTruncation, EventKind::kFault})
    if (s == to_string(k)) return k;
  throw CruiseError("unknown event kind '" + s + "'");
}

}  // namespace

bool agent_succeeded(const AgentResult& agent, int lap_target) {
  return !agent.collided && agent.terminated_cause != to_string(AgentStatus::kFault) &&
         static_cast<int>(agent.lap_times.size()) >= lap_target;
}

EpisodeResult episode_result(const EpisodeTrace& trace, int lap_target) {
  EpisodeResult r;
  r.seed = trace.seed;
  r.duration = trace.duration;
  r.success = true;
  for (std::size_t i = 0; i < trace.progress.size(); ++i) {
    AgentResult a;
    a.mean_velocity = trace.active_time[i] > 0.0 ? trace.path_length[i] / trace.active_time[i] : 0.0;
    a.lap_times = trace.progress[i].lap_times;
    a.gates_passed = trace.progress[i].gates_passed_total;
    a.collided = trace.status[i] == AgentStatus::kCollided ||
                 trace.status[i] == AgentStatus::kOutOfBounds;
    a.terminated_cause = to_string(trace.status[i]);
    r.success = r.success && agent_succeeded(a, lap_target);
    r.agents.push_back(std::move(a));
  }
  return r;
}

Stat mean_std(const std::vector<double>& values) {
  Stat s;
  if (values.empty()) return s;
  const double n = double(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

MetricsSummary summarize(const std::vector<EpisodeResult>& episodes, int lap_target,
                         SuccessMode mode) {
  MetricsSummary m;
  m.episodes = static_cast<int>(episodes.size());
  if (!episodes.empty()) m.num_agents = static_cast<int>(episodes.front().agents.size());
  std::vector<double> laps, vel, vel_all;
  for (const EpisodeResult& e : episodes) {
    if (mode == SuccessMode::kPerEpisode) {
      ++m.trials;
      if (e.success) ++m.successes;
    }
    for (const AgentResult& a : e.agents) {
      vel_all.push_back(a.mean_velocity);
      bool counted = false;
      if (mode == SuccessMode::kPerEpisode) {
        counted = e.success;
      } else {
        ++m.trials;
        counted = agent_succeeded(a, lap_target);
        if (counted) ++m.successes;
      }
      if (!counted) continue;
      laps.insert(laps.end(), a.lap_times.begin(), a.lap_times.end());
      vel.push_back(a.mean_velocity);
    }
  }
  m.success_rate = m.trials > 0 ? 100.0 * m.successes / m.trials : 0.0;
  if (m.successes > 0) {
    m.lap_time = mean_std(laps);
    m.velocity = mean_std(vel);
  }
  m.velocity_all = mean_std(vel_all);
  return m;
}

EvaluationReport run_evaluation(const EvaluationRun& run) {
  if (run.episodes < 1) throw ConfigError("evaluation.episodes", "must be >= 1");
  EvaluationReport report;
  for (int k = 0; k < run.episodes; ++k) {
    EpisodeTrace trace =
        play_episode(run.env, run.policies, run.seed_base + std::uint64_t(k), run.layout_agents, run.record);
    report.results.push_back(episode_result(trace, run.env.lap_target));
    if (run.record) report.traces.push_back(std::move(trace));
  }
  report.summary = summarize(report.results, run.env.lap_target, run.success_mode);
  report.summary.label = run.label;
  return report;
}

int layout_agents_for(const PolicyParams& params, const Track& track) {
  const int extra = params.obs_dim() - observation_dim(track.num_gates(), 1);
  if (extra < 0 || extra % 4 != 0)
    throw ShapeMismatch("checkpoint observation size " + std::to_string(params.obs_dim()) +
                        " does not fit track '" + track.name + "'");
  return extra / 4 + 1;
}

std::string metrics_csv_header() {
  return "label,num_agents,episodes,success_rate,lap_time_mean,lap_time_std,velocity_mean,"
         "velocity_std,velocity_all_mean,velocity_all_std";
}

std::string metrics_csv_row(const MetricsSummary& s) {
  auto opt = [](const std::optional<Stat>& st, bool mean) {
    return st ? fmt(mean ? st->mean : st->stddev) : std::string("N/A");
  };
  std::ostringstream out;
  out << s.label << ',' << s.num_agents << ',' << s.episodes << ',' << fmt(s.success_rate) << ','
      << opt(s.lap_time, true) << ',' << opt(s.lap_time, false) << ',' << opt(s.velocity, true)
      << ',' << opt(s.velocity, false) << ',' << fmt(s.velocity_all.mean) << ','
      << fmt(s.velocity_all.stddev);
  return out.str();
}

std::vector<AblationRow> run_ablation(const std::vector<std::shared_ptr<const PolicyParams>>& stage_params,
                                      const std::vector<CurriculumStage>& stages,
                                      const EnvConfig& base, const std::vector<int>& agent_counts,
                                      int episodes, std::uint64_t seed_base, int lap_target) {
  if (stage_params.size() != stages.size())
    throw ConfigError("evaluation.stage_checkpoints", "one checkpoint per stage required");
  std::vector<AblationRow> rows;
  for (int n : agent_counts) {
    double previous = -1.0;
    for (std::size_t k = 0; k < stages.size(); ++k) {
      EvaluationRun run;
      run.env = base;
      run.env.stage = stages[k];
      run.env.num_agents = n;
      run.env.lap_target = lap_target;
      run.layout_agents = layout_agents_for(*stage_params[k], base.track);
      run.policies.assign(n, deterministic_policy(stage_params[k]));
      run.episodes = episodes;
      run.seed_base = seed_base;
      run.label = "stage_" + std::to_string(stages[k].index);
      AblationRow row;
      row.stage = stages[k].index;
      row.num_agents = n;
      row.summary = run_evaluation(run).summary;
      row.increased = k == 0 || row.summary.velocity_all.mean > previous;
      previous = row.summary.velocity_all.mean;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "stage,num_agents,episodes,velocity_mean,velocity_std,success_rate,monotone\n";
  for (const AblationRow& r : rows)
    out << r.stage << ',' << r.num_agents << ',' << r.summary.episodes << ','
        << fmt(r.summary.velocity_all.mean) << ',' << fmt(r.summary.velocity_all.stddev) << ','
        << fmt(r.summary.success_rate) << ',' << (r.increased ? "yes" : "NO") << '\n';
  return out.str();
}

void export_trajectories(const EpisodeTrace& trace, const Track& track, double gate_tolerance,
                         const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw CruiseError("cannot write " + path.string());
  json initial = json::array();
  for (const DroneStated& s : trace.initial_states) initial.push_back(vec_json(s.position));
  f << json{{"type", "header"},
            {"seed", trace.seed},
            {"num_agents", trace.initial_states.size()},
            {"gate_tolerance", gate_tolerance},
            {"initial_positions", initial}}
           .dump()
    << '\n';
  for (const TrajectoryRecord& r : trace.history) {
    json events = json::array();
    for (const EnvEvent& e : r.events)
      events.push_back({{"kind", to_string(e.kind)}, {"other", e.other}, {"gate", e.gate}, {"detail", e.detail}});
    f << json{{"t", r.t},
              {"step", r.step},
              {"agent", r.agent},
              {"position", vec_json(r.position)},
              {"velocity", vec_json(r.velocity)},
              {"next_gate_index", r.next_gate_index},
              {"events", events}}
             .dump()
      << '\n';
  }
  if (!f) throw CruiseError("cannot write " + path.string());
  save_track(track, path.string() + ".track.json");
}

TrajectoryFile load_trajectories(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw CruiseError("cannot open " + path.string());
  TrajectoryFile out;
  std::string line;
  bool header = false;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (j.contains("type") && j["type"] == "header") {
        out.header.seed = j.at("seed").get<std::uint64_t>();
        out.header.num_agents = j.at("num_agents").get<int>();
        out.header.gate_tolerance = j.at("gate_tolerance").get<double>();
        for (const json& p : j.at("initial_positions")) out.header.initial_positions.push_back(vec_from(p));
        header = true;
        continue;
      }
      TrajectoryRecord r;
      r.t = j.at("t").get<double>();
      r.step = j.at("step").get<int>();
      r.agent = j.at("agent").get<int>();
      r.position = vec_from(j.at("position"));
      r.velocity = vec_from(j.at("velocity"));
      r.next_gate_index = j.at("next_gate_index").get<int>();
      for (const json& e : j.at("events")) {
        EnvEvent ev;
        ev.kind = event_kind_from(e.at("kind").get<std::string>());
        ev.agent = r.agent;
        ev.other = e.at("other").get<int>();
        ev.gate = e.at("gate").get<int>();
        ev.detail = e.at("detail").get<std::string>();
        ev.step = r.step;
        ev.time = r.t;
        r.events.push_back(std::move(ev));
      }
      out.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw CruiseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!header) throw CruiseError(path.string() + ": missing header line");
  return out;
}

std::vector<GateCrossing> logged_gate_events(const TrajectoryFile& file) {
  std::vector<GateCrossing> out;
  for (const TrajectoryRecord& r : file.records)
    for (const EnvEvent& e : r.events)
      if (e.kind == EventKind::kGatePass) out.push_back({r.step, r.agent, e.gate});
  return out;
}

std::vector<GateCrossing> replay_gate_events(const TrajectoryFile& file, const Track& track) {
  const int n = file.header.num_agents;
  std::vector<Vec3d> prev = file.header.initial_positions;
  std::vector<int> next(n, 0);
  std::vector<GateCrossing> out;
  for (const TrajectoryRecord& r : file.records) {
    const Gate& gate = track.gates[next[r.agent]];
    if (check_gate_passage(prev[r.agent], r.position, gate, file.header.gate_tolerance)) {
      out.push_back({r.step, r.agent, next[r.agent]});
      next[r.agent] = (next[r.agent] + 1) % track.num_gates();
    }
    prev[r.agent] = r.position;
  }
  return out;
}

}  // namespace cruise

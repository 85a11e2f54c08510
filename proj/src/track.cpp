#include "cruise/track.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace cruise {

void Track::validate() const {
  if (gates.size() < 2) throw InvalidTrackSpec("track needs at least 2 gates");
  for (std::size_t i = 0; i < gates.size(); ++i) {
    const Gate& g = gates[i];
    if (!(g.half_width > 0.0) || !(g.half_height > 0.0))
      throw InvalidTrackSpec("gate " + std::to_string(i) + " has non-positive half extent");
    if (!g.center.allFinite() || !std::isfinite(g.yaw))
      throw InvalidTrackSpec("gate " + std::to_string(i) + " is not finite");
    const Gate& next = gates[(i + 1) % gates.size()];
    if ((next.center - g.center).norm() == 0.0)
      throw InvalidTrackSpec("consecutive gates " + std::to_string(i) + " share a center");
  }
}

double Track::diameter() const {
  double d = 0.0;
  for (const Gate& a : gates)
    for (const Gate& b : gates) d = std::max(d, (a.center - b.center).norm());
  return d;
}

Track make_ring_track(int num_gates, double radius, double base_height, double height_amplitude) {
  if (num_gates < 3) throw InvalidTrackSpec("ring track needs at least 3 gates");
  if (!(radius > 0.0)) throw InvalidTrackSpec("ring radius must be > 0");
  Track track;
  track.name = "ring";
  for (int i = 0; i < num_gates; ++i) {
    const double angle = 2.0 * M_PI * i / num_gates;
    Gate g;
    const double z = base_height + (i % 2 == 0 ? height_amplitude : -height_amplitude);
    g.center = Vec3d(radius * std::cos(angle), radius * std::sin(angle), z);
    g.yaw = angle + M_PI / 2.0;  // counter-clockwise travel
    g.half_width = kDefaultGateHalfExtent;
    g.half_height = kDefaultGateHalfExtent;
    track.gates.push_back(g);
  }
  return track;
}

Track make_figure_eight_track(int num_gates, double lobe_radius, double height) {
  if (num_gates != 6) throw InvalidTrackSpec("figure-eight track is fixed at 6 gates");
  if (!(lobe_radius > 0.0)) throw InvalidTrackSpec("lobe radius must be > 0");
  Track track;
  track.name = "figure_eight";
  const double half_length = 2.0 * lobe_radius;
  for (int i = 0; i < num_gates; ++i) {
    // Parameters avoid t = 0 and t = π, where the curve crosses itself.
    const double t = M_PI / 6.0 + i * M_PI / 3.0;
    Gate g;
    g.center = Vec3d(half_length * std::sin(t), lobe_radius * std::sin(2.0 * t), height);
    g.yaw = std::atan2(2.0 * lobe_radius * std::cos(2.0 * t), half_length * std::cos(t));
    g.half_width = kDefaultGateHalfExtent;
    g.half_height = kDefaultGateHalfExtent;
    track.gates.push_back(g);
  }
  return track;
}

Track make_track(const std::string& name) {
  if (name == "ring") return make_ring_track();
  if (name == "figure_eight" || name == "figure-eight") return make_figure_eight_track();
  throw InvalidTrackSpec("unknown built-in track '" + name + "'");
}

bool check_gate_passage(const Vec3d& prev_pos, const Vec3d& new_pos, const Gate& gate,
                        double gate_tolerance) {
  const Vec3d n = gate.normal();
  const double s_prev = (prev_pos - gate.center).dot(n);
  const double s_new = (new_pos - gate.center).dot(n);
  if (!(s_prev < 0.0 && s_new >= 0.0)) return false;
  const double t = s_prev / (s_prev - s_new);
  const Vec3d offset = prev_pos + t * (new_pos - prev_pos) - gate.center;
  const double half_w = std::min(gate.half_width, gate_tolerance);
  const double half_h = std::min(gate.half_height, gate_tolerance);
  return std::abs(offset.dot(gate.lateral())) <= half_w && std::abs(offset.z()) <= half_h;
}

ProgressState update_progress(const ProgressState& progress, bool passed, double sim_time,
                              int num_gates) {
  if (!passed) return progress;
  ProgressState next = progress;
  next.gates_passed_total += 1;
  next.next_gate_index = (progress.next_gate_index + 1) % num_gates;
  if (next.next_gate_index == 0) {
    next.laps_completed += 1;
    next.lap_times.push_back(sim_time - progress.lap_start_time);
    next.lap_start_time = sim_time;
  }
  return next;
}

std::string track_to_json(const Track& track) {
  nlohmann::json doc;
  doc["name"] = track.name;
  doc["gates"] = nlohmann::json::array();
  for (const Gate& g : track.gates) {
    doc["gates"].push_back({{"center", {g.center.x(), g.center.y(), g.center.z()}},
                            {"yaw", g.yaw},
                            {"half_width", g.half_width},
                            {"half_height", g.half_height}});
  }
  return doc.dump(2);
}

Track track_from_json(const std::string& text) {
  Track track;
  try {
    const nlohmann::json doc = nlohmann::json::parse(text);
    track.name = doc.value("name", std::string("custom"));
    for (const auto& rec : doc.at("gates")) {
      Gate g;
      const auto& c = rec.at("center");
      if (c.size() != 3) throw InvalidTrackSpec("gate center must have 3 components");
      g.center = Vec3d(c[0].get<double>(), c[1].get<double>(), c[2].get<double>());
      g.yaw = rec.at("yaw").get<double>();
      g.half_width = rec.value("half_width", kDefaultGateHalfExtent);
      g.half_height = rec.value("half_height", kDefaultGateHalfExtent);
      track.gates.push_back(g);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidTrackSpec(std::string("bad track file: ") + e.what());
  }
  track.validate();
  return track;
}

void save_track(const Track& track, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw CruiseError("cannot write track file " + path.string());
  out << track_to_json(track) << '\n';
}

Track load_track(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidTrackSpec("cannot open track file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return track_from_json(buf.str());
}

}  // namespace cruise

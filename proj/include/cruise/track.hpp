#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

#include "cruise/dynamics.hpp"

namespace cruise {

/// Rectangular gate. The forward normal is (cos yaw, sin yaw, 0).
struct Gate {
  Vec3d center{Vec3d::Zero()};
  double yaw{0.0};
  double half_width{0.5};
  double half_height{0.5};

  Vec3d normal() const { return {std::cos(yaw), std::sin(yaw), 0.0}; }
  Vec3d lateral() const { return {-std::sin(yaw), std::cos(yaw), 0.0}; }
};

struct Track {
  std::string name;
  std::vector<Gate> gates;

  int num_gates() const { return static_cast<int>(gates.size()); }

  /// Throws InvalidTrackSpec on < 2 gates, repeated consecutive centers or
  /// non-positive half extents.
  void validate() const;

  /// Largest distance between two gate centers.
  double diameter() const;
};

inline constexpr double kDefaultGateHalfExtent = 0.5;

Track make_ring_track(int num_gates = 5, double radius = 5.0, double base_height = 2.0,
                      double height_amplitude = 0.75);

/// Six gates on a figure-eight x = 2r sin t, y = r sin 2t, traversed so the
/// path crosses itself once at the origin.
Track make_figure_eight_track(int num_gates = 6, double lobe_radius = 4.0, double height = 2.0);

/// Built-in track by name: "ring" or "figure_eight".
Track make_track(const std::string& name);

/// Directed crossing test; the accepted opening is the gate rectangle shrunk to
/// min(half_width, g_tol) × min(half_height, g_tol) about the center.
bool check_gate_passage(const Vec3d& prev_pos, const Vec3d& new_pos, const Gate& gate,
                        double gate_tolerance);

struct ProgressState {
  int next_gate_index{0};
  int gates_passed_total{0};
  int laps_completed{0};
  double lap_start_time{0.0};
  std::vector<double> lap_times;

  bool operator==(const ProgressState&) const = default;
};

ProgressState update_progress(const ProgressState& progress, bool passed, double sim_time,
                              int num_gates);

// Track files are JSON documents: {"name": ..., "gates": [{"center": [x,y,z],
// "yaw": .., "half_width": .., "half_height": ..}, ...]}.
std::string track_to_json(const Track& track);
Track track_from_json(const std::string& text);
void save_track(const Track& track, const std::filesystem::path& path);
Track load_track(const std::filesystem::path& path);

}  // namespace cruise

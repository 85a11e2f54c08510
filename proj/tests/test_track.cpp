#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "cruise/track.hpp"

using namespace cruise;

namespace {

// Slab test against the shrunk opening, by dense sampling along the segment.
bool dense_oracle(const Vec3d& a, const Vec3d& b, const Gate& g, double tol) {
  const Vec3d n = g.normal();
  if (!((a - g.center).dot(n) < 0.0 && (b - g.center).dot(n) >= 0.0)) return false;
  const double hw = std::min(g.half_width, tol), hh = std::min(g.half_height, tol);
  const int samples = 10000;
  for (int i = 0; i < samples; ++i) {
    const Vec3d p0 = a + (b - a) * (double(i) / samples);
    const Vec3d p1 = a + (b - a) * (double(i + 1) / samples);
    const double s0 = (p0 - g.center).dot(n), s1 = (p1 - g.center).dot(n);
    if (s0 < 0.0 && s1 >= 0.0) {
      const Vec3d mid = 0.5 * (p0 + p1) - g.center;
      return std::abs(mid.dot(g.lateral())) <= hw && std::abs(mid.z()) <= hh;
    }
  }
  return false;
}

double cross2(const Eigen::Vector2d& a, const Eigen::Vector2d& b) { return a.x() * b.y() - a.y() * b.x(); }

bool segments_cross(const Eigen::Vector2d& p1, const Eigen::Vector2d& p2, const Eigen::Vector2d& q1,
                    const Eigen::Vector2d& q2) {
  const double d1 = cross2(q2 - q1, p1 - q1), d2 = cross2(q2 - q1, p2 - q1);
  const double d3 = cross2(p2 - p1, q1 - p1), d4 = cross2(p2 - p1, q2 - p1);
  return d1 * d2 < 0.0 && d3 * d4 < 0.0;
}

int self_intersections(const Track& t) {
  const int n = t.num_gates();
  int count = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;  // adjacent segments share a vertex
      const Eigen::Vector2d p1 = t.gates[i].center.head<2>(), p2 = t.gates[(i + 1) % n].center.head<2>();
      const Eigen::Vector2d q1 = t.gates[j].center.head<2>(), q2 = t.gates[(j + 1) % n].center.head<2>();
      count += segments_cross(p1, p2, q1, q2);
    }
  return count;
}

}  // namespace

TEST(RingTrack, DefaultsGiveFiveGatesAtSeventyTwoDegrees) {
  const Track t = make_ring_track();
  ASSERT_EQ(t.num_gates(), 5);
  for (int i = 0; i < 5; ++i) {
    const Vec3d a = t.gates[i].center, b = t.gates[(i + 1) % 5].center;
    const double angle = std::acos(a.head<2>().normalized().dot(b.head<2>().normalized()));
    EXPECT_NEAR(angle, 72.0 * M_PI / 180.0, 1e-12);
    EXPECT_NEAR(a.head<2>().norm(), 5.0, 1e-12);
  }
}

TEST(RingTrack, NormalsPerpendicularToRadius) {
  for (int n : {3, 5, 8}) {
    const Track t = make_ring_track(n, 7.0);
    for (const Gate& g : t.gates) EXPECT_NEAR(g.normal().head<2>().dot(g.center.head<2>().normalized()), 0.0, 1e-12);
  }
}

TEST(RingTrack, AlternatingHeights) {
  const Track t = make_ring_track();
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(std::abs(t.gates[i].center.z() - t.gates[i + 1].center.z()), 1.5, 1e-12);
  const Track flat = make_ring_track(5, 5.0, 2.0, 0.0);
  for (const Gate& g : flat.gates) EXPECT_EQ(g.center.z(), 2.0);
}

TEST(RingTrack, RejectsBadSpec) {
  EXPECT_THROW(make_ring_track(2), InvalidTrackSpec);
  EXPECT_THROW(make_ring_track(5, 0.0), InvalidTrackSpec);
}

TEST(FigureEight, SixGates) {
  EXPECT_EQ(make_figure_eight_track().num_gates(), 6);
  EXPECT_THROW(make_figure_eight_track(5), InvalidTrackSpec);
  EXPECT_THROW(make_figure_eight_track(6, -1.0), InvalidTrackSpec);
}

TEST(FigureEight, SelfIntersectsExactlyOnce) {
  EXPECT_EQ(self_intersections(make_figure_eight_track()), 1);
  EXPECT_EQ(self_intersections(make_figure_eight_track(6, 2.5, 3.0)), 1);
  EXPECT_EQ(self_intersections(make_ring_track()), 0);
}

TEST(FigureEight, MirrorSymmetric) {
  const Track t = make_figure_eight_track();
  for (const Gate& g : t.gates) {
    const Vec3d mirrored(-g.center.x(), g.center.y(), g.center.z());
    bool found = false;
    for (const Gate& h : t.gates) found = found || (h.center - mirrored).norm() < 1e-9;
    EXPECT_TRUE(found);
  }
}

TEST(GatePassage, StraightThroughCenter) {
  const Gate g{Vec3d(1, 2, 3), 0.3};
  EXPECT_TRUE(check_gate_passage(g.center - 0.4 * g.normal(), g.center + 0.4 * g.normal(), g, 0.2));
}

TEST(GatePassage, LateralMissRejected) {
  const Gate g{Vec3d(0, 0, 2), 0.0};
  EXPECT_FALSE(check_gate_passage(Vec3d(-1, 10, 2), Vec3d(1, 10, 2), g, 0.5));
}

TEST(GatePassage, BackwardCrossingRejected) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  const Gate g{Vec3d(0, 0, 2), 1.0};
  for (int i = 0; i < 200; ++i) {
    const Vec3d a = g.center - 0.5 * g.normal() + Vec3d(u(rng), u(rng), u(rng)) * 0.2;
    const Vec3d b = g.center + 0.5 * g.normal() + Vec3d(u(rng), u(rng), u(rng)) * 0.2;
    if (check_gate_passage(a, b, g, 0.5)) EXPECT_FALSE(check_gate_passage(b, a, g, 0.5));
  }
}

TEST(GatePassage, MatchesDenseSamplingOracle) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> yaw(-M_PI, M_PI), off(-0.7, 0.7), len(0.05, 0.6);
  int passes = 0;
  for (int i = 0; i < 1000; ++i) {
    const Gate g{Vec3d(off(rng), off(rng), 2.0 + off(rng)), yaw(rng)};
    const double tol = i % 2 ? 0.2 : 0.5;
    // Segments crossing near the shrunk boundary.
    const Vec3d cross = g.center + g.lateral() * (tol + 0.1 * off(rng)) * (i % 3 ? 1 : -1) +
                        Vec3d(0, 0, 0.6 * off(rng));
    const Vec3d dir = (g.normal() + 0.4 * Vec3d(off(rng), off(rng), off(rng))).normalized();
    const double t0 = len(rng), t1 = len(rng);
    const Vec3d a = cross - t0 * dir, b = cross + t1 * dir;
    const bool expected = dense_oracle(a, b, g, tol);
    EXPECT_EQ(check_gate_passage(a, b, g, tol), expected) << "segment " << i;
    passes += expected;
  }
  EXPECT_GT(passes, 100);
  EXPECT_LT(passes, 900);
}

TEST(GatePassage, InvariantUnderRotationAboutZ) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 300; ++i) {
    const Gate g{Vec3d(u(rng), u(rng), 2), M_PI * u(rng)};
    const Vec3d a = g.center - 0.3 * g.normal() + 0.4 * Vec3d(u(rng), u(rng), u(rng));
    const Vec3d b = g.center + 0.3 * g.normal() + 0.4 * Vec3d(u(rng), u(rng), u(rng));
    const double phi = M_PI * u(rng);
    const Eigen::AngleAxisd rot(phi, Vec3d::UnitZ());
    const Gate gr{rot * g.center, g.yaw + phi};
    EXPECT_EQ(check_gate_passage(a, b, g, 0.4), check_gate_passage(rot * a, rot * b, gr, 0.4));
  }
}

TEST(GatePassage, FollowingCenterPolylinePassesEveryGate) {
  for (const Track& t : {make_ring_track(), make_figure_eight_track()}) {
    // Approach each gate along its normal, then move on to the next.
    std::vector<Vec3d> path;
    for (const Gate& g : t.gates) {
      path.push_back(g.center - 0.3 * g.normal());
      path.push_back(g.center + 0.3 * g.normal());
    }
    ProgressState p;
    for (std::size_t i = 1; i < path.size(); ++i) {
      const bool pass = check_gate_passage(path[i - 1], path[i], t.gates[p.next_gate_index], 0.2);
      p = update_progress(p, pass, double(i), t.num_gates());
    }
    EXPECT_EQ(p.gates_passed_total, t.num_gates());
    EXPECT_EQ(p.laps_completed, 1);
  }
}

TEST(Progress, FiveSequentialPassesMakeOneLap) {
  ProgressState p;
  for (int i = 0; i < 5; ++i) p = update_progress(p, true, 1.0 + i, 5);
  EXPECT_EQ(p.laps_completed, 1);
  EXPECT_EQ(p.next_gate_index, 0);
  ASSERT_EQ(p.lap_times.size(), 1u);
  EXPECT_DOUBLE_EQ(p.lap_times[0], 5.0);
}

TEST(Progress, NoPassIsIdentity) {
  ProgressState p;
  p.next_gate_index = 3;
  p.gates_passed_total = 8;
  const ProgressState q = update_progress(p, false, 9.0, 5);
  EXPECT_EQ(q.next_gate_index, 3);
  EXPECT_EQ(q.gates_passed_total, 8);
}

TEST(Progress, TwelvePassesOnSixGates) {
  ProgressState p;
  for (int i = 0; i < 12; ++i) p = update_progress(p, true, i, 6);
  EXPECT_EQ(p.laps_completed, 2);
  EXPECT_EQ(p.next_gate_index, 0);
  EXPECT_EQ(p.gates_passed_total, 12);
}

TEST(TrackFile, RoundTrip) {
  const Track t = make_figure_eight_track();
  const auto path = std::filesystem::temp_directory_path() / "cruise_track_rt.json";
  save_track(t, path);
  const Track u = load_track(path);
  ASSERT_EQ(u.num_gates(), t.num_gates());
  EXPECT_EQ(u.name, t.name);
  for (int i = 0; i < t.num_gates(); ++i) {
    EXPECT_EQ(u.gates[i].center, t.gates[i].center);
    EXPECT_EQ(u.gates[i].yaw, t.gates[i].yaw);
    EXPECT_EQ(u.gates[i].half_width, t.gates[i].half_width);
  }
  std::filesystem::remove(path);
}

TEST(TrackFile, RejectsInvalid) {
  EXPECT_THROW(track_from_json(R"({"name":"x","gates":[{"center":[0,0,1],"yaw":0,"half_width":0.5,"half_height":0.5}]})"),
               InvalidTrackSpec);
  EXPECT_THROW(make_track("oval"), InvalidTrackSpec);
}

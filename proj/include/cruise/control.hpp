// Two-loop velocity controller: a PD velocity loop producing a desired
// acceleration, then a simplified acceleration-to-attitude mapping and a PD
// attitude loop producing (T, τ_B).
#pragma once

#include <Eigen/Dense>

#include <algorithm>

#include "cruise/dynamics.hpp"

namespace cruise {

/// Attitude target clip [rad]; well inside the gimbal guard.
inline constexpr double kMaxTiltTarget = 0.9;

template <typename Scalar>
struct ControllerGains {
  Vec3<Scalar> vel_p{Vec3<Scalar>::Constant(3.0)};   // K_v
  Vec3<Scalar> vel_d{Vec3<Scalar>::Constant(0.3)};   // K_vd
  Vec3<Scalar> pos_p{Vec3<Scalar>::Constant(1.0)};   // K_p,pos
  Vec3<Scalar> pos_d{Vec3<Scalar>::Constant(0.1)};   // K_d,pos
  Vec3<Scalar> att_p{Vec3<Scalar>(1.0, 1.0, 2.0)};   // K_p,att
  Vec3<Scalar> att_d{Vec3<Scalar>(0.2, 0.2, 0.4)};   // K_d,att
  Scalar max_tilt{kMaxTiltTarget};

  /// Default gains with the attitude loop scaled by the inertia diagonal
  /// (ω_n = 10 rad/s, critically damped).
  static ControllerGains defaults_for(const DroneParams<Scalar>& params) {
    ControllerGains g;
    const Vec3<Scalar> j = params.inertia.diagonal();
    g.att_p = Scalar(100) * j;
    g.att_d = Scalar(20) * j;
    return g;
  }

  void validate() const {
    auto nonneg = [](const Vec3<Scalar>& v) { return (v.array() >= Scalar(0)).all(); };
    auto pos = [](const Vec3<Scalar>& v) { return (v.array() > Scalar(0)).all(); };
    if (!nonneg(vel_p)) throw ConfigError("controller.vel_p", "gains must be >= 0");
    if (!nonneg(vel_d)) throw ConfigError("controller.vel_d", "gains must be >= 0");
    if (!nonneg(pos_p)) throw ConfigError("controller.pos_p", "gains must be >= 0");
    if (!nonneg(pos_d)) throw ConfigError("controller.pos_d", "gains must be >= 0");
    if (!pos(att_p)) throw ConfigError("controller.att_p", "gains must be > 0");
    if (!pos(att_d)) throw ConfigError("controller.att_d", "gains must be > 0");
    if (!(max_tilt > Scalar(0) && max_tilt < Scalar(M_PI / 2 - kGimbalGuard)))
      throw ConfigError("controller.max_tilt", "must lie in (0, pi/2 - gimbal guard)");
  }
};

/// Finite-difference memory for the velocity-error derivative.
template <typename Scalar>
struct ControllerState {
  Vec3<Scalar> prev_velocity_error{Vec3<Scalar>::Zero()};
  bool initialized{false};

  bool operator==(const ControllerState&) const = default;
};

using ControllerGainsd = ControllerGains<double>;
using ControllerStated = ControllerState<double>;

template <typename Scalar>
struct OuterLoopOutput {
  Vec3<Scalar> accel_desired;
  ControllerState<Scalar> state;
};

/// a_des = K_v e_v + K_vd ė_v, with ė_v = 0 on the first call.
template <typename Scalar>
OuterLoopOutput<Scalar> outer_loop(const Vec3<Scalar>& v_ref, const DroneState<Scalar>& state,
                                   const ControllerState<Scalar>& ctl,
                                   const ControllerGains<Scalar>& gains, Scalar dt) {
  const Vec3<Scalar> err = v_ref - state.velocity;
  const Vec3<Scalar> err_rate =
      ctl.initialized ? Vec3<Scalar>((err - ctl.prev_velocity_error) / dt) : Vec3<Scalar>::Zero();
  OuterLoopOutput<Scalar> out;
  out.accel_desired = gains.vel_p.cwiseProduct(err) + gains.vel_d.cwiseProduct(err_rate);
  out.state.prev_velocity_error = err;
  out.state.initialized = true;
  return out;
}

/// Attitude targets (roll, pitch, yaw) implied by a commanded acceleration,
/// before clipping.
template <typename Scalar>
Vec3<Scalar> attitude_target_unclipped(const Vec3<Scalar>& accel_cmd, Scalar gravity) {
  return Vec3<Scalar>(-accel_cmd.y() / gravity, accel_cmd.x() / gravity, Scalar(0));
}

template <typename Scalar>
ControlCommand<Scalar> inner_loop(const Vec3<Scalar>& accel_desired,
                                  const DroneState<Scalar>& state,
                                  const ControllerGains<Scalar>& gains,
                                  const DroneParams<Scalar>& params) {
  const Vec3<Scalar> accel_cmd =
      gains.pos_p.cwiseProduct(accel_desired) - gains.pos_d.cwiseProduct(state.velocity);

  ControlCommand<Scalar> cmd;
  cmd.thrust = params.mass * params.gravity + params.mass * accel_cmd.z();

  Vec3<Scalar> target = attitude_target_unclipped(accel_cmd, params.gravity);
  target.x() = std::clamp(target.x(), -gains.max_tilt, gains.max_tilt);
  target.y() = std::clamp(target.y(), -gains.max_tilt, gains.max_tilt);

  cmd.torque = gains.att_p.cwiseProduct(target - state.euler) -
               gains.att_d.cwiseProduct(state.body_rates);
  return saturate(cmd, params);
}

template <typename Scalar>
struct TrackingOutput {
  ControlCommand<Scalar> command;
  ControllerState<Scalar> state;
};

/// Full cascade: reference velocity in, actuator command out.
template <typename Scalar>
TrackingOutput<Scalar> track_velocity(const Vec3<Scalar>& v_ref, const DroneState<Scalar>& state,
                                      const ControllerState<Scalar>& ctl,
                                      const ControllerGains<Scalar>& gains,
                                      const DroneParams<Scalar>& params, Scalar dt) {
  OuterLoopOutput<Scalar> outer = outer_loop(v_ref, state, ctl, gains, dt);
  return {inner_loop(outer.accel_desired, state, gains, params), outer.state};
}

}  // namespace cruise

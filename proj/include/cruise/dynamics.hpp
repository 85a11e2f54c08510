// Quadrotor rigid-body dynamics.
//
// State is (position, Z-Y-X Euler angles, world velocity, body rates); the
// input is collective thrust along +z_B plus a body torque. Everything here is
// a pure function templated on the scalar type.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

#include "cruise/errors.hpp"

namespace cruise {

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;

using Vec3d = Vec3<double>;
using Mat3d = Mat3<double>;

/// Pitch margin from ±π/2 below which the Euler-rate map is refused [rad].
inline constexpr double kGimbalGuard = 0.1;

template <typename Scalar>
struct DroneParams {
  Scalar mass{1.0};                                   // [kg]
  Mat3<Scalar> inertia{Vec3<Scalar>(0.01, 0.01, 0.02).asDiagonal()};  // [kg·m²]
  Scalar gravity{9.81};                               // [m/s²]
  Scalar arm_length{0.15};                            // [m]
  Scalar max_thrust{4.0 * 1.0 * 9.81};                // [N]
  Scalar max_torque{0.2};                             // [N·m] per axis

  /// Throws ConfigError when any physical invariant is broken.
  void validate() const {
    if (!(mass > Scalar(0))) throw ConfigError("drone.mass", "must be > 0");
    if (!(gravity > Scalar(0))) throw ConfigError("drone.gravity", "must be > 0");
    if (!(max_torque > Scalar(0))) throw ConfigError("drone.max_torque", "must be > 0");
    if (!(max_thrust > mass * gravity))
      throw ConfigError("drone.max_thrust", "must exceed mass * gravity (hover infeasible)");
    if (!inertia.isApprox(inertia.transpose()))
      throw ConfigError("drone.inertia", "must be symmetric");
    Eigen::LLT<Mat3<Scalar>> llt(inertia);
    if (llt.info() != Eigen::Success)
      throw ConfigError("drone.inertia", "must be positive definite");
  }
};

template <typename Scalar>
struct DroneState {
  Vec3<Scalar> position{Vec3<Scalar>::Zero()};    // p_WB [m]
  Vec3<Scalar> euler{Vec3<Scalar>::Zero()};       // [roll, pitch, yaw] [rad]
  Vec3<Scalar> velocity{Vec3<Scalar>::Zero()};    // v_WB [m/s]
  Vec3<Scalar> body_rates{Vec3<Scalar>::Zero()};  // ω_B [rad/s]

  bool allFinite() const {
    return position.allFinite() && euler.allFinite() && velocity.allFinite() &&
           body_rates.allFinite();
  }

  // Linear combinations for the integrator. The same type carries derivatives.
  friend DroneState operator+(const DroneState& a, const DroneState& b) {
    return {a.position + b.position, a.euler + b.euler, a.velocity + b.velocity,
            a.body_rates + b.body_rates};
  }
  friend DroneState operator*(Scalar s, const DroneState& a) {
    return {s * a.position, s * a.euler, s * a.velocity, s * a.body_rates};
  }
};

template <typename Scalar>
struct ControlCommand {
  Scalar thrust{0};                               // T [N]
  Vec3<Scalar> torque{Vec3<Scalar>::Zero()};      // τ_B [N·m]
};

using DroneParamsd = DroneParams<double>;
using DroneStated = DroneState<double>;
using ControlCommandd = ControlCommand<double>;

/// Body-to-world rotation R_WB = Rz(ψ) Ry(θ) Rx(φ).
template <typename Scalar>
Mat3<Scalar> rotation_world_from_body(const Vec3<Scalar>& euler) {
  using std::cos;
  using std::sin;
  const Scalar cr = cos(euler.x()), sr = sin(euler.x());
  const Scalar cp = cos(euler.y()), sp = sin(euler.y());
  const Scalar cy = cos(euler.z()), sy = sin(euler.z());
  Mat3<Scalar> r;
  r << cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr,
       sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr,
       -sp,     cp * sr,                cp * cr;
  return r;
}

/// W_Θ with Θ̇ = W_Θ ω_B for Z-Y-X angles.
template <typename Scalar>
Mat3<Scalar> euler_rate_map(const Vec3<Scalar>& euler) {
  using std::abs;
  using std::cos;
  using std::sin;
  using std::tan;
  if (!(abs(euler.y()) < Scalar(M_PI / 2 - kGimbalGuard))) {
    throw SingularAttitude("pitch " + std::to_string(double(euler.y())) +
                           " rad inside gimbal guard");
  }
  const Scalar cr = cos(euler.x()), sr = sin(euler.x());
  const Scalar cp = cos(euler.y()), tp = tan(euler.y());
  Mat3<Scalar> w;
  w << Scalar(1), sr * tp, cr * tp,
       Scalar(0), cr, -sr,
       Scalar(0), sr / cp, cr / cp;
  return w;
}

/// Clamp a command to the actuator envelope.
template <typename Scalar>
ControlCommand<Scalar> saturate(const ControlCommand<Scalar>& cmd,
                                const DroneParams<Scalar>& params) {
  ControlCommand<Scalar> out;
  out.thrust = std::clamp(cmd.thrust, Scalar(0), params.max_thrust);
  out.torque = cmd.torque.cwiseMax(-params.max_torque).cwiseMin(params.max_torque);
  return out;
}

template <typename Scalar>
DroneState<Scalar> state_derivative(const DroneState<Scalar>& state,
                                    const ControlCommand<Scalar>& cmd,
                                    const DroneParams<Scalar>& params) {
  DroneState<Scalar> d;
  d.position = state.velocity;
  d.euler = euler_rate_map(state.euler) * state.body_rates;
  const Vec3<Scalar> thrust_body(Scalar(0), Scalar(0), cmd.thrust);
  d.velocity = Vec3<Scalar>(Scalar(0), Scalar(0), -params.gravity) +
               rotation_world_from_body(state.euler) * thrust_body / params.mass;
  const Vec3<Scalar> momentum = params.inertia * state.body_rates;
  d.body_rates = params.inertia.ldlt().solve(cmd.torque - state.body_rates.cross(momentum));
  return d;
}

/// One RK4 step with the (saturated) command held over dt.
template <typename Scalar>
DroneState<Scalar> step(const DroneState<Scalar>& state, const ControlCommand<Scalar>& cmd,
                        const DroneParams<Scalar>& params, Scalar dt) {
  const ControlCommand<Scalar> u = saturate(cmd, params);
  const DroneState<Scalar> k1 = state_derivative(state, u, params);
  const DroneState<Scalar> k2 = state_derivative(state + (dt / 2) * k1, u, params);
  const DroneState<Scalar> k3 = state_derivative(state + (dt / 2) * k2, u, params);
  const DroneState<Scalar> k4 = state_derivative(state + dt * k3, u, params);
  DroneState<Scalar> next = state + (dt / 6) * (k1 + Scalar(2) * k2 + Scalar(2) * k3 + k4);
  if (!next.allFinite()) throw NonFiniteState("non-finite drone state after integration step");
  return next;
}

/// World-frame angular momentum R_WB J ω_B.
template <typename Scalar>
Vec3<Scalar> angular_momentum_world(const DroneState<Scalar>& state,
                                    const DroneParams<Scalar>& params) {
  return rotation_world_from_body(state.euler) * (params.inertia * state.body_rates);
}

}  // namespace cruise

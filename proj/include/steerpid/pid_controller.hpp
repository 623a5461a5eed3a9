#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "steerpid/error.hpp"

namespace steerpid {

/// Controller constants. Defaults are the tuned reasoning-model values.
///
/// `kd` is used as an exponential mixing coefficient for the derivative term,
/// so it must lie in [0, 1].
struct PidGains {
  double kp = 0.01;
  double ki = 0.0005;
  double kd = 0.005;
  double p_target = 0.3;
  double alpha_max = 0.40;
  double i_max = 0.20;
  double epsilon_margin = 0.20;

  bool operator==(const PidGains&) const = default;
};

inline void validate(const PidGains& g) {
  auto finite = [](double v) { return std::isfinite(v); };
  detail::require(finite(g.kp) && finite(g.ki) && finite(g.kd) && finite(g.p_target) && finite(g.alpha_max) &&
                      finite(g.i_max) && finite(g.epsilon_margin),
                  "PidGains: all gains must be finite");
  detail::require(g.p_target >= 0.0 && g.p_target <= 1.0, "PidGains: p_target must be in [0, 1]");
  detail::require(g.alpha_max >= 0.0, "PidGains: alpha_max must be >= 0");
  detail::require(g.i_max >= 0.0, "PidGains: i_max must be >= 0");
  detail::require(g.epsilon_margin >= 0.0, "PidGains: epsilon_margin must be >= 0");
  detail::require(g.kd >= 0.0 && g.kd <= 1.0, "PidGains: kd must be in [0, 1]");
}

/// Mutable loop state. Invariants: 0 <= alpha <= alpha_max, |integral| <= i_max.
struct PidState {
  double alpha = 0.0;
  double integral = 0.0;
  double derivative = 0.0;
  double e_prev = 0.0;

  bool operator==(const PidState&) const = default;
};

/// Record of a single controller update. `gated` is true when the error
/// exceeded the margin and the I/D/alpha terms were actually updated.
struct PidUpdateTrace {
  double error = 0.0;
  double p_term = 0.0;
  double i_term = 0.0;
  double d_term = 0.0;
  bool gated = false;
  double alpha_after = 0.0;

  bool operator==(const PidUpdateTrace&) const = default;
};

constexpr PidState init_state() noexcept { return PidState{}; }

constexpr PidState reset(const PidState&) noexcept { return init_state(); }

inline double compute_error(double p_red, double p_target) {
  detail::require(p_red >= 0.0 && p_red <= 1.0, "compute_error: p_red must be in [0, 1]");
  detail::require(p_target >= 0.0 && p_target <= 1.0, "compute_error: p_target must be in [0, 1]");
  return p_red - p_target;
}

/// One controller step on a redundancy probability.
///
/// The update is margin-gated: I, D and alpha only move when the error
/// exceeds `epsilon_margin`, and are updated in that order (alpha sees the
/// freshly clamped integral). `e_prev` is refreshed on every call, gated or
/// not. Because of the one-sided gate, alpha can only decrease through a
/// negative I/D contribution on a gated step.
inline std::pair<PidState, PidUpdateTrace> update(const PidState& state, const PidGains& gains, double p_red) {
  detail::require(std::isfinite(p_red), "pid update: p_red must be finite");
  validate(gains);
  const double e = compute_error(p_red, gains.p_target);

  PidState next = state;
  PidUpdateTrace trace;
  trace.error = e;
  trace.p_term = gains.kp * e;
  trace.gated = e > gains.epsilon_margin;
  if (trace.gated) {
    next.integral = std::clamp(state.integral + gains.ki * e, -gains.i_max, gains.i_max);
    next.derivative = gains.kd * (e - state.e_prev) + (1.0 - gains.kd) * state.derivative;
    next.alpha = std::clamp(state.alpha + trace.p_term + next.integral + next.derivative, 0.0, gains.alpha_max);
  }
  next.e_prev = e;

  trace.i_term = next.integral;
  trace.d_term = next.derivative;
  trace.alpha_after = next.alpha;
  return {next, trace};
}

}  // namespace steerpid

#pragma once

// Rectified-flow data path: z_t = (1 - t) z0 + t eps, with t = 1 pure noise
// and t = 0 data. The regression target is the velocity u = eps - z0.

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>

#include "hicogen/linalg.hpp"

namespace hicogen {

/// Smallest time at which score-dependent quantities are evaluated.
inline constexpr double kTimeMin = 1e-3;

struct LatentState {
  Vec z;
  double t = 1.0;
};

inline void require_unit_time(double t, const char* what) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw std::domain_error(std::string(what) + ": t=" + std::to_string(t) +
                            " outside [0, 1]");
  }
}

inline Vec forward_noise(std::span<const double> z0, std::span<const double> eps, double t) {
  require_same_dim(z0, eps, "forward_noise");
  require_unit_time(t, "forward_noise");
  Vec out(z0.size());
  for (std::size_t i = 0; i < z0.size(); ++i) out[i] = (1.0 - t) * z0[i] + t * eps[i];
  return out;
}

/// One deterministic step z_s = z_t + u (s - t).
inline LatentState euler_ode_step(const LatentState& state, double s, std::span<const double> u) {
  require_same_dim(state.z, u, "euler_ode_step");
  if (!(s >= 0.0 && s < state.t)) {
    throw std::domain_error("euler_ode_step: need 0 <= s < t (s=" + std::to_string(s) +
                            ", t=" + std::to_string(state.t) + ")");
  }
  if (!all_finite(u)) throw std::domain_error("euler_ode_step: non-finite velocity");
  LatentState next{Vec(state.z.size()), s};
  const double h = s - state.t;
  for (std::size_t i = 0; i < u.size(); ++i) next.z[i] = state.z[i] + u[i] * h;
  return next;
}

/// Coefficient c(t) with E[eps - z0 | z_t = z] = c(t) z for z0 ~ N(0, sigma_d^2 I).
inline double gaussian_velocity_coefficient(double t, double sigma_d) {
  const double var = (1.0 - t) * (1.0 - t) * sigma_d * sigma_d + t * t;
  return (t - (1.0 - t) * sigma_d * sigma_d) / var;
}

inline void require_oracle_args(double t, double sigma_d, const char* what) {
  if (!(t > 0.0 && t <= 1.0)) {
    throw std::domain_error(std::string(what) + ": t must lie in (0, 1]");
  }
  if (!(sigma_d > 0.0)) throw std::invalid_argument(std::string(what) + ": sigma_d must be > 0");
}

/// Exact conditional velocity for z0 ~ N(0, sigma_d^2 I).
inline Vec analytic_gaussian_velocity(std::span<const double> z, double t, double sigma_d) {
  require_oracle_args(t, sigma_d, "analytic_gaussian_velocity");
  return scaled(z, gaussian_velocity_coefficient(t, sigma_d));
}

/// Exact conditional velocity for z0 ~ N(mean, sigma_d^2 I): shift the
/// centred oracle along the interpolation path.
inline Vec shifted_gaussian_velocity(std::span<const double> z, double t,
                                     std::span<const double> mean, double sigma_d) {
  require_same_dim(z, mean, "shifted_gaussian_velocity");
  require_oracle_args(t, sigma_d, "shifted_gaussian_velocity");
  const double c = gaussian_velocity_coefficient(t, sigma_d);
  Vec u(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) u[i] = c * (z[i] - (1.0 - t) * mean[i]) - mean[i];
  return u;
}

}  // namespace hicogen

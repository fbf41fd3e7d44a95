#pragma once

// Reverse-time SDE sampler with controllable stochasticity. Each transition
// from t to s < t is Gaussian:
//
//   mean = z + [u - c * score(z, t, u)] (s - t),   std = g(t) eta(t) sqrt(t - s)
//
// with g(t) = t and score = -(z + (1 - t) u) / t. The marginal-preserving form
// uses c = g^2 eta^2 / 2 (reduces to the ODE at eta = 0); the literal form
// keeps c = g^2 regardless of eta.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <istream>
#include <numbers>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "hicogen/flow.hpp"
#include "hicogen/rng.hpp"
#include "hicogen/schedule.hpp"
#include "hicogen/velocity_field.hpp"

namespace hicogen {

enum class SdeForm { MarginalPreserving, Literal };

inline const char* to_string(SdeForm f) { return f == SdeForm::Literal ? "literal" : "marginal"; }

inline SdeForm sde_form_from_string(const std::string& s) {
  if (s == "marginal") return SdeForm::MarginalPreserving;
  if (s == "literal") return SdeForm::Literal;
  throw std::invalid_argument("unknown SDE form '" + s + "'");
}

struct SamplerOptions {
  SdeForm form = SdeForm::MarginalPreserving;
  /// Evaluate the score at max(t, kTimeMin) instead of rejecting t < kTimeMin.
  bool clamp_score_time = false;
};

inline double diffusion_coefficient(double t) { return t; }

inline Vec score_from_velocity(std::span<const double> z, double t, std::span<const double> u) {
  require_same_dim(z, u, "score_from_velocity");
  if (!(t >= kTimeMin)) {
    throw std::domain_error("score_from_velocity: t=" + std::to_string(t) + " below t_min");
  }
  Vec score(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) score[i] = -(z[i] + (1.0 - t) * u[i]) / t;
  return score;
}

inline double isotropic_normal_log_density(std::span<const double> x, std::span<const double> mean, double std) {
  require_same_dim(x, mean, "isotropic_normal_log_density");
  const double d = static_cast<double>(x.size());
  return -0.5 * d * std::log(2.0 * std::numbers::pi) - d * std::log(std) -
         0.5 * squared_distance(x, mean) / (std * std);
}

/// Score-correction coefficient c of the transition mean.
inline double score_correction(double t, double eta, SdeForm form) {
  const double g = diffusion_coefficient(t);
  return form == SdeForm::Literal ? g * g : 0.5 * g * g * eta * eta;
}

inline bool is_degenerate(double eta) { return !(eta > 0.0); }

/// Transition mean. Shared by sampling and by likelihood replay so that
/// both paths produce identical numbers.
inline Vec transition_mean(std::span<const double> z, double t, double s, std::span<const double> u, double eta,
                           const SamplerOptions& opt) {
  const double c = score_correction(t, eta, opt.form);
  if (c == 0.0) return euler_ode_step(LatentState{Vec(z.begin(), z.end()), t}, s, u).z;
  const double t_score = opt.clamp_score_time ? std::max(t, kTimeMin) : t;
  const Vec score = score_from_velocity(z, t_score, u);
  Vec mean(z.size());
  const double h = s - t;
  for (std::size_t i = 0; i < z.size(); ++i) mean[i] = z[i] + (u[i] - c * score[i]) * h;
  return mean;
}

/// d(mean)/du, a scalar multiple of the identity.
inline double transition_mean_velocity_gain(double t, double s, double eta, const SamplerOptions& opt) {
  const double c = score_correction(t, eta, opt.form);
  if (c == 0.0) return s - t;
  const double t_score = opt.clamp_score_time ? std::max(t, kTimeMin) : t;
  return (s - t) * (1.0 + c * (1.0 - t) / t_score);
}

inline double transition_std(double t, double s, double eta) {
  return diffusion_coefficient(t) * eta * std::sqrt(t - s);
}

struct Transition {
  LatentState next;
  Vec mean;
  double std = 0.0;
  double log_prob = 0.0;
  bool degenerate = false;
};

/// One transition given the velocity u at (z, t) and the multiplier eta.
/// Degenerate (eta = 0) transitions have no density: log_prob is stored as 0.
inline Transition sde_transition(const LatentState& state, double s, std::span<const double> u, double eta,
                                 std::span<const double> noise, const SamplerOptions& opt = {}) {
  require_same_dim(state.z, u, "sde_step");
  require_same_dim(state.z, noise, "sde_step");
  if (!(s >= 0.0 && s < state.t)) throw std::domain_error("sde_step: need 0 <= s < t");
  if (!all_finite(u)) throw std::domain_error("sde_step: non-finite velocity");
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw std::domain_error("sde_step: eta must be finite and >= 0");

  Transition tr;
  tr.degenerate = is_degenerate(eta);
  if (tr.degenerate && opt.form == SdeForm::MarginalPreserving) {
    tr.next = euler_ode_step(state, s, u);
    tr.mean = tr.next.z;
    return tr;
  }
  tr.mean = transition_mean(state.z, state.t, s, u, eta, opt);
  tr.std = transition_std(state.t, s, eta);
  tr.next = LatentState{tr.mean, s};
  if (!tr.degenerate) {
    for (std::size_t i = 0; i < noise.size(); ++i) tr.next.z[i] += tr.std * noise[i];
    tr.log_prob = isotropic_normal_log_density(tr.next.z, tr.mean, tr.std);
  }
  if (!all_finite(tr.next.z) || !std::isfinite(tr.log_prob)) throw std::domain_error("sde_step: non-finite result");
  return tr;
}

template <class Field>
concept VelocityModel = requires(const Field& f, std::span<const double> z, double t) {
  { f(z, t) } -> std::convertible_to<Vec>;
};

template <VelocityModel Field>
Transition sde_step(const LatentState& state, double s, const Field& field, const StochasticitySchedule& schedule,
                    std::span<const double> noise, const SamplerOptions& opt = {}) {
  const Vec u = field(std::span<const double>(state.z), state.t);
  return sde_transition(state, s, u, eta_at(schedule, state.t), noise, opt);
}

struct TrajectoryStep {
  double t = 0.0;
  double s = 0.0;
  double eta = 0.0;
  Vec state;
  Vec mean;
  double std = 0.0;
  Vec next;
  double log_prob = 0.0;
  bool degenerate = false;
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;
  Vec condition;
  Vec terminal;
  SamplerOptions options;

  double total_log_prob() const {
    double acc = 0.0;
    for (const auto& s : steps) acc += s.log_prob;
    return acc;
  }
};

/// Uniform grid 1 = t_0 > t_1 > ... > t_N = 0, with t_k = (N - k) / N.
inline std::vector<double> uniform_time_grid(std::size_t num_steps) {
  if (num_steps == 0) throw std::invalid_argument("uniform_time_grid: need at least one step");
  std::vector<double> grid(num_steps + 1);
  for (std::size_t k = 0; k <= num_steps; ++k) {
    grid[k] = static_cast<double>(num_steps - k) / static_cast<double>(num_steps);
  }
  return grid;
}

/// Full stochastic rollout from z_1 ~ N(0, I). The seed determines both the
/// initial noise and every increment.
template <VelocityModel Field>
Trajectory sample_trajectory(const Field& field, std::size_t dim, const StochasticitySchedule& schedule,
                             std::size_t num_steps, std::uint64_t seed, const SamplerOptions& opt = {},
                             Vec condition = {}) {
  const auto grid = uniform_time_grid(num_steps);
  Rng rng(seed);
  LatentState state{rng.normal_vector(dim), 1.0};
  Trajectory traj;
  traj.condition = std::move(condition);
  traj.options = opt;
  traj.steps.reserve(num_steps);
  SamplerOptions step_opt = opt;
  step_opt.clamp_score_time = true;
  for (std::size_t k = 0; k < num_steps; ++k) {
    const double t = grid[k];
    const double s = grid[k + 1];
    const Vec noise = rng.normal_vector(dim);
    const Vec u = field(std::span<const double>(state.z), t);
    const double eta = eta_at(schedule, t);
    Transition tr = sde_transition(state, s, u, eta, noise, step_opt);
    traj.steps.push_back({t, s, eta, state.z, tr.mean, tr.std, tr.next.z, tr.log_prob, tr.degenerate});
    state = std::move(tr.next);
  }
  traj.options.clamp_score_time = true;
  traj.terminal = state.z;
  return traj;
}

/// Binds a condition vector to a network so it satisfies VelocityModel.
struct ConditionedField {
  const VelocityField* field;
  std::span<const double> condition;
  Vec operator()(std::span<const double> z, double t) const { return (*field)(z, t, condition); }
};

inline Trajectory sample_trajectory(const VelocityField& field, std::span<const double> condition,
                                    const StochasticitySchedule& schedule, std::size_t num_steps, std::uint64_t seed,
                                    const SamplerOptions& opt = {}) {
  return sample_trajectory(ConditionedField{&field, condition}, field.architecture().state_dim, schedule, num_steps,
                           seed, opt, Vec(condition.begin(), condition.end()));
}

/// Deterministic Euler integration of the flow ODE from z1.
template <VelocityModel Field>
Vec sample_ode(const Field& field, Vec z1, std::size_t num_steps) {
  const auto grid = uniform_time_grid(num_steps);
  LatentState state{std::move(z1), 1.0};
  for (std::size_t k = 0; k < num_steps; ++k) {
    const Vec u = field(std::span<const double>(state.z), grid[k]);
    state = euler_ode_step(state, grid[k + 1], u);
  }
  return state.z;
}

/// Log density of a recorded step recomputed from its stored statistics.
inline double replay_log_prob(const TrajectoryStep& step) {
  if (step.degenerate) return 0.0;
  return isotropic_normal_log_density(step.next, step.mean, step.std);
}

// Line-delimited audit records: one JSON object per step with keys
// t, s, eta, state, mean, std, next, log_prob, degenerate.
inline void write_trajectory_records(std::ostream& os, const Trajectory& traj) {
  for (const auto& st : traj.steps) {
    nlohmann::json j{{"t", st.t},       {"s", st.s},     {"eta", st.eta},           {"state", st.state},
                     {"mean", st.mean}, {"std", st.std}, {"next", st.next},         {"log_prob", st.log_prob},
                     {"degenerate", st.degenerate}};
    os << j.dump() << '\n';
  }
}

inline std::vector<TrajectoryStep> read_trajectory_records(std::istream& is) {
  std::vector<TrajectoryStep> steps;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    TrajectoryStep st;
    st.t = j.at("t").get<double>();
    st.s = j.at("s").get<double>();
    st.eta = j.value("eta", 0.0);
    st.state = j.value("state", Vec{});
    st.mean = j.at("mean").get<Vec>();
    st.std = j.at("std").get<double>();
    st.next = j.at("next").get<Vec>();
    st.log_prob = j.at("log_prob").get<double>();
    st.degenerate = j.value("degenerate", false);
    steps.push_back(std::move(st));
  }
  return steps;
}

}  // namespace hicogen

#pragma once

// Group-relative policy optimization of a velocity field through the
// stochastic sampler. Each rollout step is a Gaussian action whose mean
// depends on the field parameters; the clipped surrogate is differentiated
// through those means.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "hicogen/errors.hpp"
#include "hicogen/parallel.hpp"
#include "hicogen/reward.hpp"
#include "hicogen/sampler.hpp"
#include "hicogen/schedule.hpp"
#include "hicogen/velocity_field.hpp"

namespace hicogen {

struct GRPOConfig {
  std::size_t group_size = 16;
  double clip_epsilon = 0.2;
  double learning_rate = 0.05;
  std::size_t iterations = 200;
  /// Groups whose reward std is at most this are treated as constant.
  double std_guard = 1e-6;
  std::size_t num_steps = 16;
  StochasticitySchedule schedule = StochasticitySchedule::cosine_decay(0.0, 1.0);
  SamplerOptions sampler;
  /// Rescale the update when its norm exceeds this (0 disables).
  double max_grad_norm = 1.0;
  /// Steps whose transition std falls below this are left out of the
  /// surrogate like degenerate steps (0 keeps every stochastic step).
  double min_step_std = 0.01;
  /// Log-ratio magnitude beyond which step ratios are clamped.
  double max_log_ratio = 20.0;
  std::size_t workers = 1;

  void validate() const {
    if (group_size < 2) throw std::invalid_argument("GRPOConfig: group size must be >= 2");
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) throw std::invalid_argument("GRPOConfig: clip epsilon must lie in (0, 1)");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw std::invalid_argument("GRPOConfig: bad learning rate");
    if (!(std_guard > 0.0)) throw std::invalid_argument("GRPOConfig: std guard must be > 0");
    if (num_steps == 0) throw std::invalid_argument("GRPOConfig: need at least one sampling step");
    if (!(max_grad_norm >= 0.0)) throw std::invalid_argument("GRPOConfig: max_grad_norm must be >= 0");
    if (!(min_step_std >= 0.0)) throw std::invalid_argument("GRPOConfig: min_step_std must be >= 0");
    if (!(max_log_ratio > 0.0)) throw std::invalid_argument("GRPOConfig: max_log_ratio must be > 0");
    schedule.validate();
  }
};

/// Group-standardized rewards with the population std. Groups whose std does
/// not exceed the guard map to all zeros.
inline std::vector<double> compute_advantages(std::span<const double> rewards, double guard = 1e-6) {
  if (rewards.size() < 2) throw std::invalid_argument("compute_advantages: need at least two rewards");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double std = std::sqrt(var / n);
  std::vector<double> adv(rewards.size(), 0.0);
  if (!(guard >= 0.0)) throw std::invalid_argument("compute_advantages: guard must be >= 0");
  if (!(std > guard)) return adv;
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / std;
  return adv;
}

struct RatioDiagnostics {
  std::size_t clamped = 0;
};

inline double step_ratio(double new_log_prob, double old_log_prob, double max_log_ratio = 20.0,
                         RatioDiagnostics* diag = nullptr) {
  if (!std::isfinite(new_log_prob) || !std::isfinite(old_log_prob)) {
    throw std::domain_error("step_ratio: non-finite log probability");
  }
  double d = new_log_prob - old_log_prob;
  if (std::abs(d) > max_log_ratio) {
    d = std::copysign(max_log_ratio, d);
    if (diag) ++diag->clamped;
  }
  return std::exp(d);
}

inline double clip_ratio(double ratio, double eps) { return std::clamp(ratio, 1.0 - eps, 1.0 + eps); }

/// True when min(rho A, clip(rho) A) is attained only by the clipped branch.
inline bool clipped_branch_active(double ratio, double advantage, double eps) {
  return clip_ratio(ratio, eps) * advantage < ratio * advantage;
}

inline double clipped_objective(std::span<const double> ratios, double advantage, double eps) {
  if (ratios.empty()) throw std::invalid_argument("clipped_objective: empty step list");
  if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("clipped_objective: epsilon must lie in (0, 1)");
  double acc = 0.0;
  for (double r : ratios) acc += std::min(r * advantage, clip_ratio(r, eps) * advantage);
  return acc / static_cast<double>(ratios.size());
}

/// Degenerate steps (mask true) carry no density and are skipped.
inline double clipped_objective(std::span<const double> ratios, const std::vector<bool>& degenerate,
                                double advantage, double eps) {
  std::vector<double> kept;
  for (std::size_t k = 0; k < ratios.size(); ++k) {
    if (!degenerate.at(k)) kept.push_back(ratios[k]);
  }
  return clipped_objective(kept, advantage, eps);
}

using RewardFunction = std::function<double(std::span<const double>)>;

/// Reward from the hierarchical bundle of a scorer.
inline RewardFunction hierarchical_reward(std::shared_ptr<const ScorerBackend> scorer, ScoringTask task,
                                          RewardWeights weights) {
  return [scorer = std::move(scorer), task = std::move(task), weights](std::span<const double> z) {
    return total_reward(scorer->evaluate(task, z), weights).R_total;
  };
}

struct GroupRollout {
  std::vector<Trajectory> trajectories;
  std::vector<double> rewards;
  std::vector<double> advantages;
  Vec condition;
};

inline GroupRollout rollout_group(const VelocityField& field, const StochasticitySchedule& schedule,
                                  std::span<const double> condition, const GRPOConfig& cfg,
                                  const RewardFunction& reward, std::uint64_t seed) {
  cfg.validate();
  if (!reward) throw std::invalid_argument("rollout_group: no reward function attached");
  GroupRollout g;
  g.condition.assign(condition.begin(), condition.end());
  g.trajectories.resize(cfg.group_size);
  g.rewards.assign(cfg.group_size, 0.0);
  std::mutex failure_mutex;
  std::optional<std::pair<std::size_t, std::string>> failure;
  parallel_for(cfg.group_size, cfg.workers, [&](std::size_t i) {
    g.trajectories[i] = sample_trajectory(field, condition, schedule, cfg.num_steps, derive_seed(seed, i), cfg.sampler);
    try {
      const double r = reward(g.trajectories[i].terminal);
      if (!std::isfinite(r)) throw std::domain_error("non-finite reward");
      g.rewards[i] = r;
    } catch (const std::exception& e) {
      std::lock_guard lock(failure_mutex);
      if (!failure || i < failure->first) failure.emplace(i, e.what());
    }
  });
  if (failure) throw GroupAbortError(failure->first, failure->second);
  g.advantages = compute_advantages(g.rewards, cfg.std_guard);
  return g;
}

struct SurrogateResult {
  double objective = 0.0;
  Vec gradient;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  std::size_t steps_used = 0;
  std::size_t ratios_clamped = 0;
};

/// Clipped surrogate of the current field against the group's recorded
/// (old-policy) transitions, with its parameter gradient. Each member's steps
/// are averaged, then members are averaged.
inline SurrogateResult grpo_surrogate(const VelocityField& field, const GroupRollout& group, const GRPOConfig& cfg) {
  SurrogateResult res;
  res.gradient.assign(field.parameter_count(), 0.0);
  RatioDiagnostics diag;
  std::size_t clipped = 0;
  double ratio_sum = 0.0;
  const double n = static_cast<double>(group.trajectories.size());
  VelocityField::Tape tape;
  for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
    const auto& traj = group.trajectories[i];
    const double A = group.advantages.at(i);
    if (!std::isfinite(A)) throw std::domain_error("grpo_surrogate: non-finite advantage");
    auto excluded = [&](const TrajectoryStep& st) { return st.degenerate || st.std < cfg.min_step_std; };
    std::size_t used = 0;
    for (const auto& st : traj.steps) used += excluded(st) ? 0 : 1;
    if (used == 0) continue;
    const double w = 1.0 / (n * static_cast<double>(used));
    for (const auto& st : traj.steps) {
      if (excluded(st)) continue;
      const Vec u = field.forward(st.state, st.t, group.condition, tape);
      const Vec mean = transition_mean(st.state, st.t, st.s, u, st.eta, traj.options);
      const double lp = isotropic_normal_log_density(st.next, mean, st.std);
      const double rho = step_ratio(lp, st.log_prob, cfg.max_log_ratio, &diag);
      ratio_sum += rho;
      ++res.steps_used;
      res.objective += w * std::min(rho * A, clip_ratio(rho, cfg.clip_epsilon) * A);
      if (clipped_branch_active(rho, A, cfg.clip_epsilon)) {
        ++clipped;
        continue;
      }
      if (A == 0.0) continue;
      // d logpi / du = gain * (next - mean) / std^2
      const double gain = transition_mean_velocity_gain(st.t, st.s, st.eta, traj.options);
      const double scale = w * A * rho * gain / (st.std * st.std);
      Vec grad_out(u.size());
      for (std::size_t j = 0; j < u.size(); ++j) grad_out[j] = scale * (st.next[j] - mean[j]);
      field.backward(tape, grad_out, res.gradient);
    }
  }
  if (res.steps_used > 0) {
    res.mean_ratio = ratio_sum / static_cast<double>(res.steps_used);
    res.clip_fraction = static_cast<double>(clipped) / static_cast<double>(res.steps_used);
  }
  res.ratios_clamped = diag.clamped;
  return res;
}

struct UpdateStats {
  double objective = 0.0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  double gradient_norm = 0.0;
  std::size_t ratios_clamped = 0;
};

/// One ascent step on the clipped surrogate.
inline std::pair<VelocityField, UpdateStats> grpo_update(const VelocityField& field, const GroupRollout& group,
                                                         const GRPOConfig& cfg) {
  for (double a : group.advantages) {
    if (!std::isfinite(a)) throw std::domain_error("grpo_update: non-finite advantage");
  }
  const auto s = grpo_surrogate(field, group, cfg);
  UpdateStats stats{s.objective, s.mean_ratio, s.clip_fraction, norm(s.gradient), s.ratios_clamped};
  if (!all_finite(s.gradient)) throw NonFiniteGradientError(field.parameters(), "grpo_update: non-finite gradient");
  double step = cfg.learning_rate;
  if (cfg.max_grad_norm > 0.0 && stats.gradient_norm > cfg.max_grad_norm) step *= cfg.max_grad_norm / stats.gradient_norm;
  Vec params = field.parameters();
  axpy(step, s.gradient, params);
  return {field.with_parameters(std::move(params)), stats};
}

struct DiversityMetrics {
  double mean_pairwise_distance = 0.0;
  /// Trace of the sample covariance, divided by n - 1.
  double covariance_trace = 0.0;
};

inline DiversityMetrics diversity_metrics(std::span<const Vec> samples) {
  if (samples.size() < 2) throw std::invalid_argument("diversity_metrics: need at least two samples");
  const std::size_t n = samples.size(), d = samples.front().size();
  double pair = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) pair += distance(samples[i], samples[j]);
  }
  Vec mean(d, 0.0);
  for (const auto& x : samples) axpy(1.0, x, mean);
  for (double& m : mean) m /= static_cast<double>(n);
  double tr = 0.0;
  for (const auto& x : samples) tr += squared_distance(x, mean);
  const double nn = static_cast<double>(n);
  return {pair / (nn * (nn - 1.0) / 2.0), tr / (nn - 1.0)};
}

struct IterationRecord {
  std::size_t iteration = 0;
  double mean_reward = 0.0;
  double objective = 0.0;
  double clip_fraction = 0.0;
  double mean_ratio = 0.0;
  double gradient_norm = 0.0;
  double mean_pairwise_distance = 0.0;
  double covariance_trace = 0.0;
};

inline nlohmann::json to_json(const IterationRecord& r) {
  return {{"iteration", r.iteration},
          {"mean_reward", r.mean_reward},
          {"objective", r.objective},
          {"clip_fraction", r.clip_fraction},
          {"mean_ratio", r.mean_ratio},
          {"gradient_norm", r.gradient_norm},
          {"mean_pairwise_distance", r.mean_pairwise_distance},
          {"covariance_trace", r.covariance_trace}};
}

struct GRPORun {
  VelocityField field;
  std::vector<IterationRecord> records;
};

/// Full loop: iteration k samples its group with seed derive_seed(seed, k).
inline GRPORun train_grpo(VelocityField field, std::span<const double> condition, const RewardFunction& reward,
                          const GRPOConfig& cfg, std::uint64_t seed,
                          const std::function<void(const IterationRecord&)>& on_iteration = {}) {
  cfg.validate();
  GRPORun run{std::move(field), {}};
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const auto group = rollout_group(run.field, cfg.schedule, condition, cfg, reward, derive_seed(seed, it));
    auto [next, stats] = grpo_update(run.field, group, cfg);
    IterationRecord rec;
    rec.iteration = it;
    for (double r : group.rewards) rec.mean_reward += r;
    rec.mean_reward /= static_cast<double>(group.rewards.size());
    rec.objective = stats.objective;
    rec.clip_fraction = stats.clip_fraction;
    rec.mean_ratio = stats.mean_ratio;
    rec.gradient_norm = stats.gradient_norm;
    std::vector<Vec> terminals;
    for (const auto& t : group.trajectories) terminals.push_back(t.terminal);
    const auto div = diversity_metrics(terminals);
    rec.mean_pairwise_distance = div.mean_pairwise_distance;
    rec.covariance_trace = div.covariance_trace;
    run.records.push_back(rec);
    if (on_iteration) on_iteration(rec);
    run.field = std::move(next);
  }
  return run;
}

/// Reward exp(-|z - target|^2 / 2).
inline RewardFunction target_mode_reward(Vec target) {
  return [target = std::move(target)](std::span<const double> z) {
    return std::exp(-0.5 * squared_distance(z, target));
  };
}

/// First iteration at which the trailing `window` mean reward reaches
/// `factor` times the mean of the first `window` iterations.
inline std::optional<std::size_t> iterations_to_threshold(const std::vector<IterationRecord>& recs, double factor,
                                                          std::size_t window = 10) {
  if (recs.size() < window) return std::nullopt;
  double base = 0.0;
  for (std::size_t k = 0; k < window; ++k) base += recs[k].mean_reward;
  base /= static_cast<double>(window);
  double rolling = 0.0;
  for (std::size_t k = 0; k < recs.size(); ++k) {
    rolling += recs[k].mean_reward;
    if (k >= window) rolling -= recs[k - window].mean_reward;
    if (k + 1 >= window && rolling / static_cast<double>(window) >= factor * base) return k;
  }
  return std::nullopt;
}

}  // namespace hicogen

#pragma once

// Linearized analysis of terminal sample diversity. Perturbations around the
// mean generation path follow, as s runs from the horizon T down to 0,
//
//   d(delta) = -lambda(s) delta |ds| + g(s) eta(s) dW,
//
// so the terminal covariance trace is
//
//   Tr Sigma_0 = int_0^T W(s) eta(s)^2 ds,   W(s) = d g(s)^2 exp(-2 int_0^s lambda).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hicogen/parallel.hpp"
#include "hicogen/quadrature.hpp"
#include "hicogen/rng.hpp"
#include "hicogen/schedule.hpp"

namespace hicogen {

struct LinearSDEModel {
  std::size_t dim = 1;
  /// lambda(s); positive values shrink perturbations as generation proceeds.
  std::function<double(double)> contraction_rate;
  std::function<double(double)> diffusion;
  double horizon = 1.0;
  std::string name;
  /// Optional closed form of int_0^s lambda.
  std::function<double(double)> integrated_rate;

  static LinearSDEModel constant(double lambda, double g, double horizon = 1.0, std::size_t dim = 1) {
    LinearSDEModel m;
    m.dim = dim;
    m.contraction_rate = [lambda](double) { return lambda; };
    m.diffusion = [g](double) { return g; };
    m.integrated_rate = [lambda](double s) { return lambda * s; };
    m.horizon = horizon;
    m.name = "constant(lambda=" + std::to_string(lambda) + ",g=" + std::to_string(g) + ")";
    return m;
  }

  /// lambda = 0.5, g(s)^2 = s on [0, 1]: W(s) = s exp(-s).
  static LinearSDEModel shipped() {
    LinearSDEModel m;
    m.contraction_rate = [](double) { return 0.5; };
    m.diffusion = [](double s) { return std::sqrt(std::max(0.0, s)); };
    m.integrated_rate = [](double s) { return 0.5 * s; };
    m.name = "shipped(lambda=0.5,g^2=s)";
    return m;
  }

  void validate() const {
    if (dim == 0) throw std::invalid_argument("LinearSDEModel: dim must be >= 1");
    if (!contraction_rate || !diffusion) throw std::invalid_argument("LinearSDEModel: rate and diffusion required");
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw std::invalid_argument("LinearSDEModel: horizon must be > 0");
  }

  double cumulative_rate(double s) const {
    if (integrated_rate) return integrated_rate(s);
    return adaptive_simpson(contraction_rate, 0.0, s, 1e-13);
  }

  double weight(double s) const {
    const double g = diffusion(s);
    const double w = static_cast<double>(dim) * g * g * std::exp(-2.0 * cumulative_rate(s));
    if (!std::isfinite(w)) throw std::domain_error("LinearSDEModel: non-finite weight at s=" + std::to_string(s));
    return w;
  }
};

namespace detail {

/// Uniform grid cells refined at the schedule's discontinuities.
inline std::vector<double> lyapunov_cells(double horizon, std::size_t grid_size, std::vector<double> breaks) {
  std::vector<double> pts;
  for (std::size_t k = 0; k <= grid_size; ++k) {
    pts.push_back(k == grid_size ? horizon : horizon * static_cast<double>(k) / static_cast<double>(grid_size));
  }
  for (double b : breaks) {
    if (b > 0.0 && b < horizon) pts.push_back(b);
  }
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  return pts;
}

/// lambda at s with a finiteness check.
inline void check_model_point(const LinearSDEModel& m, double s) {
  if (!std::isfinite(m.contraction_rate(s)) || !std::isfinite(m.diffusion(s))) {
    throw std::domain_error("LinearSDEModel: non-finite lambda or g at s=" + std::to_string(s));
  }
}

}  // namespace detail

struct LyapunovResult {
  std::vector<double> grid;
  std::vector<double> W_values;
  std::vector<double> eta_values;
  double Sigma0_trace = 0.0;
  StochasticitySchedule schedule;
};

/// Tr Sigma_0 by composite five-point Gauss-Legendre over grid cells split at
/// the schedule's jumps.
inline LyapunovResult propagate_lyapunov(const LinearSDEModel& model, const StochasticitySchedule& schedule,
                                         std::size_t grid_size) {
  model.validate();
  schedule.validate();
  if (grid_size < 16) throw std::invalid_argument("propagate_lyapunov: grid_size must be >= 16");
  if (std::abs(schedule.t_max - model.horizon) > 1e-12 * model.horizon) {
    throw std::invalid_argument("propagate_lyapunov: schedule horizon differs from model horizon");
  }
  LyapunovResult r;
  r.schedule = schedule;
  const auto cells = detail::lyapunov_cells(model.horizon, grid_size, schedule.breakpoints());
  auto integrand = [&](double s) {
    const double e = eta_at(schedule, s);
    return e * e * model.weight(s);
  };
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < cells.size(); ++k) total += gauss_legendre5(integrand, cells[k], cells[k + 1]);
  for (std::size_t k = 0; k <= grid_size; ++k) {
    const double s = k == grid_size ? model.horizon
                                    : model.horizon * static_cast<double>(k) / static_cast<double>(grid_size);
    detail::check_model_point(model, s);
    r.grid.push_back(s);
    r.W_values.push_back(model.weight(s));
    r.eta_values.push_back(eta_at(schedule, s));
  }
  if (!std::isfinite(total)) throw std::domain_error("propagate_lyapunov: non-finite trace");
  r.Sigma0_trace = total;
  return r;
}

/// Integrates the scalar variance ODE backward from P(T) = 0 with RK4.
/// Independent of propagate_lyapunov; used as a cross-check.
inline double lyapunov_ode_trace(const LinearSDEModel& model, const StochasticitySchedule& schedule,
                                 std::size_t steps) {
  model.validate();
  const double h = model.horizon / static_cast<double>(steps);
  auto rhs = [&](double s, double P) {
    // dP/d(-s) = -2 lambda P + d g^2 eta^2
    const double g = model.diffusion(s), e = eta_at(schedule, s);
    return -2.0 * model.contraction_rate(s) * P + static_cast<double>(model.dim) * g * g * e * e;
  };
  double P = 0.0;
  for (std::size_t k = steps; k > 0; --k) {
    const double s = model.horizon * static_cast<double>(k) / static_cast<double>(steps);
    const double k1 = rhs(s, P);
    const double k2 = rhs(std::max(0.0, s - 0.5 * h), P + 0.5 * h * k1);
    const double k3 = rhs(std::max(0.0, s - 0.5 * h), P + 0.5 * h * k2);
    const double k4 = rhs(std::max(0.0, s - h), P + h * k3);
    P += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return P;
}

enum class Monotonicity { Increasing, Decreasing, Flat, NonMonotone };

inline const char* to_string(Monotonicity m) {
  switch (m) {
    case Monotonicity::Increasing: return "increasing";
    case Monotonicity::Decreasing: return "decreasing";
    case Monotonicity::Flat: return "flat";
    case Monotonicity::NonMonotone: return "non-monotone";
  }
  return "?";
}

struct WeightTable {
  std::vector<double> s;
  std::vector<double> W;
  /// Shape in s; "increasing in s" means decreasing along generation order.
  Monotonicity monotonicity = Monotonicity::NonMonotone;
};

inline Monotonicity classify_monotonicity(const std::vector<double>& v, double rel_tol = 1e-9) {
  double scale = 0.0;
  for (double x : v) scale = std::max(scale, std::abs(x));
  const double tol = rel_tol * std::max(scale, 1e-300);
  bool up = true, down = true, flat = true;
  for (std::size_t k = 1; k < v.size(); ++k) {
    const double d = v[k] - v[k - 1];
    if (d < -tol) up = false;
    if (d > tol) down = false;
    if (std::abs(v[k] - v[0]) > tol) flat = false;
  }
  if (flat) return Monotonicity::Flat;
  if (up) return Monotonicity::Increasing;
  if (down) return Monotonicity::Decreasing;
  return Monotonicity::NonMonotone;
}

inline WeightTable weight_function(const LinearSDEModel& model, std::size_t grid_size) {
  model.validate();
  if (grid_size < 16) throw std::invalid_argument("weight_function: grid_size must be >= 16");
  WeightTable t;
  for (std::size_t k = 0; k <= grid_size; ++k) {
    const double s = k == grid_size ? model.horizon
                                    : model.horizon * static_cast<double>(k) / static_cast<double>(grid_size);
    detail::check_model_point(model, s);
    t.s.push_back(s);
    t.W.push_back(model.weight(s));
  }
  t.monotonicity = classify_monotonicity(t.W);
  return t;
}

enum class AllocationFamily { FreeBins, MonotoneDecreasingBins, CosineFamily };

inline const char* to_string(AllocationFamily f) {
  switch (f) {
    case AllocationFamily::FreeBins: return "free-bins";
    case AllocationFamily::MonotoneDecreasingBins: return "monotone-decreasing-bins";
    case AllocationFamily::CosineFamily: return "cosine-family";
  }
  return "?";
}

inline AllocationFamily allocation_family_from_string(const std::string& s) {
  if (s == "free-bins") return AllocationFamily::FreeBins;
  if (s == "monotone-decreasing-bins") return AllocationFamily::MonotoneDecreasingBins;
  if (s == "cosine-family") return AllocationFamily::CosineFamily;
  throw std::invalid_argument("unknown allocation family '" + s + "'");
}

struct AllocationCandidate {
  StochasticitySchedule schedule;
  double trace = 0.0;
};

struct AllocationResult {
  StochasticitySchedule best;
  double trace = 0.0;
  std::vector<AllocationCandidate> candidates;
};

inline constexpr std::size_t kAllocationGrid = 512;

/// Equal-width bins in ascending s; value k is eta^2 on bin k.
inline StochasticitySchedule bin_schedule(const std::vector<double>& eta_sq, double horizon) {
  return StochasticitySchedule::from_squared_bins(eta_sq, horizon);
}

/// Maximizes Tr Sigma_0 over a schedule family at fixed budget C.
/// Bin families are searched over their extreme points (the objective is
/// linear in eta^2); the cosine family is swept over eta_min / eta_max.
inline AllocationResult optimize_allocation(const LinearSDEModel& model, double budget, std::size_t K,
                                            AllocationFamily family) {
  model.validate();
  if (!(budget > 0.0) || !std::isfinite(budget)) throw std::invalid_argument("optimize_allocation: infeasible budget");
  std::vector<StochasticitySchedule> cands;
  const double T = model.horizon;
  if (family == AllocationFamily::CosineFamily) {
    for (int i = 0; i <= 20; ++i) {
      const double ratio = i / 20.0;
      cands.push_back(scaled_to_budget(StochasticitySchedule::cosine_decay(ratio, 1.0, T), budget));
    }
  } else {
    if (K < 2 || K > 16) throw std::invalid_argument("optimize_allocation: K must lie in [2, 16]");
    const double width = T / static_cast<double>(K);
    for (std::size_t j = 0; j < K; ++j) {
      std::vector<double> x(K, 0.0);
      if (family == AllocationFamily::FreeBins) {
        x[j] = budget / width;
      } else {
        // eta^2 non-decreasing in s: all budget spread over bins j..K-1.
        for (std::size_t k = j; k < K; ++k) x[k] = budget / (width * static_cast<double>(K - j));
      }
      cands.push_back(bin_schedule(x, T));
    }
  }
  AllocationResult r;
  for (auto& c : cands) {
    const double tr = propagate_lyapunov(model, c, kAllocationGrid).Sigma0_trace;
    // Ties favour the later candidate, i.e. budget placed earlier in generation.
    if (r.candidates.empty() || tr >= r.trace) {
      r.trace = tr;
      r.best = c;
    }
    r.candidates.push_back({std::move(c), tr});
  }
  return r;
}

struct MonteCarloOptions {
  std::size_t workers = 1;
  /// Largest accepted relative gap between the scheme's exact discrete
  /// variance and the continuous value.
  double bias_tolerance = 0.01;
};

struct MonteCarloResult {
  double trace = 0.0;
  double standard_error = 0.0;
  double discretization_bias = 0.0;
};

/// Exact variance trace of the Euler-Maruyama recursion (left-point
/// coefficients), without sampling.
inline double euler_maruyama_variance(const LinearSDEModel& model, const StochasticitySchedule& schedule,
                                      std::size_t steps) {
  const double h = model.horizon / static_cast<double>(steps);
  double P = 0.0;
  for (std::size_t k = steps; k > 0; --k) {
    const double s = model.horizon * static_cast<double>(k) / static_cast<double>(steps);
    const double a = 1.0 - model.contraction_rate(s) * h;
    const double g = model.diffusion(s), e = eta_at(schedule, s);
    P = a * a * P + static_cast<double>(model.dim) * g * g * e * e * h;
  }
  return P;
}

inline MonteCarloResult monte_carlo_variance(const LinearSDEModel& model, const StochasticitySchedule& schedule,
                                             std::size_t n, std::size_t steps, std::uint64_t seed,
                                             const MonteCarloOptions& opt = {}) {
  model.validate();
  if (n < 1000) throw std::invalid_argument("monte_carlo_variance: need n >= 1000");
  if (steps == 0) throw std::invalid_argument("monte_carlo_variance: need steps >= 1");
  MonteCarloResult r;
  const double exact = propagate_lyapunov(model, schedule, 1024).Sigma0_trace;
  const double discrete = euler_maruyama_variance(model, schedule, steps);
  r.discretization_bias = exact > 0.0 ? std::abs(discrete - exact) / exact : std::abs(discrete);
  if (r.discretization_bias > opt.bias_tolerance) {
    throw std::invalid_argument("monte_carlo_variance: " + std::to_string(steps) +
                                " steps give discretization bias " + std::to_string(r.discretization_bias) +
                                " above tolerance");
  }
  const std::size_t d = model.dim;
  const double h = model.horizon / static_cast<double>(steps);
  std::vector<double> coef_a(steps), coef_b(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const double s = model.horizon * static_cast<double>(steps - k) / static_cast<double>(steps);
    coef_a[k] = 1.0 - model.contraction_rate(s) * h;
    coef_b[k] = model.diffusion(s) * eta_at(schedule, s) * std::sqrt(h);
  }
  std::vector<Vec> finals(n, Vec(d, 0.0));
  parallel_for(n, opt.workers, [&](std::size_t i) {
    Rng rng(derive_seed(seed, i));
    Vec& x = finals[i];
    for (std::size_t k = 0; k < steps; ++k) {
      for (std::size_t j = 0; j < d; ++j) {
        const double xi = rng.normal();
        x[j] = coef_a[k] * x[j] + coef_b[k] * xi;
      }
    }
  });
  Vec mean(d, 0.0);
  for (const auto& x : finals) axpy(1.0, x, mean);
  for (double& m : mean) m /= static_cast<double>(n);
  // Tr Cov = mean of squared deviations (n - 1 convention); its spread gives the error.
  double sum = 0.0, sum_sq = 0.0;
  for (const auto& x : finals) {
    const double y = squared_distance(x, mean);
    sum += y;
    sum_sq += y * y;
  }
  const double nn = static_cast<double>(n);
  r.trace = sum / (nn - 1.0);
  const double var_y = std::max(0.0, (sum_sq - sum * sum / nn) / (nn - 1.0));
  r.standard_error = std::sqrt(var_y / nn) * nn / (nn - 1.0);
  return r;
}

enum class OptimalityStatus { Holds, Violated, Flat, Inapplicable };

inline const char* to_string(OptimalityStatus s) {
  switch (s) {
    case OptimalityStatus::Holds: return "holds";
    case OptimalityStatus::Violated: return "violated";
    case OptimalityStatus::Flat: return "flat";
    case OptimalityStatus::Inapplicable: return "inapplicable";
  }
  return "?";
}

struct OptimalityReport {
  OptimalityStatus status = OptimalityStatus::Inapplicable;
  std::string message;
  Monotonicity weight_shape = Monotonicity::NonMonotone;
  /// (a) free-bins optimum non-increasing along generation order.
  bool optimum_decreasing = false;
  std::vector<double> optimum_eta_sq;
  /// (b) monotone-decreasing schedules beat their mirrors.
  bool decreasing_beats_mirror = false;
  std::size_t mirror_pairs_checked = 0;
  /// (c) cosine-decay > constant > reversed cosine at equal budget.
  bool cosine_ordering = false;
  double trace_cosine = 0.0;
  double trace_constant = 0.0;
  double trace_reversed = 0.0;
};

inline OptimalityReport verify_decreasing_optimality(const LinearSDEModel& model, double budget, std::size_t K,
                                                     std::uint64_t seed = 1) {
  OptimalityReport rep;
  const auto wt = weight_function(model, kAllocationGrid);
  rep.weight_shape = wt.monotonicity;

  const double T = model.horizon;
  const auto cosine = scaled_to_budget(StochasticitySchedule::cosine_decay(0.0, 1.0, T), budget);
  rep.trace_cosine = propagate_lyapunov(model, cosine, kAllocationGrid).Sigma0_trace;
  rep.trace_constant =
      propagate_lyapunov(model, StochasticitySchedule::constant(std::sqrt(budget / T), T), kAllocationGrid)
          .Sigma0_trace;
  rep.trace_reversed = propagate_lyapunov(model, mirrored(cosine), kAllocationGrid).Sigma0_trace;

  if (wt.monotonicity == Monotonicity::Flat) {
    rep.status = OptimalityStatus::Flat;
    rep.message = "flat weight: every allocation with the same budget ties";
    return rep;
  }
  if (wt.monotonicity != Monotonicity::Increasing) {
    rep.status = OptimalityStatus::Inapplicable;
    rep.message = std::string("inapplicable: W(s) is ") + to_string(wt.monotonicity) +
                  " in s, so the contraction regime that favours early noise is not satisfied";
    return rep;
  }

  const auto free = optimize_allocation(model, budget, K, AllocationFamily::FreeBins);
  for (const auto& b : free.best.bins) rep.optimum_eta_sq.push_back(b.value * b.value);
  rep.optimum_decreasing = true;
  for (std::size_t k = 1; k < rep.optimum_eta_sq.size(); ++k) {
    // ascending s = descending generation order
    if (rep.optimum_eta_sq[k] < rep.optimum_eta_sq[k - 1]) rep.optimum_decreasing = false;
  }

  // Extreme points of the monotone cone plus random members.
  std::vector<std::vector<double>> shapes;
  for (const auto& c : optimize_allocation(model, budget, K, AllocationFamily::MonotoneDecreasingBins).candidates) {
    std::vector<double> x;
    for (const auto& b : c.schedule.bins) x.push_back(b.value * b.value);
    shapes.push_back(x);
  }
  Rng rng(seed);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> x(K);
    for (double& v : x) v = rng.uniform();
    std::sort(x.begin(), x.end());
    double total = 0.0;
    for (double v : x) total += v * T / static_cast<double>(K);
    for (double& v : x) v *= budget / total;
    shapes.push_back(x);
  }
  rep.decreasing_beats_mirror = true;
  for (const auto& x : shapes) {
    std::vector<double> rev(x.rbegin(), x.rend());
    if (x == rev) continue;
    const double a = propagate_lyapunov(model, bin_schedule(x, T), kAllocationGrid).Sigma0_trace;
    const double b = propagate_lyapunov(model, bin_schedule(rev, T), kAllocationGrid).Sigma0_trace;
    ++rep.mirror_pairs_checked;
    if (!(a > b)) rep.decreasing_beats_mirror = false;
  }

  rep.cosine_ordering = rep.trace_cosine > rep.trace_constant && rep.trace_constant > rep.trace_reversed;
  const bool ok = rep.optimum_decreasing && rep.decreasing_beats_mirror && rep.cosine_ordering;
  rep.status = ok ? OptimalityStatus::Holds : OptimalityStatus::Violated;
  rep.message = ok ? "early-noise allocation optimal on this model" : "ordering violated";
  return rep;
}

// Tab-separated plot tables.
inline void write_weight_table(std::ostream& os, const WeightTable& t) {
  os << "s\tW\n";
  for (std::size_t k = 0; k < t.s.size(); ++k) os << t.s[k] << '\t' << t.W[k] << '\n';
}

inline void write_schedule_table(std::ostream& os, const std::vector<AllocationCandidate>& rows) {
  os << "schedule\tbudget\ttrace\n";
  for (const auto& r : rows) os << r.schedule.name() << '\t' << schedule_budget(r.schedule) << '\t' << r.trace << '\n';
}

}  // namespace hicogen

#pragma once

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hicogen/quadrature.hpp"

namespace hicogen {

enum class ScheduleKind { Constant, LinearDecay, CosineDecay, PiecewiseConstant };

inline const char* to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::Constant: return "constant";
    case ScheduleKind::LinearDecay: return "linear-decay";
    case ScheduleKind::CosineDecay: return "cosine-decay";
    case ScheduleKind::PiecewiseConstant: return "piecewise-constant";
  }
  return "?";
}

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "constant") return ScheduleKind::Constant;
  if (s == "linear-decay") return ScheduleKind::LinearDecay;
  if (s == "cosine-decay") return ScheduleKind::CosineDecay;
  if (s == "piecewise-constant") return ScheduleKind::PiecewiseConstant;
  throw std::invalid_argument("unknown schedule kind '" + s + "'");
}

/// Value of eta on [lo, hi); the last bin also covers t = t_max.
struct ScheduleBin {
  double lo = 0.0;
  double hi = 0.0;
  double value = 0.0;
  bool operator==(const ScheduleBin&) const = default;
};

/// Stochasticity multiplier eta(t) on [0, t_max]. Time runs from t_max
/// (start of generation) down to 0, so "decay" means eta(t_max) is largest.
/// A mirrored schedule evaluates eta(t_max - t), turning a decay into a ramp.
struct StochasticitySchedule {
  ScheduleKind kind = ScheduleKind::CosineDecay;
  double eta_min = 0.0;
  double eta_max = 1.0;
  double t_max = 1.0;
  std::vector<ScheduleBin> bins;
  bool mirrored = false;

  static StochasticitySchedule constant(double eta, double t_max = 1.0) {
    StochasticitySchedule s{ScheduleKind::Constant, eta, eta, t_max, {}, false};
    s.validate();
    return s;
  }
  static StochasticitySchedule linear_decay(double eta_min, double eta_max, double t_max = 1.0) {
    StochasticitySchedule s{ScheduleKind::LinearDecay, eta_min, eta_max, t_max, {}, false};
    s.validate();
    return s;
  }
  static StochasticitySchedule cosine_decay(double eta_min, double eta_max, double t_max = 1.0) {
    StochasticitySchedule s{ScheduleKind::CosineDecay, eta_min, eta_max, t_max, {}, false};
    s.validate();
    return s;
  }
  static StochasticitySchedule piecewise(std::vector<ScheduleBin> bins, double t_max = 1.0) {
    StochasticitySchedule s{ScheduleKind::PiecewiseConstant, 0.0, 0.0, t_max, std::move(bins), false};
    for (const auto& b : s.bins) s.eta_max = std::max(s.eta_max, b.value);
    s.validate();
    return s;
  }
  /// K equal-width bins with the given eta^2 values, ordered by ascending t.
  static StochasticitySchedule from_squared_bins(const std::vector<double>& eta_sq, double t_max = 1.0) {
    std::vector<ScheduleBin> bins;
    const double w = t_max / static_cast<double>(eta_sq.size());
    for (std::size_t k = 0; k < eta_sq.size(); ++k) {
      const double hi = k + 1 == eta_sq.size() ? t_max : w * static_cast<double>(k + 1);
      bins.push_back({w * static_cast<double>(k), hi, std::sqrt(std::max(0.0, eta_sq[k]))});
    }
    return piecewise(std::move(bins), t_max);
  }

  void validate() const {
    if (!(t_max > 0.0) || !std::isfinite(t_max)) throw std::invalid_argument("schedule: t_max must be > 0");
    if (kind == ScheduleKind::PiecewiseConstant) {
      double prev_hi = 0.0;
      for (const auto& b : bins) {
        if (!(b.value >= 0.0) || !std::isfinite(b.value)) throw std::invalid_argument("schedule: bin value must be >= 0");
        if (!(b.lo >= 0.0 && b.hi <= t_max && b.lo < b.hi)) throw std::invalid_argument("schedule: bin outside [0, t_max]");
        if (b.lo < prev_hi) throw std::invalid_argument("schedule: bins must be sorted and disjoint");
        prev_hi = b.hi;
      }
      return;
    }
    if (!(eta_min >= 0.0) || !std::isfinite(eta_min)) throw std::invalid_argument("schedule: eta_min must be >= 0");
    if (!(eta_max >= eta_min) || !std::isfinite(eta_max)) throw std::invalid_argument("schedule: eta_max must be >= eta_min");
  }

  std::vector<double> breakpoints() const {
    std::vector<double> pts;
    for (const auto& b : bins) {
      pts.push_back(mirrored ? t_max - b.lo : b.lo);
      pts.push_back(mirrored ? t_max - b.hi : b.hi);
    }
    return pts;
  }

  std::string name() const {
    std::ostringstream os;
    if (mirrored) os << "mirrored-";
    os << to_string(kind);
    if (kind == ScheduleKind::Constant) {
      os << '(' << eta_max << ')';
    } else if (kind == ScheduleKind::PiecewiseConstant) {
      os << '[' << bins.size() << " bins]";
    } else {
      os << '(' << eta_min << ',' << eta_max << ')';
    }
    return os.str();
  }

  bool operator==(const StochasticitySchedule&) const = default;
};

inline double eta_unmirrored(const StochasticitySchedule& s, double t) {
  switch (s.kind) {
    case ScheduleKind::Constant:
      return s.eta_max;
    case ScheduleKind::LinearDecay:
      return s.eta_min + (s.eta_max - s.eta_min) * (t / s.t_max);
    case ScheduleKind::CosineDecay:
      if (t == s.t_max) return s.eta_max;
      if (t == 0.0) return s.eta_min;
      return s.eta_min +
             0.5 * (s.eta_max - s.eta_min) * (1.0 + std::cos(std::numbers::pi * (s.t_max - t) / s.t_max));
    case ScheduleKind::PiecewiseConstant:
      for (const auto& b : s.bins) {
        if ((t >= b.lo && t < b.hi) || (t == b.hi && b.hi == s.t_max)) return b.value;
      }
      return 0.0;
  }
  return 0.0;
}

inline double eta_at(const StochasticitySchedule& s, double t) {
  if (!(t >= 0.0 && t <= s.t_max)) {
    throw std::domain_error("eta_at: t=" + std::to_string(t) + " outside [0, " + std::to_string(s.t_max) + "]");
  }
  return eta_unmirrored(s, s.mirrored ? s.t_max - t : t);
}

/// Integral of eta(t)^2 over [0, t_max].
inline double schedule_budget(const StochasticitySchedule& s) {
  s.validate();
  auto f = [&](double t) {
    const double e = eta_at(s, t);
    return e * e;
  };
  return integrate_piecewise(f, 0.0, s.t_max, s.breakpoints(), 1e-14);
}

inline StochasticitySchedule mirrored(StochasticitySchedule s) {
  s.mirrored = !s.mirrored;
  return s;
}

/// Rescales eta so that the budget equals `budget`.
inline StochasticitySchedule scaled_to_budget(StochasticitySchedule s, double budget) {
  if (!(budget > 0.0) || !std::isfinite(budget)) throw std::invalid_argument("scaled_to_budget: budget must be > 0");
  const double current = schedule_budget(s);
  if (!(current > 0.0)) throw std::invalid_argument("scaled_to_budget: schedule has zero budget");
  const double f = std::sqrt(budget / current);
  s.eta_min *= f;
  s.eta_max *= f;
  for (auto& b : s.bins) b.value *= f;
  return s;
}

}  // namespace hicogen

#pragma once

#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hicogen/embedding.hpp"
#include "hicogen/linalg.hpp"
#include "hicogen/rng.hpp"

namespace hicogen {

/// Isotropic Gaussian mixture with equal weights; each mode carries a
/// concept label used for conditioning.
struct SyntheticDomain {
  struct Mode {
    Vec mean;
    double std = 1.0;
    std::string label;
  };

  std::size_t dim = 2;
  std::vector<Mode> modes;

  void validate() const {
    if (dim == 0) throw std::invalid_argument("SyntheticDomain: dim must be >= 1");
    if (modes.empty()) throw std::invalid_argument("SyntheticDomain: needs at least one mode");
    std::set<std::string> labels;
    for (const auto& m : modes) {
      if (m.mean.size() != dim) throw std::invalid_argument("SyntheticDomain: mode dimension mismatch");
      if (!(m.std > 0.0)) throw std::invalid_argument("SyntheticDomain: mode std must be > 0");
      if (!labels.insert(m.label).second) {
        throw std::invalid_argument("SyntheticDomain: duplicate label '" + m.label + "'");
      }
    }
  }

  /// Draws (z0, mode index).
  std::pair<Vec, std::size_t> sample(Rng& rng) const {
    const std::size_t k = rng.index(modes.size());
    Vec z(dim);
    for (std::size_t i = 0; i < dim; ++i) z[i] = modes[k].mean[i] + modes[k].std * rng.normal();
    return {std::move(z), k};
  }

  /// Nearest mode and the distance to it in units of that mode's std.
  std::pair<std::size_t, double> nearest_mode(std::span<const double> z) const {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t k = 0; k < modes.size(); ++k) {
      const double d = distance(z, modes[k].mean) / modes[k].std;
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    return {best, best_d};
  }

  /// Label embedding rescaled to unit-variance components, the scale the
  /// network's other inputs live on.
  Vec condition(std::size_t mode, std::size_t cond_dim, std::uint64_t seed = kDefaultEmbeddingSeed) const {
    Vec v = label_embedding(modes.at(mode).label, cond_dim, seed);
    const double s = std::sqrt(static_cast<double>(cond_dim));
    for (double& x : v) x *= s;
    return v;
  }

  static SyntheticDomain gaussian(std::size_t dim, double sigma) {
    SyntheticDomain d{dim, {{Vec(dim, 0.0), sigma, "gaussian"}}};
    d.validate();
    return d;
  }

  static SyntheticDomain ring(std::size_t modes, double radius, double std) {
    SyntheticDomain d;
    d.dim = 2;
    for (std::size_t k = 0; k < modes; ++k) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(modes);
      d.modes.push_back({{radius * std::cos(a), radius * std::sin(a)}, std, "mode-" + std::to_string(k)});
    }
    d.validate();
    return d;
  }
};

/// Exact E[eps - z0 | z_t = z] for the full mixture (uniform weights).
inline Vec mixture_velocity(const SyntheticDomain& domain, std::span<const double> z, double t) {
  const std::size_t K = domain.modes.size();
  std::vector<double> logw(K);
  std::vector<Vec> uk(K);
  double maxw = -INFINITY;
  for (std::size_t k = 0; k < K; ++k) {
    const auto& m = domain.modes[k];
    const double var = (1.0 - t) * (1.0 - t) * m.std * m.std + t * t;
    const double coef = (t - (1.0 - t) * m.std * m.std) / var;
    double sq = 0.0;
    uk[k].resize(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double dev = z[i] - (1.0 - t) * m.mean[i];
      sq += dev * dev;
      uk[k][i] = coef * dev - m.mean[i];
    }
    logw[k] = -0.5 * sq / var - 0.5 * static_cast<double>(z.size()) * std::log(var);
    maxw = std::max(maxw, logw[k]);
  }
  Vec u(z.size(), 0.0);
  double total = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const double w = std::exp(logw[k] - maxw);
    total += w;
    axpy(w, uk[k], u);
  }
  for (double& x : u) x /= total;
  return u;
}

}  // namespace hicogen

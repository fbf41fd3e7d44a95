#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "hicogen/domain.hpp"
#include "hicogen/errors.hpp"
#include "hicogen/flow.hpp"
#include "hicogen/parallel.hpp"
#include "hicogen/velocity_field.hpp"

namespace hicogen {

struct FlowSample {
  Vec z0;
  Vec eps;
  double t = 0.5;
  Vec cond;
};

struct LossAndGradient {
  double loss = 0.0;
  Vec gradient;
};

/// Samples per gradient-accumulation chunk. The partition is fixed so the
/// reduction order, and hence the result, is independent of worker count.
inline constexpr std::size_t kGradientChunk = 32;

/// Mean squared error of the field against u = eps - z0 and its exact
/// parameter gradient.
inline LossAndGradient flow_matching_loss(const VelocityField& field, std::span<const FlowSample> batch,
                                          std::size_t workers = 1) {
  if (batch.empty()) throw std::invalid_argument("flow_matching_loss: empty batch");
  const std::size_t P = field.parameter_count();
  const std::size_t chunks = (batch.size() + kGradientChunk - 1) / kGradientChunk;
  std::vector<Vec> grads(chunks, Vec(P, 0.0));
  std::vector<double> losses(chunks, 0.0);
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  parallel_for(chunks, workers, [&](std::size_t c) {
    VelocityField::Tape tape;
    const std::size_t lo = c * kGradientChunk;
    const std::size_t hi = std::min(batch.size(), lo + kGradientChunk);
    for (std::size_t i = lo; i < hi; ++i) {
      const FlowSample& s = batch[i];
      require_same_dim(s.z0, s.eps, "flow_matching_loss");
      const Vec zt = forward_noise(s.z0, s.eps, s.t);
      const Vec out = field.forward(zt, s.t, s.cond, tape);
      Vec g(out.size());
      double sq = 0.0;
      for (std::size_t k = 0; k < out.size(); ++k) {
        const double r = out[k] - (s.eps[k] - s.z0[k]);
        sq += r * r;
        g[k] = 2.0 * r * inv_n;
      }
      losses[c] += sq;
      field.backward(tape, g, grads[c]);
    }
  });

  LossAndGradient result{0.0, Vec(P, 0.0)};
  for (std::size_t c = 0; c < chunks; ++c) {
    result.loss += losses[c];
    axpy(1.0, grads[c], result.gradient);
  }
  result.loss *= inv_n;
  return result;
}

struct TrainingConfig {
  std::size_t steps = 4000;
  double learning_rate = 0.05;
  std::size_t batch_size = 128;
  std::uint64_t seed = 1;
  /// Probability of replacing the mode condition by the null (all-zero)
  /// condition, so one field serves conditional and unconditional sampling.
  double p_uncond = 0.0;
  std::size_t heldout_size = 2048;
  std::optional<double> loss_threshold;
  std::size_t log_every = 50;
  std::uint64_t embedding_seed = kDefaultEmbeddingSeed;
  std::size_t workers = 1;
};

struct LossRecord {
  std::size_t step = 0;
  double loss = 0.0;
};

struct TrainResult {
  VelocityField field;
  std::vector<LossRecord> log;
  double heldout_loss = 0.0;
};

/// Training pairs for a domain: uniform mode, t ~ U[t_min, 1].
inline std::vector<FlowSample> draw_flow_batch(const SyntheticDomain& domain, std::size_t cond_dim,
                                               std::size_t n, Rng& rng, double p_uncond,
                                               std::uint64_t embedding_seed) {
  std::vector<FlowSample> batch(n);
  for (auto& s : batch) {
    auto [z0, k] = domain.sample(rng);
    s.z0 = std::move(z0);
    s.eps = rng.normal_vector(domain.dim);
    s.t = kTimeMin + (1.0 - kTimeMin) * rng.uniform();
    const bool drop = p_uncond > 0.0 && rng.uniform() < p_uncond;
    s.cond = drop ? Vec(cond_dim, 0.0) : domain.condition(k, cond_dim, embedding_seed);
  }
  return batch;
}

/// Plain fixed-step SGD on the flow-matching loss.
inline TrainResult train_velocity_field(const SyntheticDomain& domain, const FieldArchitecture& arch,
                                        const TrainingConfig& cfg) {
  domain.validate();
  if (arch.state_dim != domain.dim) throw std::invalid_argument("train_velocity_field: architecture/domain dimension mismatch");
  if (cfg.batch_size == 0 || cfg.steps == 0) throw std::invalid_argument("train_velocity_field: steps and batch_size must be > 0");
  if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("train_velocity_field: learning rate must be > 0");

  VelocityField field = VelocityField::initialized(arch, derive_seed(cfg.seed, 0));
  Rng data_rng(derive_seed(cfg.seed, 1));
  Rng heldout_rng(derive_seed(cfg.seed, 2));
  const auto heldout = draw_flow_batch(domain, arch.cond_dim, cfg.heldout_size, heldout_rng, cfg.p_uncond,
                                       cfg.embedding_seed);
  std::vector<LossRecord> log;
  Vec params = field.parameters();
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto batch = draw_flow_batch(domain, arch.cond_dim, cfg.batch_size, data_rng, cfg.p_uncond,
                                       cfg.embedding_seed);
    const auto lg = flow_matching_loss(field, batch, cfg.workers);
    if (!std::isfinite(lg.loss) || !all_finite(lg.gradient)) throw DivergenceError(step, "non-finite loss");
    if (cfg.log_every > 0 && step % cfg.log_every == 0) log.push_back({step, lg.loss});
    axpy(-cfg.learning_rate, lg.gradient, params);
    field.set_parameters(params);
  }
  const double heldout_loss = flow_matching_loss(field, heldout, cfg.workers).loss;
  if (!std::isfinite(heldout_loss)) throw DivergenceError(cfg.steps, "non-finite held-out loss");
  if (cfg.loss_threshold && heldout_loss > *cfg.loss_threshold) {
    throw std::runtime_error("train_velocity_field: held-out loss " + std::to_string(heldout_loss) +
                             " above threshold " + std::to_string(*cfg.loss_threshold));
  }
  log.push_back({cfg.steps, heldout_loss});
  return {std::move(field), std::move(log), heldout_loss};
}

/// Shipped 8-mode ring setup used by pretraining, RL and the diversity study.
inline SyntheticDomain default_ring_domain() { return SyntheticDomain::ring(8, 4.0, 0.5); }

inline FieldArchitecture default_ring_architecture() { return {2, 8, {64, 64}, Activation::Tanh}; }

inline TrainingConfig default_ring_training() {
  TrainingConfig cfg;
  cfg.steps = 8000;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 128;
  cfg.seed = 3;
  cfg.p_uncond = 0.3;
  return cfg;
}

}  // namespace hicogen

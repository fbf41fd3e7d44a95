// Acceptance suite: one PASS/FAIL line per criterion with pinned tolerances.
// Exit status is non-zero when any criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_set>

#include "hicogen/bench.hpp"
#include "hicogen/chain.hpp"
#include "hicogen/flow.hpp"
#include "hicogen/grpo.hpp"
#include "hicogen/lyapunov.hpp"
#include "hicogen/reward.hpp"
#include "hicogen/sampler.hpp"
#include "hicogen/schedule.hpp"
#include "hicogen/training.hpp"

using namespace hicogen;

namespace {

const std::size_t kWorkers = std::max(1u, std::thread::hardware_concurrency());

// Collects failed sub-checks of one criterion.
struct Check {
  std::vector<std::string> failures;
  std::ostringstream notes;

  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  void near(double got, double want, double tol, const std::string& what) {
    if (!(std::abs(got - want) <= tol)) {
      std::ostringstream os;
      os << what << ": got " << got << ", want " << want << " +- " << tol;
      failures.push_back(os.str());
    }
  }
};

int failed = 0;

void criterion(int id, const std::string& name, double budget_seconds, const std::function<void(Check&)>& body) {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(c);
  } catch (const std::exception& e) {
    c.failures.push_back(std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > budget_seconds) c.failures.push_back("runtime " + std::to_string(secs) + " s over budget");
  const bool ok = c.failures.empty();
  if (!ok) ++failed;
  std::printf("%s [%2d] %s (%.1f s)", ok ? "PASS" : "FAIL", id, name.c_str(), secs);
  const auto notes = c.notes.str();
  if (!notes.empty()) std::printf(" | %s", notes.c_str());
  std::printf("\n");
  for (const auto& f : c.failures) std::printf("       - %s\n", f.c_str());
  std::fflush(stdout);
}

struct GaussianOracle {
  double sigma = 1.0;
  Vec operator()(std::span<const double> z, double t) const { return analytic_gaussian_velocity(z, t, sigma); }
};

// Pretrained ring field shared by criteria 6 and 7.
const VelocityField& ring_field() {
  static const VelocityField f = [] {
    auto cfg = default_ring_training();
    cfg.workers = kWorkers;
    return train_velocity_field(default_ring_domain(), default_ring_architecture(), cfg).field;
  }();
  return f;
}

GRPORun rl_run(const StochasticitySchedule& s) {
  GRPOConfig cfg;
  cfg.schedule = s;
  cfg.workers = kWorkers;
  const Vec null_condition(default_ring_architecture().cond_dim, 0.0);
  return train_grpo(ring_field(), null_condition, target_mode_reward(default_ring_domain().modes[0].mean), cfg, 1);
}

double window_mean(const std::vector<IterationRecord>& r, std::size_t from, std::size_t n) {
  double a = 0.0;
  for (std::size_t k = from; k < from + n; ++k) a += r[k].mean_reward;
  return a / static_cast<double>(n);
}

std::optional<GRPORun> g_cosine_run, g_constant_run;

}  // namespace

int main() {
  criterion(1, "schedule identities", 1.0, [](Check& c) {
    for (auto [lo, hi, T] : {std::tuple{0.0, 1.0, 1.0}, {0.2, 0.9, 1.0}, {0.1, 2.5, 3.0}}) {
      const auto s = StochasticitySchedule::cosine_decay(lo, hi, T);
      c.near(eta_at(s, T), hi, 1e-12, "eta(T_max)");
      c.near(eta_at(s, 0.0), lo, 1e-12, "eta(0)");
      c.near(eta_at(s, T / 2), (hi + lo) / 2, 1e-12, "eta(T_max/2)");
    }
    const double b = schedule_budget(StochasticitySchedule::cosine_decay(0.0, 1.0));
    c.near(b, 0.375, 1e-6, "cosine budget");
    c.notes << "budget " << b;
  });

  criterion(2, "ODE-limit equivalence", 10.0, [](Check& c) {
    const GaussianOracle g{0.7};
    const auto net = VelocityField::initialized({3, 2, {16, 16}, Activation::Tanh}, 5);
    const Vec cond{0.3, -1.0};
    const auto zero = StochasticitySchedule::constant(0.0);
    std::size_t compared = 0;
    for (std::size_t n : {16u, 200u}) {
      for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto a = sample_trajectory(g, 3, zero, n, seed);
        c.expect(a.terminal == sample_ode(g, a.steps.front().state, n), "analytic field, " + std::to_string(n) + " steps");
        const auto b = sample_trajectory(net, cond, zero, n, seed);
        c.expect(b.terminal == sample_ode(ConditionedField{&net, cond}, b.steps.front().state, n),
                 "network field, " + std::to_string(n) + " steps");
        compared += 2;
      }
    }
    c.notes << compared << " trajectories bitwise equal";
  });

  criterion(3, "marginal preservation", 60.0, [](Check& c) {
    const GaussianOracle field{1.0};
    for (const auto& sched : {StochasticitySchedule::constant(0.0), StochasticitySchedule::constant(0.5),
                              StochasticitySchedule::constant(1.0), StochasticitySchedule::cosine_decay(0.0, 1.0)}) {
      const std::size_t n = 10000;
      std::vector<Vec> xs(n);
      parallel_for(n, kWorkers, [&](std::size_t i) { xs[i] = sample_trajectory(field, 2, sched, 200, derive_seed(77, i)).terminal; });
      Vec mean(2, 0.0);
      for (const auto& x : xs) axpy(1.0 / n, x, mean);
      double cov[2][2] = {};
      for (const auto& x : xs) {
        for (int i = 0; i < 2; ++i) {
          for (int j = 0; j < 2; ++j) cov[i][j] += (x[i] - mean[i]) * (x[j] - mean[j]) / n;
        }
      }
      double err = 0.0;
      for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) err += std::pow(cov[i][j] - (i == j ? 1.0 : 0.0), 2);
      }
      const double rel = std::sqrt(err) / std::sqrt(2.0);
      c.expect(norm(mean) < 0.05, sched.name() + ": |mean| = " + std::to_string(norm(mean)));
      c.expect(rel < 0.10, sched.name() + ": covariance error " + std::to_string(rel));
      c.notes << sched.name() << " |m|=" << std::setprecision(3) << norm(mean) << " cov=" << rel << "; ";
    }
  });

  criterion(4, "Lyapunov diversity mechanism", 120.0, [](Check& c) {
    const auto m = LinearSDEModel::shipped();
    const double constant = propagate_lyapunov(m, StochasticitySchedule::constant(1.0), 1024).Sigma0_trace;
    const auto two = optimize_allocation(m, 1.0, 2, AllocationFamily::FreeBins);
    c.near(constant, 0.26424, 1e-3, "constant schedule trace");
    c.near(two.trace, 0.34810, 1e-3, "2-bin optimum trace");
    c.expect(two.best.bins.size() == 2 && two.best.bins[0].value == 0.0, "2-bin optimum must put its budget early in generation");
    const auto rep = verify_decreasing_optimality(m, 1.0, 8);
    c.expect(rep.optimum_decreasing, "K=8 optimum is not non-increasing along generation");
    c.expect(rep.trace_cosine > rep.trace_constant && rep.trace_constant > rep.trace_reversed,
             "cosine > constant > reversed ordering");
    const auto cosine = scaled_to_budget(StochasticitySchedule::cosine_decay(0.0, 1.0), 1.0);
    int seed = 0;
    for (const auto& s : {StochasticitySchedule::constant(1.0), cosine, mirrored(cosine), two.best}) {
      const double ly = propagate_lyapunov(m, s, 1024).Sigma0_trace;
      const auto mc = monte_carlo_variance(m, s, 20000, 400, derive_seed(4, ++seed), {.workers = kWorkers});
      c.expect(std::abs(mc.trace - ly) <= 0.05 * ly, "Monte Carlo " + s.name() + ": " + std::to_string(mc.trace) +
                                                           " vs " + std::to_string(ly));
    }
    c.notes << std::setprecision(6) << "constant " << constant << ", 2-bin " << two.trace << ", cosine "
            << rep.trace_cosine << ", reversed " << rep.trace_reversed;
  });

  criterion(5, "GRPO algebra", 60.0, [](Check& c) {
    const auto a = compute_advantages(std::vector<double>{1, 2, 3}, 0.0);
    const double e = std::sqrt(1.5);
    c.near(a[0], -e, 1e-12, "advantage[0] of {1,2,3}");
    c.near(a[1], 0.0, 1e-12, "advantage[1] of {1,2,3}");
    c.near(a[2], e, 1e-12, "advantage[2] of {1,2,3}");
    const auto b = compute_advantages(std::vector<double>{0.0, 0.0, 0.0, 4.0}, 0.0);
    c.near(b[3], 3.0 / std::sqrt(3.0), 1e-12, "advantage of the outlier in {0,0,0,4}");
    c.near(b[0], -1.0 / std::sqrt(3.0), 1e-12, "advantage of a zero in {0,0,0,4}");
    c.near(clipped_objective(std::vector<double>{1.5}, 1.0, 0.2), 1.2, 1e-12, "clip r=1.5 A=+1");
    c.near(clipped_objective(std::vector<double>{0.5}, -1.0, 0.2), -0.8, 1e-12, "clip r=0.5 A=-1");
    c.near(clipped_objective(std::vector<double>{1.5}, -1.0, 0.2), -1.5, 1e-12, "clip r=1.5 A=-1");
    c.near(clipped_objective(std::vector<double>{0.5}, 1.0, 0.2), 0.5, 1e-12, "clip r=0.5 A=+1");
    c.near(clipped_objective(std::vector<double>{1.1, 0.9}, 2.0, 0.2), 2.0, 1e-12, "unclipped mean");

    Rng rng(5);
    for (int g = 0; g < 100; ++g) {
      std::vector<double> r(2 + rng.index(30));
      for (double& x : r) x = std::exp(3 * rng.normal()) * rng.normal() + 5 * rng.normal();
      const auto adv = compute_advantages(r);
      const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / adv.size();
      double var = 0.0;
      for (double x : adv) var += (x - mean) * (x - mean);
      const double sd = std::sqrt(var / adv.size());
      c.expect(std::abs(mean) < 1e-9, "advantage mean " + std::to_string(mean));
      c.expect(std::abs(sd - 1.0) < 1e-6, "advantage std " + std::to_string(sd));
    }

    GRPOConfig cfg;
    cfg.group_size = 6;
    cfg.num_steps = 4;
    cfg.schedule = StochasticitySchedule::constant(0.8);
    cfg.min_step_std = 0.0;
    cfg.max_grad_norm = 0.0;
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      const auto old = VelocityField::initialized({2, 0, {8}, Activation::Tanh}, 100 + trial);
      const auto grp = rollout_group(old, cfg.schedule, {}, cfg, target_mode_reward({0.5, -0.5}), 50 + trial);
      Vec p = old.parameters();
      for (double& x : p) x += 0.02 * rng.normal();
      const auto cur = old.with_parameters(p);
      const auto s = grpo_surrogate(cur, grp, cfg);
      Vec fd(p.size());
      for (std::size_t k = 0; k < p.size(); ++k) {
        Vec pp = p, pm = p;
        pp[k] += 1e-6;
        pm[k] -= 1e-6;
        fd[k] = (grpo_surrogate(cur.with_parameters(pp), grp, cfg).objective -
                 grpo_surrogate(cur.with_parameters(pm), grp, cfg).objective) / 2e-6;
      }
      Vec diff(fd);
      axpy(-1.0, s.gradient, diff);
      worst = std::max(worst, norm(diff) / norm(fd));
    }
    c.expect(worst < 1e-3, "surrogate gradient relative error " + std::to_string(worst));
    c.notes << "max gradient rel. error " << std::setprecision(3) << worst;
  });

  criterion(6, "GRPO learning", 600.0, [](Check& c) {
    g_cosine_run = rl_run(StochasticitySchedule::cosine_decay(0.0, 1.0));
    const auto& r = g_cosine_run->records;
    const double first = window_mean(r, 0, 10), last = window_mean(r, r.size() - 10, 10);
    c.expect(r.size() == 200, "expected 200 iterations");
    c.expect(last >= 1.5 * first, "final/initial = " + std::to_string(last / first));
    c.notes << std::setprecision(4) << "initial " << first << ", final " << last << ", ratio " << last / first;
  });

  criterion(7, "exploration under the decaying schedule", 600.0, [](Check& c) {
    const auto cosine = StochasticitySchedule::cosine_decay(0.0, 1.0);
    const auto constant = StochasticitySchedule::constant(std::sqrt(schedule_budget(cosine)));
    c.near(schedule_budget(constant), schedule_budget(cosine), 1e-9, "equal budget");
    const Vec null_condition(default_ring_architecture().cond_dim, 0.0);
    SamplerOptions literal{SdeForm::Literal};
    auto diversity = [&](const StochasticitySchedule& s) {
      std::vector<Vec> xs(256);
      parallel_for(xs.size(), kWorkers, [&](std::size_t i) {
        xs[i] = sample_trajectory(ring_field(), null_condition, s, 16, derive_seed(1, i), literal).terminal;
      });
      return diversity_metrics(xs);
    };
    const auto dc = diversity(cosine), dk = diversity(constant);
    c.expect(dc.mean_pairwise_distance > dk.mean_pairwise_distance, "mean pairwise distance not greater");
    c.expect(dc.covariance_trace > dk.covariance_trace, "covariance trace not greater");
    if (!g_cosine_run) g_cosine_run = rl_run(cosine);
    g_constant_run = rl_run(constant);
    const auto tc = iterations_to_threshold(g_cosine_run->records, 1.5);
    const auto tk = iterations_to_threshold(g_constant_run->records, 1.5);
    c.expect(tc.has_value(), "decaying schedule never reached the threshold");
    c.expect(tc && (!tk || *tc <= *tk), "decaying schedule needed more iterations");
    auto show = [](const std::optional<std::size_t>& t) { return t ? std::to_string(*t) : std::string("never"); };
    c.notes << std::setprecision(4) << "distance " << dc.mean_pairwise_distance << " vs " << dk.mean_pairwise_distance
            << ", trace " << dc.covariance_trace << " vs " << dk.covariance_trace << ", threshold at " << show(tc)
            << " vs " << show(tk);
  });

  criterion(8, "reward algebra", 10.0, [](Check& c) {
    const RewardWeights w;
    c.expect(w.clip == 0.7 && w.hps == 1.4 && w.dino == 0.7 && w.vlm == 0.7, "default weights");
    c.near(global_reward(0.3, 0.3, w), 0.63, 1e-12, "R_global(0.3, 0.3)");
    c.near(global_reward(1.0, 0.5, w), 1.4, 1e-12, "R_global(1, 0.5)");
    c.near(subject_reward(std::vector<SubjectScores>{{1.0, 1.0}}, w), 1.4, 1e-12, "R_subject single perfect subject");
    c.near(subject_reward(std::vector<SubjectScores>{{1.0, 0.5}, {0.0, 0.25}}, w), (1.05 + 0.175) / 2, 1e-12,
           "R_subject two subjects");
    c.near(relationship_reward(std::vector<double>{0.0, 1.0}), 0.5, 1e-12, "R_relationship {0, 1}");
    c.near(normalize_rubric(3), 0.75, 1e-12, "rubric 3 / 4");
    const auto b = total_reward({0.3, 0.3, {{1.0, 1.0}}, {0.0, 1.0}}, w);
    c.near(b.R_total, 2.53, 1e-12, "R_total example");
    Rng rng(8);
    std::size_t bad_add = 0, bad_mean = 0;
    for (int i = 0; i < 1000; ++i) {
      RewardInputs r;
      r.clip = rng.uniform();
      r.hps = rng.uniform();
      const std::size_t n = 1 + rng.index(6);
      for (std::size_t k = 0; k < n; ++k) {
        r.subjects.push_back({2 * rng.uniform() - 1, normalize_rubric(static_cast<int>(rng.index(5)))});
        r.relationship.push_back(normalize_rubric(static_cast<int>(rng.index(5))));
      }
      const RewardWeights rw{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
      const auto x = total_reward(r, rw);
      if (std::abs(x.R_total - (x.R_global + x.R_subject + x.R_relationship)) > 1e-12) ++bad_add;
      RewardInputs dup = r;
      dup.subjects.insert(dup.subjects.end(), r.subjects.begin(), r.subjects.end());
      dup.relationship.insert(dup.relationship.end(), r.relationship.begin(), r.relationship.end());
      const auto d = total_reward(dup, rw);
      if (std::abs(d.R_subject - x.R_subject) > 1e-12 || std::abs(d.R_relationship - x.R_relationship) > 1e-12) ++bad_mean;
    }
    c.expect(bad_add == 0, std::to_string(bad_add) + " bundles not additive");
    c.expect(bad_mean == 0, std::to_string(bad_mean) + " bundles not mean-invariant");
    c.notes << "1000 random bundles";
  });

  criterion(9, "chained synthesis coverage", 300.0, [](Check& c) {
    const auto cmp = compare_chain_modes(hard_scene_domain(), 256, 1, {ChainMode::Chain, ChainMode::Monolithic}, kWorkers);
    const auto& ch = cmp.coverage.at(ChainMode::Chain);
    const auto& mo = cmp.coverage.at(ChainMode::Monolithic);
    c.expect(ch.exist() >= mo.exist(), "exist coverage below monolithic");
    c.expect(ch.attribute() > mo.attribute(), "attribute coverage not strictly above monolithic");
    c.expect(ch.relationship() >= mo.relationship(), "relationship coverage below monolithic");
    c.notes << std::setprecision(3) << "chain " << ch.exist() << "/" << ch.attribute() << "/" << ch.relationship()
            << " vs monolithic " << mo.exist() << "/" << mo.attribute() << "/" << mo.relationship();
  });

  criterion(10, "benchmark pipeline", 120.0, [](Check& c) {
    const auto pools = default_pools();
    const TemplateAttributeRewriter rewriter(pools);
    BenchConfig cfg;
    cfg.workers = kWorkers;
    const auto d = generate_dataset(pools, rewriter, cfg);
    c.expect(d.train.size() == 12000, "train size " + std::to_string(d.train.size()));
    c.expect(d.test.size() == 3000, "test size " + std::to_string(d.test.size()));
    std::size_t bad_range = 0, invalid = 0;
    std::unordered_set<std::uint64_t> ids;
    std::vector<DatasetRecord> all;
    for (const auto* split : {&d.train, &d.test}) {
      for (const auto& r : *split) {
        if (r.stats.subjects < 4 || r.stats.subjects > 12) ++bad_range;
        ids.insert(r.id);
        try {
          std::ostringstream os;
          os << to_json(r).dump() << '\n';
          std::istringstream is(os.str());
          const auto back = read_records(is);
          if (back.size() != 1 || to_json(back[0]) != to_json(r)) ++invalid;
        } catch (const std::exception&) {
          ++invalid;
        }
        all.push_back(r);
      }
    }
    c.expect(bad_range == 0, std::to_string(bad_range) + " records outside [4, 12] subjects");
    c.expect(invalid == 0, std::to_string(invalid) + " records not schema-valid");
    c.expect(ids.size() == 15000, "ids are not unique across splits");
    const double dup = duplicate_rate(all);
    c.expect(dup < 0.01, "duplicate rate " + std::to_string(dup));
    const auto again = generate_split(pools, rewriter, cfg, Split::Test);
    bool same = again.size() == d.test.size();
    for (std::size_t i = 0; same && i < again.size(); ++i) same = to_json(again[i]) == to_json(d.test[i]);
    c.expect(same, "test split not deterministic per seed");
    c.notes << "duplicate rate " << dup;
  });

  std::printf("%s: %d of 10 criteria failed\n", failed == 0 ? "ALL PASS" : "FAILURES", failed);
  return failed == 0 ? 0 : 1;
}

#include <catch_amalgamated.hpp>

#include <sstream>

#include "hicogen/flow.hpp"
#include "hicogen/sampler.hpp"
#include "hicogen/schedule.hpp"

using namespace hicogen;
using Catch::Approx;

namespace {

struct GaussianOracle {
  double sigma = 1.0;
  Vec operator()(std::span<const double> z, double t) const { return analytic_gaussian_velocity(z, t, sigma); }
};

struct Moments {
  Vec mean;
  std::vector<Vec> cov;
};

Moments moments(const std::vector<Vec>& xs) {
  const std::size_t d = xs.front().size();
  Moments m{Vec(d, 0.0), std::vector<Vec>(d, Vec(d, 0.0))};
  for (const auto& x : xs) axpy(1.0, x, m.mean);
  for (double& v : m.mean) v /= static_cast<double>(xs.size());
  for (const auto& x : xs) {
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) m.cov[i][j] += (x[i] - m.mean[i]) * (x[j] - m.mean[j]);
    }
  }
  for (auto& row : m.cov) {
    for (double& v : row) v /= static_cast<double>(xs.size());
  }
  return m;
}

double relative_frobenius_to_identity(const std::vector<Vec>& cov, double scale) {
  double err = 0.0;
  for (std::size_t i = 0; i < cov.size(); ++i) {
    for (std::size_t j = 0; j < cov.size(); ++j) {
      const double target = i == j ? scale : 0.0;
      err += (cov[i][j] - target) * (cov[i][j] - target);
    }
  }
  return std::sqrt(err) / (scale * std::sqrt(static_cast<double>(cov.size())));
}

}  // namespace

TEST_CASE("cosine schedule endpoints and midpoint") {
  const auto s = StochasticitySchedule::cosine_decay(0.0, 1.0);
  CHECK(eta_at(s, 1.0) == 1.0);
  CHECK(eta_at(s, 0.0) == 0.0);
  CHECK(eta_at(s, 0.5) == Approx(0.5).margin(1e-15));
  CHECK_THROWS(eta_at(s, 1.01));
  CHECK_THROWS(eta_at(s, -0.01));

  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const double lo = rng.uniform(), hi = lo + 2 * rng.uniform(), T = 0.1 + 5 * rng.uniform();
    const auto c = StochasticitySchedule::cosine_decay(lo, hi, T);
    CHECK(eta_at(c, T) == hi);
    CHECK(eta_at(c, 0.0) == lo);
    CHECK(std::abs(eta_at(c, T / 2) - 0.5 * (lo + hi)) < 1e-12);
    double prev = -1.0;
    for (int k = 0; k <= 100; ++k) {
      const double e = eta_at(c, k == 100 ? T : T * k / 100.0);
      CHECK(e >= prev);
      CHECK(e >= 0.0);
      prev = e;
    }
  }
}

TEST_CASE("schedule validation") {
  CHECK_THROWS(StochasticitySchedule::cosine_decay(0.5, 0.2));
  CHECK_THROWS(StochasticitySchedule::constant(-1.0));
  CHECK_THROWS(StochasticitySchedule::cosine_decay(0.0, 1.0, 0.0));
  CHECK_THROWS(StochasticitySchedule::piecewise({{0.5, 0.2, 1.0}}));
  CHECK_THROWS(StochasticitySchedule::piecewise({{0.0, 0.6, 1.0}, {0.5, 1.0, 1.0}}));
}

TEST_CASE("schedule budget") {
  CHECK(schedule_budget(StochasticitySchedule::constant(1.0)) == Approx(1.0).epsilon(1e-12));
  CHECK(schedule_budget(StochasticitySchedule::piecewise({{0.5, 1.0, std::sqrt(2.0)}})) ==
        Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(schedule_budget(StochasticitySchedule::cosine_decay(0.0, 1.0)) - 0.375) < 1e-9);
  // linear 0 -> 1 on [0, 2]: integral of (t/2)^2 = 2/3
  CHECK(schedule_budget(StochasticitySchedule::linear_decay(0.0, 1.0, 2.0)) == Approx(2.0 / 3.0).epsilon(1e-10));

  SECTION("mirroring keeps the budget and reverses the profile") {
    const auto c = StochasticitySchedule::cosine_decay(0.1, 0.9);
    const auto m = mirrored(c);
    CHECK(schedule_budget(m) == Approx(schedule_budget(c)).epsilon(1e-10));
    for (double t : {0.0, 0.1, 0.37, 0.8, 1.0}) CHECK(eta_at(m, t) == eta_at(c, 1.0 - t));
  }

  SECTION("scaling to a budget") {
    for (const auto& s : {StochasticitySchedule::cosine_decay(0.0, 1.0), StochasticitySchedule::constant(0.3),
                          StochasticitySchedule::from_squared_bins({0.0, 1.0, 4.0})}) {
      CHECK(schedule_budget(scaled_to_budget(s, 0.7)) == Approx(0.7).epsilon(1e-10));
    }
    CHECK_THROWS(scaled_to_budget(StochasticitySchedule::constant(0.0), 1.0));
  }
}

TEST_CASE("score from velocity") {
  const Vec z{0.4, -1.2};
  const Vec u = analytic_gaussian_velocity(z, 0.5, 1.0);
  const Vec sc = score_from_velocity(z, 0.5, u);
  CHECK(sc[0] == Approx(-2.0 * z[0]));
  CHECK(sc[1] == Approx(-2.0 * z[1]));
  CHECK(score_from_velocity(Vec{0, 0}, 0.3, Vec{0, 0}) == Vec{0, 0});
  CHECK_THROWS(score_from_velocity(z, 1e-4, u));

  SECTION("denoising score matching at t=0.7") {
    // Regress -eps/t on z_t: the fitted slope is the score coefficient.
    const double t = 0.7;
    Rng rng(9);
    double sxy = 0, sxx = 0;
    for (int i = 0; i < 200000; ++i) {
      const double z0 = rng.normal(), e = rng.normal();
      const double zt = (1 - t) * z0 + t * e;
      sxy += zt * (-e / t);
      sxx += zt * zt;
    }
    const double slope = sxy / sxx;
    double rel = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const Vec zi{3.0 * rng.normal()};
      const double est = slope * zi[0];
      const double s = score_from_velocity(zi, t, analytic_gaussian_velocity(zi, t, 1.0))[0];
      rel += std::abs(est - s) / std::abs(s);
    }
    CHECK(rel / 1000 < 0.03);
  }
}

TEST_CASE("sde_step") {
  const GaussianOracle field;
  const auto zero = StochasticitySchedule::constant(0.0);
  const LatentState st{{0.3, -0.7}, 0.8};
  const Vec noise{1.1, -0.4};

  SECTION("eta = 0 equals the Euler step bitwise") {
    const auto tr = sde_step(st, 0.6, field, zero, noise);
    const auto e = euler_ode_step(st, 0.6, field(st.z, st.t));
    CHECK(tr.next.z == e.z);
    CHECK(tr.degenerate);
    CHECK(tr.log_prob == 0.0);
    CHECK(tr.std == 0.0);
  }

  SECTION("standard normal density at the mean") {
    CHECK(isotropic_normal_log_density(Vec{0.0}, Vec{0.0}, 1.0) == Approx(-0.5 * std::log(2 * std::numbers::pi)));
    CHECK(isotropic_normal_log_density(Vec{0.0}, Vec{0.0}, 1.0) == Approx(-0.9189385332));
  }

  SECTION("transition statistics") {
    const double eta = 0.7;
    const auto tr = sde_step(st, 0.6, field, StochasticitySchedule::constant(eta), noise);
    CHECK(tr.std == Approx(0.8 * eta * std::sqrt(0.2)).epsilon(1e-14));
    const Vec u = field(st.z, st.t);
    const Vec sc = score_from_velocity(st.z, st.t, u);
    const double c = 0.5 * 0.64 * eta * eta;
    for (int i = 0; i < 2; ++i) {
      CHECK(tr.mean[i] == Approx(st.z[i] + (u[i] - c * sc[i]) * (-0.2)).epsilon(1e-14));
      CHECK(tr.next.z[i] == Approx(tr.mean[i] + tr.std * noise[i]).epsilon(1e-14));
    }
    CHECK(tr.log_prob == Approx(isotropic_normal_log_density(tr.next.z, tr.mean, tr.std)));
    // d(mean)/du matches the closed-form gain
    Vec u2(u);
    u2[0] += 1e-3;
    const auto shifted = sde_transition(st, 0.6, u2, eta, noise);
    CHECK((shifted.mean[0] - tr.mean[0]) / 1e-3 ==
          Approx(transition_mean_velocity_gain(0.8, 0.6, eta, {})).epsilon(1e-8));
  }

  SECTION("literal form keeps the full score coefficient") {
    SamplerOptions lit{SdeForm::Literal};
    const auto tr = sde_step(st, 0.6, field, StochasticitySchedule::constant(0.5), noise, lit);
    const Vec u = field(st.z, st.t);
    const Vec sc = score_from_velocity(st.z, st.t, u);
    CHECK(tr.mean[0] == Approx(st.z[0] + (u[0] - 0.64 * sc[0]) * (-0.2)).epsilon(1e-14));
  }

  SECTION("errors") {
    CHECK_THROWS(sde_step({{0.1, 0.1}, 5e-4}, 0.0, field, StochasticitySchedule::constant(1.0), noise));
    CHECK_THROWS(sde_step(st, 0.9, field, zero, noise));
    CHECK_THROWS(sde_step(st, 0.5, field, zero, Vec{1.0}));
    auto bad = [](std::span<const double> z, double) { return Vec(z.size(), NAN); };
    CHECK_THROWS(sde_step(st, 0.5, bad, zero, noise));
  }
}

TEST_CASE("trajectories") {
  const GaussianOracle field{0.8};
  const auto sched = StochasticitySchedule::cosine_decay(0.0, 1.0);
  const auto a = sample_trajectory(field, 3, sched, 16, 42);
  const auto b = sample_trajectory(field, 3, sched, 16, 42);
  REQUIRE(a.steps.size() == 16);
  CHECK(a.terminal == b.terminal);
  CHECK(a.total_log_prob() == b.total_log_prob());
  for (std::size_t k = 0; k < a.steps.size(); ++k) {
    CHECK(a.steps[k].next == b.steps[k].next);
    if (k > 0) CHECK(a.steps[k].t < a.steps[k - 1].t);
    CHECK(a.steps[k].std >= 0.0);
  }
  CHECK(a.steps.front().t == 1.0);
  CHECK(a.steps.back().s == 0.0);
  // eta(1/16) > 0 under cosine decay, eta at t=... every step is stochastic
  double recomputed = 0.0;
  for (const auto& st : a.steps) recomputed += replay_log_prob(st);
  CHECK(std::abs(recomputed - a.total_log_prob()) < 1e-10);

  SECTION("records round trip") {
    std::stringstream ss;
    write_trajectory_records(ss, a);
    const auto steps = read_trajectory_records(ss);
    REQUIRE(steps.size() == a.steps.size());
    for (std::size_t k = 0; k < steps.size(); ++k) {
      CHECK(steps[k].mean == a.steps[k].mean);
      CHECK(steps[k].next == a.steps[k].next);
      CHECK(steps[k].log_prob == a.steps[k].log_prob);
      CHECK(std::abs(replay_log_prob(steps[k]) - steps[k].log_prob) < 1e-10);
    }
  }

  SECTION("eta = 0 trajectories follow the ODE") {
    for (std::size_t n : {16u, 200u}) {
      const auto tr = sample_trajectory(field, 3, StochasticitySchedule::constant(0.0), n, 5);
      CHECK(tr.terminal == sample_ode(field, tr.steps.front().state, n));
      CHECK(tr.total_log_prob() == 0.0);
    }
  }
}

TEST_CASE("marginal preservation on the Gaussian domain") {
  const GaussianOracle field{1.0};
  for (const auto& sched : {StochasticitySchedule::constant(0.0), StochasticitySchedule::constant(0.5),
                            StochasticitySchedule::constant(1.0), StochasticitySchedule::cosine_decay(0.0, 1.0)}) {
    std::vector<Vec> xs;
    for (int i = 0; i < 10000; ++i) xs.push_back(sample_trajectory(field, 2, sched, 200, derive_seed(77, i)).terminal);
    const auto m = moments(xs);
    INFO(sched.name());
    CHECK(norm(m.mean) < 0.05);
    CHECK(relative_frobenius_to_identity(m.cov, 1.0) < 0.10);
  }
}

#include <doctest.h>

#include <cmath>
#include <random>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "proxrefl/calibration.hpp"

using namespace proxrefl;
using boost::multiprecision::cpp_bin_float_50;

namespace {

// Least-squares alpha evaluated in 50 digits.
double reference_alpha(const SensorIntrinsics& intr, const SweepSeries& sweep) {
  cpp_bin_float_50 num = 0, den = 0;
  for (const auto& s : sweep.samples()) {
    const cpp_bin_float_50 g =
        boost::multiprecision::pow(cpp_bin_float_50(s.distance_mm) + intr.d0(), -cpp_bin_float_50(intr.n()));
    num += cpp_bin_float_50(s.current_mean) * g;
    den += g * g;
  }
  return static_cast<double>(num / den);
}

SweepSeries noiseless(const SensorIntrinsics& intr, double alpha, int steps, double d_min = 5.0,
                      double d_max = 30.0) {
  SweepConfig cfg;
  cfg.steps = steps;
  cfg.d_min_mm = d_min;
  cfg.d_max_mm = d_max;
  return simulate_sweep(intr, Reflectance(alpha), cfg, "probe");
}

}  // namespace

TEST_CASE("noiseless six-point sweep recovers alpha exactly") {
  const auto intr = SensorIntrinsics::example();
  const auto sweep = noiseless(intr, 0.403, 6);
  const auto r = fit_alpha(intr, sweep);
  CHECK(std::abs(r.alpha - 0.403) <= 1e-12);
  CHECK(r.rms_residual <= 1e-12);
  CHECK(r.sample_count == 6);
  CHECK_FALSE(r.out_of_range);
  CHECK(r.alpha == doctest::Approx(reference_alpha(intr, sweep)).epsilon(1e-15));
}

TEST_CASE("two-point sweep reconstructs I1 / g1") {
  const auto intr = SensorIntrinsics(2.0, 1.5);
  const double g1 = power_law_basis(intr, 4.0);
  const double g2 = power_law_basis(intr, 9.0);
  const SweepSeries sweep("pair", {{4.0, 0.6 * g1, 1}, {9.0, 0.6 * g2, 1}});
  CHECK(fit_alpha(intr, sweep).alpha == doctest::Approx(sweep.samples()[0].current_mean / g1).epsilon(1e-14));
}

TEST_CASE("sweep validation lists every problem") {
  CHECK_THROWS_AS(SweepSeries("one", {{5.0, 1.0, 1}}), DataError);
  try {
    SweepSeries("bad", {{5.0, 1.0, 1}, {5.0, -1.0, 0}});
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(e.violations().size() == 3);
  }
}

TEST_CASE("out-of-range alpha is flagged and only clamped on request") {
  const auto intr = SensorIntrinsics::example();
  const auto sweep = noiseless(intr, 0.8, 6).scaled(1.5);
  const auto raw = fit_alpha(intr, sweep);
  CHECK(raw.out_of_range);
  CHECK_FALSE(raw.clamped);
  CHECK(raw.alpha == doctest::Approx(1.2));
  CHECK_THROWS_AS(raw.reflectance(), DomainError);
  const auto clamped = fit_alpha(intr, sweep, {true});
  CHECK(clamped.clamped);
  CHECK(clamped.alpha == 1.0);
  CHECK(clamped.raw_alpha == doctest::Approx(1.2));
}

TEST_CASE("simulate_sweep grid, exactness and determinism") {
  const auto intr = SensorIntrinsics::example();
  const auto sweep = noiseless(intr, 0.5, 6);
  const double expected[] = {5, 10, 15, 20, 25, 30};
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(sweep.samples()[i].distance_mm == expected[i]);
    CHECK(sweep.samples()[i].current_mean == forward_current(intr, Reflectance(0.5), expected[i]).value());
  }
  SweepConfig cfg;
  cfg.noise_rel = 0.01;
  cfg.seed = 99;
  const auto a = simulate_sweep(intr, Reflectance(0.5), cfg);
  const auto b = simulate_sweep(intr, Reflectance(0.5), cfg);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.samples()[i].current_mean == b.samples()[i].current_mean);

  cfg.steps = 1;
  CHECK_THROWS_AS(simulate_sweep(intr, Reflectance(0.5), cfg), DomainError);
  cfg.steps = 6;
  cfg.repeats = 0;
  CHECK_THROWS_AS(simulate_sweep(intr, Reflectance(0.5), cfg), DomainError);
  cfg.repeats = 1;
  cfg.noise_rel = -0.1;
  CHECK_THROWS_AS(simulate_sweep(intr, Reflectance(0.5), cfg), DomainError);
}

TEST_CASE("property: exact recovery over randomized settings and scale equivariance") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> d0(0.0, 4.0), n(0.5, 3.5), a(0.05, 1.0), lo(1.0, 10.0), span(5.0, 60.0);
  for (int i = 0; i < 200; ++i) {
    const auto intr = SensorIntrinsics(d0(rng), n(rng));
    const double alpha = a(rng);
    const double d_min = lo(rng);
    const auto sweep = noiseless(intr, alpha, 6, d_min, d_min + span(rng));
    const auto r = fit_alpha(intr, sweep);
    CHECK(std::abs(r.alpha - alpha) <= 1e-12 * alpha);
    // Powers of two scale every product and sum exactly.
    CHECK(fit_alpha(intr, sweep.scaled(2.0)).raw_alpha == 2.0 * r.raw_alpha);
    CHECK(fit_alpha(intr, sweep.scaled(0.25)).raw_alpha == 0.25 * r.raw_alpha);
    CHECK(fit_alpha(intr, sweep.scaled(3.7)).raw_alpha == doctest::Approx(3.7 * r.raw_alpha).epsilon(1e-14));
  }
}

TEST_CASE("noisy sweeps averaged over 200 repeats stay within half a percent") {
  const auto intr = SensorIntrinsics::example();
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SweepConfig cfg;
    cfg.noise_rel = 0.01;
    cfg.seed = seed;
    const auto r = fit_alpha(intr, simulate_sweep(intr, Reflectance(0.403), cfg));
    total += std::abs(r.alpha - 0.403) / 0.403;
  }
  CHECK(total / 100.0 < 0.005);
}

TEST_CASE("estimator spread shrinks as repeats grow") {
  const auto intr = SensorIntrinsics::example();
  auto spread = [&](int repeats) {
    double ss = 0.0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      SweepConfig cfg;
      cfg.noise_rel = 0.05;
      cfg.repeats = repeats;
      cfg.seed = 1000 + seed;
      const double e = fit_alpha(intr, simulate_sweep(intr, Reflectance(0.5), cfg)).alpha - 0.5;
      ss += e * e;
    }
    return ss / 200.0;
  };
  const double v1 = spread(1), v10 = spread(10), v200 = spread(200);
  CHECK(v10 < v1);
  CHECK(v200 < v10);
}

TEST_CASE("joint fit recovers all three parameters from perturbed initials") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> d0(0.5, 3.0), n(1.0, 3.0), a(0.1, 1.0), jitter(-0.2, 0.2);
  for (int trial = 0; trial < 50; ++trial) {
    const PowerLawParams truth{a(rng), d0(rng), n(rng)};
    const auto sweep = noiseless(SensorIntrinsics(truth.d0, truth.n), truth.alpha, 12);
    const PowerLawParams init{truth.alpha * (1 + jitter(rng)), truth.d0 * (1 + jitter(rng)),
                              truth.n * (1 + jitter(rng))};
    const auto r = fit_full(sweep, init);
    CHECK(std::abs(r.params.alpha - truth.alpha) <= 1e-6 * truth.alpha);
    CHECK(std::abs(r.params.d0 - truth.d0) <= 1e-6 * truth.d0);
    CHECK(std::abs(r.params.n - truth.n) <= 1e-6 * truth.n);
    CHECK_FALSE(r.flagged);
    for (std::size_t i = 1; i < r.cost_history.size(); ++i) CHECK(r.cost_history[i] <= r.cost_history[i - 1]);
  }
}

TEST_CASE("joint fit started at the truth converges immediately") {
  const PowerLawParams truth{0.62, 1.3, 2.2};
  const auto sweep = noiseless(SensorIntrinsics(truth.d0, truth.n), truth.alpha, 12);
  const auto r = fit_full(sweep, truth);
  CHECK(r.iterations <= 1);
  CHECK(r.rms_residual <= 1e-12);
}

TEST_CASE("joint fit on contradictory data is flagged or fails") {
  // Currents increase with distance: no decaying power law fits.
  std::vector<SweepSample> samples;
  for (int i = 0; i < 6; ++i) samples.push_back({5.0 + 5.0 * i, 0.001 * (1 + i), 1});
  const SweepSeries sweep("rising", samples);
  bool flagged_or_failed = false;
  try {
    flagged_or_failed = fit_full(sweep, {0.5, 1.0, 2.0}).flagged;
  } catch (const ConvergenceError& e) {
    flagged_or_failed = true;
    CHECK(e.rms_residual() >= 0.0);
  }
  CHECK(flagged_or_failed);
}

TEST_CASE("joint fit preconditions") {
  const auto sweep = noiseless(SensorIntrinsics::example(), 0.5, 3);
  CHECK_THROWS_AS(fit_full(sweep, {0.5, 1.0, 2.0}), DataError);
  const auto ok = noiseless(SensorIntrinsics::example(), 0.5, 6);
  CHECK_THROWS_AS(fit_full(ok, {0.5, 1.0, -2.0}), DomainError);
}

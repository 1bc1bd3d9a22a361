#include "proxrefl/calibration.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

namespace proxrefl {

SweepSeries::SweepSeries(std::string object_id, std::vector<SweepSample> samples)
    : object_id_(std::move(object_id)), samples_(std::move(samples)) {
  if (samples_.size() < 2) {
    throw DataError(fmt::format("sweep for '{}' needs at least 2 samples, got {}", object_id_, samples_.size()));
  }
  std::vector<std::string> problems;
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const auto& s = samples_[i];
    if (!std::isfinite(s.distance_mm) || s.distance_mm < 0.0) {
      problems.push_back(fmt::format("sample {}: distance {} is not a finite non-negative value", i, s.distance_mm));
    }
    if (!std::isfinite(s.current_mean) || s.current_mean <= 0.0) {
      problems.push_back(fmt::format("sample {}: current {} is not finite and positive", i, s.current_mean));
    }
    if (s.repeat_count < 1) {
      problems.push_back(fmt::format("sample {}: repeat count {} < 1", i, s.repeat_count));
    }
    if (i > 0 && !(s.distance_mm > samples_[i - 1].distance_mm)) {
      problems.push_back(fmt::format("sample {}: distance {} does not increase", i, s.distance_mm));
    }
  }
  if (!problems.empty()) {
    throw DataError(fmt::format("invalid sweep for '{}'", object_id_), std::move(problems));
  }
}

SweepSeries SweepSeries::scaled(double factor) const {
  auto copy = samples_;
  for (auto& s : copy) s.current_mean *= factor;
  return SweepSeries(object_id_, std::move(copy));
}

CalibrationResult fit_alpha(const SensorIntrinsics& intrinsics, const SweepSeries& sweep, FitAlphaOptions options) {
  double num = 0.0;
  double den = 0.0;
  std::vector<double> basis;
  basis.reserve(sweep.size());
  for (const auto& s : sweep.samples()) {
    const double g = power_law_basis(intrinsics, s.distance_mm);
    basis.push_back(g);
    num += s.current_mean * g;
    den += g * g;
  }
  if (!(den > 0.0)) {
    throw DomainError(fmt::format("degenerate sweep for '{}': sum of squared basis terms is zero", sweep.object_id()));
  }
  const double alpha = num / den;
  if (!(alpha > 0.0)) {
    throw DomainError(fmt::format("fitted reflectance for '{}' is not positive ({})", sweep.object_id(), alpha));
  }

  double sse = 0.0;
  for (std::size_t i = 0; i < sweep.size(); ++i) {
    const double r = sweep.samples()[i].current_mean - alpha * basis[i];
    sse += r * r;
  }

  CalibrationResult result;
  result.raw_alpha = alpha;
  result.alpha = alpha;
  result.sample_count = static_cast<int>(sweep.size());
  result.rms_residual = std::sqrt(sse / static_cast<double>(sweep.size()));
  result.out_of_range = alpha > 1.0;
  if (result.out_of_range && options.clamp) {
    result.alpha = 1.0;
    result.clamped = true;
  }
  return result;
}

namespace {

bool admissible(const SweepSeries& sweep, const PowerLawParams& p) {
  if (!std::isfinite(p.alpha) || !std::isfinite(p.d0) || !std::isfinite(p.n)) return false;
  if (!(p.n > 0.0)) return false;
  return sweep.samples().front().distance_mm + p.d0 > 0.0;
}

double sum_of_squares(const SweepSeries& sweep, const PowerLawParams& p) {
  double sse = 0.0;
  for (const auto& s : sweep.samples()) {
    const double r = s.current_mean - p.alpha * std::pow(s.distance_mm + p.d0, -p.n);
    sse += r * r;
  }
  return sse;
}

}  // namespace

FullFitResult fit_full(const SweepSeries& sweep, const PowerLawParams& initial, FullFitOptions options) {
  const auto m = static_cast<Eigen::Index>(sweep.size());
  if (m < 4) {
    throw DataError(fmt::format("joint fit of '{}' needs at least 4 samples, got {}", sweep.object_id(), m));
  }
  if (!admissible(sweep, initial)) {
    throw DomainError(fmt::format("initial parameters for '{}' put the power law outside its domain",
                                  sweep.object_id()));
  }

  double mean_current = 0.0;
  for (const auto& s : sweep.samples()) mean_current += s.current_mean;
  mean_current /= static_cast<double>(m);

  PowerLawParams p = initial;
  double cost = sum_of_squares(sweep, p);
  double damping = options.initial_damping;

  FullFitResult result;
  result.cost_history.push_back(cost);

  auto finish = [&](int iterations) {
    result.params = p;
    result.iterations = iterations;
    result.rms_residual = std::sqrt(cost / static_cast<double>(m));
    result.flagged = result.rms_residual > options.flag_relative_rms * mean_current;
    return result;
  };

  Eigen::MatrixXd jac(m, 3);
  Eigen::VectorXd resid(m);
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto& s = sweep.samples()[static_cast<std::size_t>(i)];
      const double shifted = s.distance_mm + p.d0;
      const double g = std::pow(shifted, -p.n);
      resid(i) = s.current_mean - p.alpha * g;
      jac(i, 0) = g;
      jac(i, 1) = -p.n * p.alpha * g / shifted;
      jac(i, 2) = -p.alpha * g * std::log(shifted);
    }
    const Eigen::Matrix3d normal = jac.transpose() * jac;
    const Eigen::Vector3d gradient = jac.transpose() * resid;
    if (cost == 0.0 || gradient.cwiseAbs().maxCoeff() == 0.0) {
      return finish(iter);
    }

    const Eigen::Vector3d scale = normal.diagonal().cwiseMax(1e-300);
    const Eigen::Vector3d current(p.alpha, p.d0, p.n);
    bool accepted = false;
    while (!accepted) {
      Eigen::Matrix3d lhs = normal;
      lhs.diagonal() += damping * scale;
      const Eigen::Vector3d step = lhs.ldlt().solve(gradient);
      const double relative_step = step.norm() / std::max(current.norm(), 1e-300);
      const PowerLawParams trial{p.alpha + step(0), p.d0 + step(1), p.n + step(2)};

      if (admissible(sweep, trial)) {
        const double trial_cost = sum_of_squares(sweep, trial);
        if (trial_cost <= cost) {
          p = trial;
          cost = trial_cost;
          result.cost_history.push_back(cost);
          damping = std::max(damping / 10.0, 1e-12);
          accepted = true;
        }
      }
      if (relative_step < options.relative_step_tolerance) {
        return finish(iter + 1);
      }
      if (!accepted) {
        damping *= 10.0;
        if (damping > 1e30) {
          throw ConvergenceError(
              fmt::format("joint fit of '{}' stalled: damping exceeded its bound after {} iterations",
                          sweep.object_id(), iter + 1),
              p, std::sqrt(cost / static_cast<double>(m)));
        }
      }
    }
  }
  throw ConvergenceError(fmt::format("joint fit of '{}' did not converge in {} iterations", sweep.object_id(),
                                     options.max_iterations),
                         p, std::sqrt(cost / static_cast<double>(m)));
}

SweepSeries simulate_sweep(const SensorIntrinsics& intrinsics, Reflectance alpha, const SweepConfig& config,
                           std::string object_id) {
  if (config.steps < 2) throw DomainError(fmt::format("sweep needs at least 2 steps, got {}", config.steps));
  if (!(config.noise_rel >= 0.0) || !std::isfinite(config.noise_rel)) {
    throw DomainError(fmt::format("relative noise must be finite and >= 0, got {}", config.noise_rel));
  }
  if (config.repeats < 1) throw DomainError(fmt::format("repeats must be >= 1, got {}", config.repeats));
  if (!(config.d_min_mm >= 0.0) || !(config.d_max_mm > config.d_min_mm)) {
    throw DomainError(fmt::format("sweep range [{}, {}] is invalid", config.d_min_mm, config.d_max_mm));
  }

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> noise(0.0, config.noise_rel);
  const double spacing = (config.d_max_mm - config.d_min_mm) / static_cast<double>(config.steps - 1);

  std::vector<SweepSample> samples;
  samples.reserve(static_cast<std::size_t>(config.steps));
  for (int i = 0; i < config.steps; ++i) {
    const double d = i == config.steps - 1 ? config.d_max_mm : config.d_min_mm + spacing * i;
    const double clean = forward_current(intrinsics, alpha, d).value();
    double current = clean;
    if (config.noise_rel > 0.0) {
      double factor_sum = 0.0;
      for (int k = 0; k < config.repeats; ++k) factor_sum += 1.0 + noise(rng);
      current = clean * (factor_sum / config.repeats);
    }
    samples.push_back({d, current, config.repeats});
  }
  return SweepSeries(std::move(object_id), std::move(samples));
}

}  // namespace proxrefl

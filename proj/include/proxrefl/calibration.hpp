#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "proxrefl/errors.hpp"
#include "proxrefl/sensor.hpp"

namespace proxrefl {

struct SweepSample {
  double distance_mm = 0.0;
  double current_mean = 0.0;
  int repeat_count = 1;
};

// A distance sweep for one object. Distances are strictly increasing and the
// series holds at least two samples; the constructor enforces both.
class SweepSeries {
 public:
  SweepSeries(std::string object_id, std::vector<SweepSample> samples);

  const std::string& object_id() const noexcept { return object_id_; }
  const std::vector<SweepSample>& samples() const noexcept { return samples_; }
  std::size_t size() const noexcept { return samples_.size(); }

  // Same distances and repeat counts, currents multiplied by `factor`.
  SweepSeries scaled(double factor) const;

 private:
  std::string object_id_;
  std::vector<SweepSample> samples_;
};

struct CalibrationResult {
  double alpha = 0.0;         // possibly clamped, see `clamped`
  double raw_alpha = 0.0;     // the unclamped least-squares solution
  double rms_residual = 0.0;  // sensor units
  int sample_count = 0;
  bool out_of_range = false;  // raw_alpha > 1
  bool clamped = false;

  // Throws DomainError when alpha does not satisfy the Reflectance bounds.
  Reflectance reflectance() const { return Reflectance(alpha); }
};

struct FitAlphaOptions {
  bool clamp = false;
};

// Closed-form least squares for alpha with known intrinsics:
//   alpha* = sum(I_i g_i) / sum(g_i^2),   g_i = (d_i + d0)^(-n)
// Throws DomainError if alpha* <= 0. Values above 1 are flagged, and clamped to 1
// only when requested.
CalibrationResult fit_alpha(const SensorIntrinsics& intrinsics, const SweepSeries& sweep,
                            FitAlphaOptions options = {});

struct PowerLawParams {
  double alpha = 0.0;
  double d0 = 0.0;
  double n = 0.0;
};

struct FullFitOptions {
  int max_iterations = 200;
  double relative_step_tolerance = 1e-10;
  double initial_damping = 1e-3;
  // Fits whose rms residual exceeds this fraction of the mean current are flagged.
  double flag_relative_rms = 1e-2;
};

struct FullFitResult {
  PowerLawParams params;
  double rms_residual = 0.0;
  int iterations = 0;
  bool flagged = false;
  std::vector<double> cost_history;  // sum of squares after each accepted step, starting with the initial cost
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& message, PowerLawParams last, double rms_residual)
      : Error(ErrorKind::Convergence, message), last_(last), rms_residual_(rms_residual) {}

  const PowerLawParams& last_iterate() const noexcept { return last_; }
  double rms_residual() const noexcept { return rms_residual_; }

 private:
  PowerLawParams last_;
  double rms_residual_;
};

// Joint Levenberg-Marquardt fit of (alpha, d0, n) minimising
// sum (I_i - alpha (d_i + d0)^(-n))^2. Needs at least four samples. Steps that
// make any d_i + d0 <= 0 or n <= 0 are rejected by raising the damping.
FullFitResult fit_full(const SweepSeries& sweep, const PowerLawParams& initial, FullFitOptions options = {});

struct SweepConfig {
  double d_min_mm = 5.0;
  double d_max_mm = 30.0;
  int steps = 6;
  double noise_rel = 0.0;
  int repeats = 200;
  std::uint64_t seed = 0;
};

// Equally spaced sweep over [d_min, d_max] (both ends included). Each current is
// the mean of `repeats` draws of I * (1 + eps), eps ~ Normal(0, noise_rel).
SweepSeries simulate_sweep(const SensorIntrinsics& intrinsics, Reflectance alpha, const SweepConfig& config,
                           std::string object_id = "synthetic");

}  // namespace proxrefl

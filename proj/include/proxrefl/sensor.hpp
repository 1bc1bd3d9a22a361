#pragma once

// Optical proximity-sensor forward model and its exact distance inversion.
//
// The summed phototransistor current at distance d (mm) from a surface with
// infrared reflectance alpha is
//
//     I_all = alpha * (d + d0)^(-n)
//
// where d0 (mm) and n are fixed per sensor.

namespace proxrefl {

class SensorIntrinsics {
 public:
  // Defaults used by examples and tests only; data-processing entry points
  // always take intrinsics explicitly.
  static constexpr double kExampleOffsetMm = 1.0;
  static constexpr double kExampleExponent = 2.0;

  // Throws DomainError unless d0 >= 0, n > 0 and both are finite.
  SensorIntrinsics(double d0_mm, double n);

  static SensorIntrinsics example() { return {kExampleOffsetMm, kExampleExponent}; }

  double d0() const noexcept { return d0_; }
  double n() const noexcept { return n_; }

  friend bool operator==(const SensorIntrinsics&, const SensorIntrinsics&) = default;

 private:
  double d0_;
  double n_;
};

// Infrared reflectance, 0 < alpha <= 1.
class Reflectance {
 public:
  explicit Reflectance(double alpha);

  double value() const noexcept { return alpha_; }

  friend bool operator==(const Reflectance&, const Reflectance&) = default;

 private:
  double alpha_;
};

// Photocurrent in arbitrary (unnormalised) sensor units, strictly positive.
class CurrentReading {
 public:
  explicit CurrentReading(double i_all);

  double value() const noexcept { return i_all_; }

 private:
  double i_all_;
};

// The power-law basis term (d + d0)^(-n). Throws DomainError when d + d0 <= 0.
double power_law_basis(const SensorIntrinsics& intrinsics, double distance_mm);

// alpha * (d + d0)^(-n). Requires d >= 0.
CurrentReading forward_current(const SensorIntrinsics& intrinsics, Reflectance alpha, double distance_mm);

// (alpha / i_all)^(1/n) - d0. The result is negative when the assumed alpha is
// smaller than the true one and the object is close; it is not clamped.
double invert_distance(const SensorIntrinsics& intrinsics, Reflectance alpha, CurrentReading reading);

}  // namespace proxrefl

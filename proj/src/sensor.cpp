#include "proxrefl/sensor.hpp"

#include <cmath>
#include <string>

#include "proxrefl/errors.hpp"

namespace proxrefl {

SensorIntrinsics::SensorIntrinsics(double d0_mm, double n) : d0_(d0_mm), n_(n) {
  if (!std::isfinite(d0_mm) || d0_mm < 0.0) {
    throw DomainError("sensor offset d0 must be finite and >= 0, got " + std::to_string(d0_mm));
  }
  if (!std::isfinite(n) || n <= 0.0) {
    throw DomainError("sensor exponent n must be finite and > 0, got " + std::to_string(n));
  }
}

Reflectance::Reflectance(double alpha) : alpha_(alpha) {
  if (!std::isfinite(alpha) || alpha <= 0.0 || alpha > 1.0) {
    throw DomainError("reflectance must lie in (0, 1], got " + std::to_string(alpha));
  }
}

CurrentReading::CurrentReading(double i_all) : i_all_(i_all) {
  if (!std::isfinite(i_all) || i_all <= 0.0) {
    throw DomainError("current reading must be finite and > 0, got " + std::to_string(i_all));
  }
}

double power_law_basis(const SensorIntrinsics& intrinsics, double distance_mm) {
  const double shifted = distance_mm + intrinsics.d0();
  if (!(shifted > 0.0)) {
    throw DomainError("power law is singular at d + d0 = " + std::to_string(shifted));
  }
  return std::pow(shifted, -intrinsics.n());
}

CurrentReading forward_current(const SensorIntrinsics& intrinsics, Reflectance alpha, double distance_mm) {
  if (!std::isfinite(distance_mm) || distance_mm < 0.0) {
    throw DomainError("distance must be finite and >= 0, got " + std::to_string(distance_mm));
  }
  return CurrentReading(alpha.value() * power_law_basis(intrinsics, distance_mm));
}

double invert_distance(const SensorIntrinsics& intrinsics, Reflectance alpha, CurrentReading reading) {
  return std::pow(alpha.value() / reading.value(), 1.0 / intrinsics.n()) - intrinsics.d0();
}

}  // namespace proxrefl

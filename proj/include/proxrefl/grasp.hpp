#pragma once

// Fingertip-advance grasp simulation. The gripper reads the proximity sensor at
// the start pose, converts the reading into a distance using an estimated
// reflectance, and advances by that distance. Advancing too little leaves a gap
// (underreach); advancing too far presses into the object (overreach), which a
// linear spring capped at the gripper force limit turns into a contact force.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "proxrefl/dataset.hpp"
#include "proxrefl/sensor.hpp"

namespace proxrefl {

inline constexpr double kDefaultMaxForceN = 5.2;
inline constexpr double kDefaultGraspToleranceMm = 0.05;

struct GraspScene {
  Reflectance true_alpha{1.0};
  double true_distance_mm = 20.0;  // sensor to surface at grasp start
  SensorIntrinsics intrinsics = SensorIntrinsics::example();
  double stiffness_n_per_mm = 1.0;
  double max_force_n = kDefaultMaxForceN;
  // Past this much overshoot the object stops yielding and the force saturates.
  std::optional<double> deformation_limit_mm;

  void validate() const;
};

enum class GraspOutcome { CleanGrasp, Underreach, Overreach };

std::string to_string(GraspOutcome o);
GraspOutcome parse_grasp_outcome(const std::string& text);

struct GraspTrialResult {
  std::string object_id;
  std::string method_id;
  GraspOutcome outcome = GraspOutcome::CleanGrasp;
  double distance_error_mm = 0.0;  // > 0 only for underreach
  double force_n = 0.0;            // > 0 only for overreach
  double commanded_advance_mm = 0.0;
  int trial_index = 0;
};

// Advance commanded for the given reading multiplier (1.0 = noiseless). In the
// noiseless case this is (alpha_hat / alpha)^(1/n) (d + d0) - d0.
double plan_advance(const GraspScene& scene, Reflectance alpha_hat, double reading_factor = 1.0);

struct TrialParams {
  double tolerance_mm = kDefaultGraspToleranceMm;
  double noise_rel = 0.0;  // multiplicative Gaussian noise on the sensor reading
  std::uint64_t seed = 0;
  std::string object_id;
  std::string method_id;
  int trial_index = 0;
};

GraspTrialResult simulate_grasp(const GraspScene& scene, Reflectance alpha_hat, const TrialParams& params = {});

// Produces alpha_hat for an object, or nullopt if the estimator has no answer.
using EstimatorFn = std::function<std::optional<double>(const ObjectRecord&)>;

struct EstimatorBinding {
  std::string method_id;
  EstimatorFn estimate;
};

// "fixed_0.5", "fixed_1.0": shortest round-trip form with at least one decimal.
std::string fixed_method_id(double alpha);

EstimatorBinding fixed_binding(double alpha, std::string method_id = {});
EstimatorBinding ground_truth_binding(std::string method_id = "ground_truth");
// Mean of the method's predictions for each object.
EstimatorBinding prediction_binding(const std::string& method_id, const std::vector<PredictionRecord>& records);

struct ProtocolConfig {
  int repetitions = 5;
  std::uint64_t seed = 0;
  double standoff_mm = 20.0;
  SensorIntrinsics intrinsics = SensorIntrinsics::example();
  double default_stiffness_n_per_mm = 1.0;
  double max_force_n = kDefaultMaxForceN;
  std::optional<double> deformation_limit_mm;
  double tolerance_mm = kDefaultGraspToleranceMm;
  double noise_rel = 0.0;
  int threads = 1;
};

struct EstimatorFailure {
  std::string method_id;
  std::string object_id;
  std::string message;
};

struct ProtocolRun {
  std::vector<GraspTrialResult> results;  // ordered by (method, object, repetition)
  std::vector<EstimatorFailure> failures;
};

// repetitions x objects x methods trials. Each trial draws its sensor noise from
// a seed derived from (seed, method, object, repetition), so threaded and
// sequential runs give identical results.
ProtocolRun run_protocol(const std::vector<ObjectRecord>& objects, const std::vector<EstimatorBinding>& methods,
                         const ProtocolConfig& config);

// Test-split objects of the manifest.
ProtocolRun run_protocol(const Manifest& manifest, const std::vector<EstimatorBinding>& methods,
                         const ProtocolConfig& config);

// CSV: method_id,object_id,trial_index,outcome,value_mm_or_N,commanded_advance_mm
void save_grasp_results(const std::vector<GraspTrialResult>& results, const std::filesystem::path& path);
std::vector<GraspTrialResult> load_grasp_results(const std::filesystem::path& path);

}  // namespace proxrefl

#include "proxrefl/grasp.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "proxrefl/csv.hpp"
#include "proxrefl/parallel.hpp"

namespace proxrefl {

void GraspScene::validate() const {
  if (!(true_distance_mm > 0.0) || !std::isfinite(true_distance_mm)) {
    throw DomainError(fmt::format("grasp start distance must be > 0, got {}", true_distance_mm));
  }
  if (!(stiffness_n_per_mm > 0.0)) throw DomainError("object stiffness must be > 0");
  if (!(max_force_n > 0.0)) throw DomainError("maximum gripper force must be > 0");
  if (deformation_limit_mm && !(*deformation_limit_mm > 0.0)) throw DomainError("deformation limit must be > 0");
}

std::string to_string(GraspOutcome o) {
  switch (o) {
    case GraspOutcome::CleanGrasp: return "clean_grasp";
    case GraspOutcome::Underreach: return "underreach";
    case GraspOutcome::Overreach: return "overreach";
  }
  return "clean_grasp";
}

GraspOutcome parse_grasp_outcome(const std::string& text) {
  if (text == "clean_grasp") return GraspOutcome::CleanGrasp;
  if (text == "underreach") return GraspOutcome::Underreach;
  if (text == "overreach") return GraspOutcome::Overreach;
  throw DataError(fmt::format("unknown grasp outcome '{}'", text));
}

double plan_advance(const GraspScene& scene, Reflectance alpha_hat, double reading_factor) {
  scene.validate();
  const auto clean = forward_current(scene.intrinsics, scene.true_alpha, scene.true_distance_mm);
  return invert_distance(scene.intrinsics, alpha_hat, CurrentReading(clean.value() * reading_factor));
}

GraspTrialResult simulate_grasp(const GraspScene& scene, Reflectance alpha_hat, const TrialParams& params) {
  if (!(params.tolerance_mm >= 0.0)) throw DomainError("grasp tolerance must be >= 0");
  if (!(params.noise_rel >= 0.0)) throw DomainError("sensor noise must be >= 0");
  double factor = 1.0;
  if (params.noise_rel > 0.0) {
    std::mt19937_64 rng(params.seed);
    std::normal_distribution<double> noise(0.0, params.noise_rel);
    // Resample the (vanishingly rare) draws that would make the reading non-positive.
    do {
      factor = 1.0 + noise(rng);
    } while (!(factor > 0.0));
  }
  GraspTrialResult r;
  r.object_id = params.object_id;
  r.method_id = params.method_id;
  r.trial_index = params.trial_index;
  r.commanded_advance_mm = plan_advance(scene, alpha_hat, factor);

  const double overshoot = r.commanded_advance_mm - scene.true_distance_mm;
  if (overshoot > params.tolerance_mm) {
    r.outcome = GraspOutcome::Overreach;
    const bool rigid = scene.deformation_limit_mm && overshoot > *scene.deformation_limit_mm;
    r.force_n = rigid ? scene.max_force_n : std::min(scene.stiffness_n_per_mm * overshoot, scene.max_force_n);
  } else if (overshoot < -params.tolerance_mm) {
    r.outcome = GraspOutcome::Underreach;
    r.distance_error_mm = -overshoot;
  }
  return r;
}

std::string fixed_method_id(double alpha) {
  auto text = csv::format_double(alpha);
  if (text.find_first_of(".e") == std::string::npos) text += ".0";
  return "fixed_" + text;
}

EstimatorBinding fixed_binding(double alpha, std::string method_id) {
  if (method_id.empty()) method_id = fixed_method_id(alpha);
  return {std::move(method_id), [alpha](const ObjectRecord&) -> std::optional<double> { return alpha; }};
}

EstimatorBinding ground_truth_binding(std::string method_id) {
  return {std::move(method_id), [](const ObjectRecord& o) -> std::optional<double> {
            if (!o.true_alpha) return std::nullopt;
            return o.true_alpha->value();
          }};
}

EstimatorBinding prediction_binding(const std::string& method_id, const std::vector<PredictionRecord>& records) {
  std::map<std::string, std::pair<double, int>> sums;
  for (const auto& r : records) {
    if (r.method_id != method_id) continue;
    auto& [sum, count] = sums[r.object_id];
    sum += r.predicted_alpha;
    ++count;
  }
  return {method_id, [sums = std::move(sums)](const ObjectRecord& o) -> std::optional<double> {
            const auto it = sums.find(o.object_id);
            if (it == sums.end()) return std::nullopt;
            return it->second.first / it->second.second;
          }};
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t trial_seed(std::uint64_t seed, std::size_t method, std::size_t object, std::size_t rep) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ method);
  h = splitmix64(h ^ object);
  return splitmix64(h ^ rep);
}

}  // namespace

ProtocolRun run_protocol(const std::vector<ObjectRecord>& objects, const std::vector<EstimatorBinding>& methods,
                         const ProtocolConfig& config) {
  if (config.repetitions < 1) throw UsageError("grasp protocol needs at least one repetition");
  ProtocolRun run;
  const auto reps = static_cast<std::size_t>(config.repetitions);

  struct Cell {
    std::size_t method;
    std::size_t object;
    GraspScene scene;
    Reflectance alpha_hat;
  };
  std::vector<Cell> cells;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    for (std::size_t o = 0; o < objects.size(); ++o) {
      const auto& obj = objects[o];
      const auto& method = methods[m];
      try {
        if (!obj.true_alpha) throw DataError("object has no true_alpha");
        const auto estimate = method.estimate(obj);
        if (!estimate) throw DataError("estimator produced no value");
        GraspScene scene{*obj.true_alpha,
                         config.standoff_mm,
                         config.intrinsics,
                         obj.stiffness_n_per_mm.value_or(config.default_stiffness_n_per_mm),
                         config.max_force_n,
                         config.deformation_limit_mm};
        scene.validate();
        cells.push_back({m, o, scene, Reflectance(*estimate)});
      } catch (const Error& e) {
        run.failures.push_back({method.method_id, obj.object_id, e.what()});
      }
    }
  }

  run.results.resize(cells.size() * reps);
  parallel_for(run.results.size(), config.threads, [&](std::size_t i) {
    const auto& cell = cells[i / reps];
    const std::size_t rep = i % reps;
    TrialParams params;
    params.tolerance_mm = config.tolerance_mm;
    params.noise_rel = config.noise_rel;
    params.seed = trial_seed(config.seed, cell.method, cell.object, rep);
    params.object_id = objects[cell.object].object_id;
    params.method_id = methods[cell.method].method_id;
    params.trial_index = static_cast<int>(rep);
    run.results[i] = simulate_grasp(cell.scene, cell.alpha_hat, params);
  });
  return run;
}

ProtocolRun run_protocol(const Manifest& manifest, const std::vector<EstimatorBinding>& methods,
                         const ProtocolConfig& config) {
  std::vector<ObjectRecord> objects;
  for (const auto* o : manifest.objects_in(Split::Test)) objects.push_back(*o);
  return run_protocol(objects, methods, config);
}

void save_grasp_results(const std::vector<GraspTrialResult>& results, const std::filesystem::path& path) {
  std::string out = "method_id,object_id,trial_index,outcome,value_mm_or_N,commanded_advance_mm\n";
  for (const auto& r : results) {
    std::string value;
    if (r.outcome == GraspOutcome::Underreach) value = csv::format_double(r.distance_error_mm);
    if (r.outcome == GraspOutcome::Overreach) value = csv::format_double(r.force_n);
    out += fmt::format("{},{},{},{},{},{}\n", r.method_id, r.object_id, r.trial_index, to_string(r.outcome), value,
                       csv::format_double(r.commanded_advance_mm));
  }
  csv::write_file_atomic(path, out);
}

std::vector<GraspTrialResult> load_grasp_results(const std::filesystem::path& path) {
  const auto table = csv::read_file(path);
  const std::vector<std::string> header{"method_id",     "object_id",    "trial_index",
                                        "outcome",       "value_mm_or_N", "commanded_advance_mm"};
  if (table.header != header) {
    throw DataError(fmt::format("'{}': header must be '{}'", path.string(), csv::join(header)));
  }
  std::vector<GraspTrialResult> out;
  for (const auto& row : table.rows) {
    const auto ctx = fmt::format("{}:{}", path.string(), row.line);
    GraspTrialResult r;
    r.method_id = row.fields[0];
    r.object_id = row.fields[1];
    r.trial_index = static_cast<int>(csv::parse_int(row.fields[2], ctx + " trial_index"));
    r.outcome = parse_grasp_outcome(row.fields[3]);
    r.commanded_advance_mm = csv::parse_double(row.fields[5], ctx + " commanded_advance_mm");
    if (r.outcome == GraspOutcome::CleanGrasp) {
      if (!row.fields[4].empty()) throw DataError(ctx + ": clean grasps carry no value");
    } else {
      const double v = csv::parse_double(row.fields[4], ctx + " value_mm_or_N");
      if (!(v > 0.0)) throw DataError(ctx + ": underreach/overreach values must be > 0");
      (r.outcome == GraspOutcome::Underreach ? r.distance_error_mm : r.force_n) = v;
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace proxrefl

#include "proxrefl/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "proxrefl/calibration.hpp"
#include "proxrefl/categorical.hpp"
#include "proxrefl/csv.hpp"
#include "proxrefl/dataset.hpp"
#include "proxrefl/demo.hpp"
#include "proxrefl/grasp.hpp"
#include "proxrefl/head.hpp"
#include "proxrefl/http_client.hpp"
#include "proxrefl/metrics.hpp"
#include "proxrefl/prompt.hpp"
#include "proxrefl/stats.hpp"

namespace proxrefl {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage: return kExitUsage;
    case ErrorKind::Domain:
    case ErrorKind::Data: return kExitData;
    case ErrorKind::Convergence: return kExitConvergence;
    case ErrorKind::Transport: return kExitTransport;
  }
  return kExitOther;
}

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  return fmt::format("{:04d}-{:02d}-{:02d}T{:02d}:{:02d}:{:02d}Z", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                     tm.tm_hour, tm.tm_min, tm.tm_sec);
}

struct Run {
  Run(std::ostream& o, std::ostream& e) : out(o), err(e) {}

  std::ostream& out;
  std::ostream& err;
  bool verbose = false;
  std::vector<std::string> argv;
  std::string config_file;
  std::string started_at = utc_now();
  CLI::App* command = nullptr;
};

json resolved_options(const CLI::App& app) {
  json cfg = json::object();
  for (const auto* opt : app.get_options()) {
    const auto name = opt->get_single_name();
    if (name == "help" || name.empty()) continue;
    if (name == "api-key") {
      cfg[name] = opt->count() > 0 ? "<redacted>" : "";
      continue;
    }
    if (opt->count() > 0) {
      const auto& results = opt->results();
      cfg[name] = results.size() == 1 ? json(results.front()) : json(results);
    } else {
      cfg[name] = opt->get_default_str();
    }
  }
  return cfg;
}

// Writes `<output>.meta.json` describing the run that produced `output`.
void write_metadata(const Run& run, const fs::path& output, const json& seeds, const json& extra = json::object()) {
  json meta;
  meta["toolkit_version"] = kToolkitVersion;
  meta["command"] = run.command->get_name();
  std::vector<std::string> argv;
  bool redact = false;
  for (const auto& a : run.argv) {
    if (redact) {
      argv.emplace_back("<redacted>");
      redact = false;
      continue;
    }
    if (a == "--api-key") redact = true;
    argv.push_back(a.rfind("--api-key=", 0) == 0 ? "--api-key=<redacted>" : a);
  }
  meta["argv"] = argv;
  meta["config_file"] = run.config_file;
  meta["config"] = resolved_options(*run.command);
  meta["seeds"] = seeds;
  meta["output"] = output.filename().string();
  meta["started_at"] = run.started_at;
  meta["finished_at"] = utc_now();
  for (const auto& [k, v] : extra.items()) meta[k] = v;
  csv::write_file_atomic(output.string() + ".meta.json", meta.dump(2) + "\n");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  csv::write_file_atomic(path, text);
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

// Manifest file references are relative to the manifest; re-anchor them for a new location.
Manifest rebased(Manifest m, const fs::path& new_manifest_path) {
  const auto target = fs::absolute(new_manifest_path).parent_path();
  auto fix = [&](std::vector<std::string>& files) {
    for (auto& f : files) f = fs::relative(fs::absolute(m.base_dir / f), target).generic_string();
  };
  fix(m.files.sweeps);
  fix(m.files.embeddings);
  fix(m.files.predictions);
  return m;
}

std::vector<const ObjectRecord*> objects_for(const Manifest& m, const std::string& split) {
  if (split == "all") {
    std::vector<const ObjectRecord*> out;
    for (const auto& o : m.objects) out.push_back(&o);
    return out;
  }
  if (split == "unseen") return m.objects_in(Split::Test);
  if (split == "known") return m.objects_in(Split::Train);
  return m.objects_in(parse_split(split));
}

SensorIntrinsics intrinsics_from(double d0, double n) {
  try {
    return SensorIntrinsics(d0, n);
  } catch (const DomainError& e) {
    throw UsageError(e.what());
  }
}

// ---------------------------------------------------------------- demo

struct DemoOpts {
  std::string out_dir;
  std::uint64_t seed = 7;
  int embedding_dim = kDefaultEmbeddingDim;
  int views = kViewsPerObject;
  double sweep_noise = 0.01;
  int repeats = 200;
};

void run_demo(Run& run, const DemoOpts& o) {
  DemoConfig cfg;
  cfg.seed = o.seed;
  cfg.embedding_dim = o.embedding_dim;
  cfg.views = o.views;
  cfg.sweep_noise_rel = o.sweep_noise;
  cfg.sweep_repeats = o.repeats;
  const auto data = make_demo(cfg);
  const auto files = write_demo(data, o.out_dir);
  const auto counts = data.manifest.split_counts();
  run.out << fmt::format("wrote synthetic demo data ({} objects: {} train, {} test) to {}\n",
                         data.manifest.objects.size(), counts.at(Split::Train), counts.at(Split::Test), o.out_dir);
  write_metadata(run, files.manifest, {{"demo", o.seed}},
                 {{"intrinsics", {{"d0", cfg.intrinsics.d0()}, {"n", cfg.intrinsics.n()}}}});
}

// ---------------------------------------------------------------- calibrate

struct CalibrateOpts {
  std::string manifest;
  std::string out;
  std::string report;
  double d0 = 0.0;
  double n = 0.0;
  bool clamp = false;
  bool keep_going = false;
};

void run_calibrate(Run& run, const CalibrateOpts& o) {
  const auto intr = intrinsics_from(o.d0, o.n);
  Manifest m = load_manifest(o.manifest);
  std::map<std::string, const SweepSeries*> sweeps;
  for (const auto& s : m.sweeps) sweeps[s.object_id()] = &s;

  std::string report = "object_id,alpha,raw_alpha,rms_residual,samples,out_of_range,clamped\n";
  std::vector<std::string> failures;
  double worst_rms = 0.0;
  int fitted = 0;
  for (auto& obj : m.objects) {
    const auto it = sweeps.find(obj.object_id);
    try {
      if (it == sweeps.end()) throw DataError("no sweep recorded");
      const auto r = fit_alpha(intr, *it->second, {o.clamp});
      if (r.out_of_range && !r.clamped) {
        throw DomainError(fmt::format("fitted alpha {} exceeds 1 (pass --clamp to cap it)", r.raw_alpha));
      }
      obj.true_alpha = r.reflectance();
      worst_rms = std::max(worst_rms, r.rms_residual);
      ++fitted;
      report += fmt::format("{},{},{},{},{},{},{}\n", obj.object_id, csv::format_double(r.alpha),
                            csv::format_double(r.raw_alpha), csv::format_double(r.rms_residual), r.sample_count,
                            r.out_of_range ? 1 : 0, r.clamped ? 1 : 0);
    } catch (const Error& e) {
      failures.push_back(fmt::format("{}: {}", obj.object_id, e.what()));
    }
  }
  const fs::path report_path = o.report.empty() ? fs::path(o.out).parent_path() / "calibration.csv" : fs::path(o.report);
  write_text(report_path, report);
  if (!failures.empty()) {
    for (const auto& f : failures) run.err << "calibration failed: " << f << "\n";
    if (!o.keep_going) throw DataError(fmt::format("calibration failed for {} object(s)", failures.size()), failures);
  }
  ensure_parent(o.out);
  save_manifest(rebased(m, o.out), o.out);
  run.out << fmt::format("calibrated {} of {} objects; max rms residual {:.3g}\n", fitted, m.objects.size(),
                         worst_rms);
  const json extra = {{"intrinsics", {{"d0", o.d0}, {"n", o.n}}}, {"failures", failures}};
  write_metadata(run, o.out, json::object(), extra);
  write_metadata(run, report_path, json::object(), extra);
}

// ---------------------------------------------------------------- train-head

struct TrainOpts {
  std::string manifest;
  std::string out;
  std::string loss;
  std::string fusion = "image_only";
  std::string activation = "relu";
  TrainConfig cfg;
};

void run_train(Run& run, TrainOpts o) {
  const Manifest m = load_manifest(o.manifest);
  const auto fusion = parse_fusion_mode(o.fusion);
  o.cfg.activation = parse_activation(o.activation);
  o.cfg.validate();
  if (m.objects_in(Split::Train).empty()) throw UsageError("the manifest has no train objects to fit the head on");
  const auto batch = training_batch(m, Split::Train, fusion);
  const auto result = train_head(batch, o.cfg);
  TrainedHead head{o.cfg.keep_best && result.best_params ? *result.best_params : result.params, o.cfg.activation,
                   fusion};
  ensure_parent(o.out);
  save_head(head, o.out);
  const fs::path loss_path = o.loss.empty() ? fs::path(o.out + ".loss.csv") : fs::path(o.loss);
  ensure_parent(loss_path);
  save_loss_history(result.history, loss_path);
  const double final_loss = result.history.empty() ? 0.0 : result.history.back().loss;
  run.out << fmt::format("trained {} head: input_dim {}, {} samples, final train MSE {:.6g}\n", to_string(fusion),
                         head.params.input_dim, batch.inputs.size(), final_loss);
  const json extra = {{"input_dim", head.params.input_dim}, {"fusion", to_string(fusion)},
                      {"final_train_mse", final_loss}, {"best_epoch", result.best_epoch}};
  write_metadata(run, o.out, {{"init_and_shuffle", o.cfg.seed}}, extra);
  write_metadata(run, loss_path, {{"init_and_shuffle", o.cfg.seed}}, extra);
}

// ---------------------------------------------------------------- estimate

struct EstimateOpts {
  std::string manifest;
  std::string method;
  std::string out;
  std::string method_id;
  std::string split = "test";
  int trials = 6;
  bool keep_going = false;
  // fixed
  std::optional<double> value;
  // head
  std::string head;
  bool per_view = false;
  // categorical
  double temperature = 0.05;
  std::string cat_fusion = "image_only";
  std::string likelihoods;
  // prompt
  std::string replies;
  std::string endpoint;
  std::string model;
  std::string api_key;
  std::optional<double> llm_temperature;
  double timeout = 60.0;
  int retries = 2;
  int parallelism = 1;
  std::size_t queries_per_request = 0;
  std::size_t max_examples = 0;
  std::string transcripts;
};

std::vector<PredictionRecord> repeat_trials(const std::string& method_id, const std::string& object_id, int trials,
                                            double value, std::optional<double> raw = std::nullopt) {
  std::vector<PredictionRecord> out;
  for (int t = 0; t < trials; ++t) out.push_back({method_id, object_id, t, value, raw});
  return out;
}

// Mean head estimate per object (or one view per trial with --per-view).
std::vector<PredictionRecord> estimate_head(const Manifest& m, const std::vector<const ObjectRecord*>& objects,
                                            const EstimateOpts& o, const std::string& method_id) {
  const auto head = load_head(o.head);
  const auto samples = fused_samples(m, objects, head.fusion);
  std::map<std::string, std::vector<std::pair<double, double>>> per_object;  // (clamped, raw) per view
  for (const auto& s : samples) {
    const double raw = head_forward(head.params, s.input, head.activation);
    per_object[s.object_id].emplace_back(std::clamp(raw, 0.0, 1.0), raw);
  }
  std::vector<PredictionRecord> out;
  for (const auto* obj : objects) {
    const auto& views = per_object.at(obj->object_id);
    if (o.per_view) {
      for (int t = 0; t < o.trials; ++t) {
        const auto& v = views[static_cast<std::size_t>(t) % views.size()];
        out.push_back({method_id, obj->object_id, t, v.first, v.second});
      }
      continue;
    }
    double mean = 0.0;
    double raw = 0.0;
    for (const auto& v : views) {
      mean += v.first;
      raw += v.second;
    }
    const auto k = static_cast<double>(views.size());
    auto recs = repeat_trials(method_id, obj->object_id, o.trials, mean / k, raw / k);
    out.insert(out.end(), recs.begin(), recs.end());
  }
  return out;
}

std::map<std::string, std::vector<double>> load_likelihoods(const fs::path& path,
                                                            const std::vector<Category>& categories) {
  const auto table = csv::read_file(path);
  std::vector<std::string> header{"object_id"};
  for (auto c : categories) header.push_back(to_string(c));
  if (table.header != header) {
    throw DataError(fmt::format("'{}': header must be '{}'", path.string(), csv::join(header)));
  }
  std::map<std::string, std::vector<double>> out;
  for (const auto& row : table.rows) {
    std::vector<double> p;
    for (std::size_t i = 1; i < row.fields.size(); ++i) {
      p.push_back(csv::parse_double(row.fields[i], fmt::format("{}:{}", path.string(), row.line)));
    }
    out[row.fields[0]] = std::move(p);
  }
  return out;
}

std::vector<PredictionRecord> estimate_categorical(const Manifest& m, const std::vector<const ObjectRecord*>& objects,
                                                   const EstimateOpts& o, const std::string& method_id) {
  const auto fusion = parse_fusion_mode(o.cat_fusion);
  const auto model = CategoricalModel::fit(m, fusion, o.temperature);
  std::vector<PredictionRecord> out;
  if (!o.likelihoods.empty()) {
    const auto table = load_likelihoods(o.likelihoods, model.categories);
    std::vector<std::string> missing;
    for (const auto* obj : objects) {
      const auto it = table.find(obj->object_id);
      if (it == table.end()) {
        missing.push_back(obj->object_id);
        continue;
      }
      auto recs = repeat_trials(method_id, obj->object_id, o.trials, categorical_expectation(it->second, model.alphas));
      out.insert(out.end(), recs.begin(), recs.end());
    }
    if (!missing.empty()) throw DataError("likelihood table lacks objects", missing);
    return out;
  }
  std::map<std::string, std::vector<double>> per_object;
  for (const auto& s : fused_samples(m, objects, fusion)) per_object[s.object_id].push_back(model.estimate(s.input));
  for (const auto* obj : objects) {
    const auto& v = per_object.at(obj->object_id);
    auto recs = repeat_trials(method_id, obj->object_id, o.trials,
                              std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()));
    out.insert(out.end(), recs.begin(), recs.end());
  }
  return out;
}

std::vector<PredictionRecord> estimate_prompt(Run& run, const Manifest& m,
                                              const std::vector<const ObjectRecord*>& objects, const EstimateOpts& o,
                                              const std::string& method_id, json& extra) {
  std::unique_ptr<CompletionClient> client;
  if (!o.replies.empty() && !o.endpoint.empty()) throw UsageError("pass either --replies or --endpoint, not both");
  if (!o.replies.empty()) {
    client = std::make_unique<ReplayClient>(ReplayClient::from_file(o.replies));
  } else if (!o.endpoint.empty()) {
    if (o.model.empty()) throw UsageError("--endpoint needs --model");
    ClientConfig cc{o.endpoint, o.model, o.timeout, o.retries, o.parallelism};
    client = std::make_unique<HttpChatClient>(
        cc, o.api_key.empty() ? std::nullopt : std::optional<std::string>(o.api_key), o.llm_temperature);
  } else {
    throw UsageError("the prompt method needs --replies (canned replies) or --endpoint");
  }

  auto spec = PromptSpec::with_default_template();
  for (const auto* obj : m.objects_in(Split::Train)) {
    if (!obj->true_alpha) continue;
    if (o.max_examples > 0 && spec.examples.size() >= o.max_examples) break;
    spec.examples.push_back({obj->name, obj->true_alpha->value()});
  }
  if (spec.examples.empty()) throw DataError("the prompt needs train objects with true_alpha as examples");
  std::vector<PromptQuery> queries;
  for (const auto* obj : objects) {
    queries.push_back({obj->object_id, obj->name});
    spec.query_names.push_back(obj->name);
  }

  EstimateOptions eo;
  eo.method_id = method_id;
  eo.trials = o.trials;
  eo.max_retries = o.retries;
  eo.parallelism = o.parallelism;
  eo.queries_per_request = o.queries_per_request;
  const auto result = estimate(queries, spec, *client, eo);
  if (!o.transcripts.empty()) {
    ensure_parent(o.transcripts);
    save_transcripts(result.transcripts, o.transcripts);
  }
  extra["client"] = client->describe();
  extra["prompt_template_version"] = kPromptTemplateVersion;
  extra["examples"] = spec.examples.size();
  if (!result.protocol_errors.empty()) {
    std::vector<std::string> issues;
    for (const auto& e : result.protocol_errors) {
      issues.push_back(fmt::format("{} (trial {}): {}", e.object_id, e.trial, e.message));
      run.err << "protocol error: " << issues.back() << "\n";
    }
    extra["protocol_errors"] = issues;
    if (!o.keep_going) {
      throw DataError(fmt::format("{} quer(ies) had no usable reply", issues.size()), issues);
    }
  }
  return result.records;
}

void run_estimate(Run& run, const EstimateOpts& o) {
  const Manifest m = load_manifest(o.manifest);
  if (o.trials < 1) throw UsageError("--trials must be >= 1");
  const auto objects = objects_for(m, o.split);
  if (objects.empty()) throw UsageError(fmt::format("no objects in split '{}'", o.split));

  std::string method_id = o.method_id;
  std::vector<PredictionRecord> records;
  json extra = json::object();
  if (o.method == "fixed") {
    if (!o.value) throw UsageError("the fixed method needs --value");
    if (!(*o.value > 0.0 && *o.value <= 1.0)) throw UsageError("--value must lie in (0, 1]");
    if (method_id.empty()) method_id = fixed_method_id(*o.value);
    for (const auto* obj : objects) {
      auto recs = repeat_trials(method_id, obj->object_id, o.trials, *o.value);
      records.insert(records.end(), recs.begin(), recs.end());
    }
  } else if (o.method == "head") {
    if (o.head.empty()) throw UsageError("the head method needs --head");
    if (method_id.empty()) method_id = "head_" + to_string(load_head(o.head).fusion);
    records = estimate_head(m, objects, o, method_id);
  } else if (o.method == "categorical") {
    if (method_id.empty()) method_id = "categorical";
    records = estimate_categorical(m, objects, o, method_id);
  } else if (o.method == "prompt") {
    if (method_id.empty()) method_id = "prompt";
    records = estimate_prompt(run, m, objects, o, method_id, extra);
  } else {
    throw UsageError(fmt::format("unknown method '{}' (expected fixed, head, prompt or categorical)", o.method));
  }
  ensure_parent(o.out);
  save_predictions(records, o.out);
  run.out << fmt::format("wrote {} predictions for {} objects ({})\n", records.size(), objects.size(), method_id);
  extra["method_id"] = method_id;
  write_metadata(run, o.out, json::object(), extra);
}

// ---------------------------------------------------------------- grasp-sim

struct GraspOpts {
  std::string manifest;
  std::vector<std::string> predictions;
  std::vector<std::string> methods;
  std::string out;
  std::string summary;
  std::string split = "test";
  double d0 = 0.0;
  double n = 0.0;
  ProtocolConfig cfg;
  std::optional<double> deformation_limit;
  bool keep_going = false;
};

void run_grasp(Run& run, GraspOpts o) {
  const Manifest m = load_manifest(o.manifest);
  o.cfg.intrinsics = intrinsics_from(o.d0, o.n);
  o.cfg.deformation_limit_mm = o.deformation_limit;

  std::vector<PredictionRecord> predictions;
  for (const auto& p : o.predictions) {
    auto recs = load_predictions(p);
    predictions.insert(predictions.end(), recs.begin(), recs.end());
  }
  std::vector<std::string> prediction_methods;
  for (const auto& p : predictions) {
    if (std::find(prediction_methods.begin(), prediction_methods.end(), p.method_id) == prediction_methods.end()) {
      prediction_methods.push_back(p.method_id);
    }
  }
  auto names = o.methods;
  if (names.empty()) {
    names = {"fixed:0.5", "fixed:1.0", "ground_truth"};
    for (const auto& id : prediction_methods) {
      if (id != fixed_method_id(0.5) && id != fixed_method_id(1.0) && id != "ground_truth") names.push_back(id);
    }
  }
  std::vector<EstimatorBinding> bindings;
  for (const auto& name : names) {
    if (name.rfind("fixed:", 0) == 0) {
      const double v = csv::parse_double(name.substr(6), "--methods " + name);
      if (!(v > 0.0 && v <= 1.0)) throw UsageError(fmt::format("fixed value in '{}' must lie in (0, 1]", name));
      bindings.push_back(fixed_binding(v));
    } else if (name == "ground_truth") {
      bindings.push_back(ground_truth_binding());
    } else if (std::find(prediction_methods.begin(), prediction_methods.end(), name) != prediction_methods.end()) {
      bindings.push_back(prediction_binding(name, predictions));
    } else {
      throw UsageError(fmt::format("method '{}' is neither fixed:<v>, ground_truth, nor in the prediction files", name));
    }
    for (std::size_t i = 0; i + 1 < bindings.size(); ++i) {
      if (bindings[i].method_id == bindings.back().method_id) {
        throw UsageError(fmt::format("method id '{}' is listed twice", bindings.back().method_id));
      }
    }
  }

  std::vector<ObjectRecord> objects;
  for (const auto* obj : objects_for(m, o.split)) objects.push_back(*obj);
  if (objects.empty()) throw UsageError(fmt::format("no objects in split '{}'", o.split));
  const auto result = run_protocol(objects, bindings, o.cfg);
  std::vector<std::string> failures;
  for (const auto& f : result.failures) {
    failures.push_back(fmt::format("{} / {}: {}", f.method_id, f.object_id, f.message));
    run.err << "grasp skipped: " << failures.back() << "\n";
  }
  if (!failures.empty() && !o.keep_going) {
    throw DataError(fmt::format("{} (method, object) pair(s) could not be simulated", failures.size()), failures);
  }
  if (result.results.empty()) throw DataError("no grasp trials were simulated");
  ensure_parent(o.out);
  save_grasp_results(result.results, o.out);
  const auto table = grasp_table_view(grasp_summary(result.results)).render_text();
  run.out << fmt::format("simulated {} grasps ({} methods x {} objects x {} repetitions)\n", result.results.size(),
                         bindings.size(), objects.size(), o.cfg.repetitions)
          << table;
  const json extra = {{"intrinsics", {{"d0", o.d0}, {"n", o.n}}}, {"failures", failures}};
  if (!o.summary.empty()) {
    write_text(o.summary, table);
    write_metadata(run, o.summary, {{"protocol", o.cfg.seed}}, extra);
  }
  write_metadata(run, o.out, {{"protocol", o.cfg.seed}}, extra);
}

// ---------------------------------------------------------------- evaluate

struct EvaluateOpts {
  std::string manifest;
  std::vector<std::string> predictions;
  std::string grasp;
  std::string out_dir;
  std::string std_estimator = "population";
  std::string test = "mann_whitney";
  std::string correction = "none";
  std::string split = "unseen";
  bool markup = false;
};

void run_evaluate(Run& run, const EvaluateOpts& o) {
  if (o.predictions.empty() && o.grasp.empty()) throw UsageError("pass --predictions and/or --grasp");
  StdEstimator est;
  if (o.std_estimator == "population") {
    est = StdEstimator::Population;
  } else if (o.std_estimator == "sample") {
    est = StdEstimator::Sample;
  } else {
    throw UsageError("--std must be population or sample");
  }
  const auto test = parse_significance_test(o.test);
  const auto correction = parse_correction(o.correction);
  const Split sig_split = o.split == "known" || o.split == "train" ? Split::Train : Split::Test;
  const fs::path dir = o.out_dir;
  fs::create_directories(dir);
  std::vector<fs::path> written;
  auto emit = [&](const std::string& file, const std::string& text) {
    write_text(dir / file, text);
    written.push_back(dir / file);
  };

  if (!o.predictions.empty()) {
    const Manifest m = load_manifest(o.manifest);
    std::vector<PredictionRecord> predictions;
    for (const auto& p : o.predictions) {
      auto recs = load_predictions(p);
      predictions.insert(predictions.end(), recs.begin(), recs.end());
    }
    const auto summaries = reflectance_error_table(predictions, m, est);
    const auto table = error_table_view(summaries, {}, o.markup).render_text();
    const auto fusion = fusion_table_view(summaries, {}, o.markup).render_text();
    run.out << "Mean absolute reflectance error\n" << table << "\n" << fusion << "\n";
    emit("reflectance_errors.csv", error_table_csv(summaries).render_csv());
    emit("reflectance_table.txt", table);
    emit("fusion_table.txt", fusion);
    const auto samples = error_samples(predictions, m, sig_split);
    if (samples.size() >= 2) {
      const auto sig = significance_matrix(samples, test, correction);
      const auto view = significance_view(sig).render_text();
      run.out << fmt::format("Significance of absolute errors ({}, {}, {})\n", split_label(sig_split),
                             to_string(test), to_string(correction))
              << view << "\n";
      emit("error_significance.csv", significance_csv(sig).render_csv());
      emit("error_significance.txt", view);
    }
  }

  if (!o.grasp.empty()) {
    const auto results = load_grasp_results(o.grasp);
    const auto summary = grasp_summary(results, est);
    const auto by_object = grasp_summary_by_object(results, est);
    const auto table = grasp_table_view(summary, {}, o.markup).render_text();
    run.out << "Grasp outcomes\n" << table << "\n";
    emit("grasp_summary.csv", grasp_table_csv(summary).render_csv());
    emit("grasp_by_object.csv", grasp_table_csv(by_object).render_csv());
    emit("grasp_table.txt", table);
    emit("grasp_by_object.txt", grasp_table_view(by_object).render_text());
    for (auto metric : {GraspMetric::Distance, GraspMetric::Force}) {
      const auto samples = grasp_samples(results, metric);
      if (samples.size() < 2) continue;
      const auto sig = significance_matrix(samples, test, correction);
      const std::string label = metric == GraspMetric::Distance ? "distance" : "force";
      const auto view = significance_view(sig).render_text();
      run.out << fmt::format("Significance of grasp {} ({}, {})\n", label, to_string(test), to_string(correction))
              << view << "\n";
      emit(fmt::format("significance_{}.csv", label), significance_csv(sig).render_csv());
      emit(fmt::format("significance_{}.txt", label), view);
    }
  }
  std::vector<std::string> names;
  for (const auto& p : written) names.push_back(p.filename().string());
  write_metadata(run, dir / "evaluate", json::object(), {{"outputs", names}});
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Reflectance estimation and proximity-sensing toolkit", "proxrefl"};
  app.set_version_flag("--version", kToolkitVersion);
  app.require_subcommand(1);
  Run run(out, err);
  run.argv = args;
  app.add_flag("-v,--verbose", run.verbose, "Print the configuration precedence and resolved options");
  app.set_config("--config", "", "TOML/INI file providing option values ([subcommand] sections)");

  DemoOpts demo;
  auto* c_demo = app.add_subcommand("demo", "Generate the synthetic demo data set (not measured data)");
  c_demo->add_option("--out", demo.out_dir, "Output directory")->required();
  c_demo->add_option("--seed", demo.seed, "Generator seed")->capture_default_str();
  c_demo->add_option("--embedding-dim", demo.embedding_dim, "Embedding dimension")->capture_default_str();
  c_demo->add_option("--views", demo.views, "Image views per object")->capture_default_str();
  c_demo->add_option("--sweep-noise", demo.sweep_noise, "Relative sensor noise per reading")->capture_default_str();
  c_demo->add_option("--repeats", demo.repeats, "Readings averaged per sweep distance")->capture_default_str();

  CalibrateOpts cal;
  auto* c_cal = app.add_subcommand("calibrate", "Fit alpha per object from its sweep and write true_alpha");
  c_cal->add_option("--manifest", cal.manifest, "Input manifest")->required()->check(CLI::ExistingFile);
  c_cal->add_option("--out", cal.out, "Output manifest with true_alpha filled in")->required();
  c_cal->add_option("--report", cal.report, "Per-object fit report CSV (default: calibration.csv next to --out)");
  c_cal->add_option("--d0", cal.d0, "Sensor offset d0 [mm]")->required();
  c_cal->add_option("--n", cal.n, "Sensor decay exponent n")->required();
  c_cal->add_flag("--clamp", cal.clamp, "Clamp fitted alpha above 1 to 1 instead of failing");
  c_cal->add_flag("--keep-going", cal.keep_going, "Write the manifest even if some objects fail");

  TrainOpts tr;
  auto* c_tr = app.add_subcommand("train-head", "Train the regression head on train-split embeddings");
  c_tr->add_option("--manifest", tr.manifest, "Calibrated manifest")->required()->check(CLI::ExistingFile);
  c_tr->add_option("--out", tr.out, "Head parameter file")->required();
  c_tr->add_option("--loss", tr.loss, "Loss history CSV (default: <out>.loss.csv)");
  c_tr->add_option("--fusion", tr.fusion, "image_only, text_only, add or concat")->capture_default_str();
  c_tr->add_option("--activation", tr.activation, "relu or tanh")->capture_default_str();
  c_tr->add_option("--epochs", tr.cfg.epochs)->capture_default_str();
  c_tr->add_option("--lr", tr.cfg.learning_rate, "Initial learning rate")->capture_default_str();
  c_tr->add_option("--lr-floor", tr.cfg.lr_floor, "Learning rate at the last epoch")->capture_default_str();
  c_tr->add_option("--batch-size", tr.cfg.batch_size, "Mini-batch size, 0 = full batch")->capture_default_str();
  c_tr->add_option("--hidden", tr.cfg.hidden_units, "Hidden units")->capture_default_str();
  c_tr->add_option("--seed", tr.cfg.seed, "Initialisation and shuffling seed")->capture_default_str();
  c_tr->add_flag("--keep-best", tr.cfg.keep_best, "Save the epoch with the lowest training loss");

  EstimateOpts es;
  auto* c_es = app.add_subcommand("estimate", "Predict alpha for the objects of a split");
  c_es->add_option("--manifest", es.manifest, "Manifest")->required()->check(CLI::ExistingFile);
  c_es->add_option("--method", es.method, "fixed, head, prompt or categorical")->required();
  c_es->add_option("--out", es.out, "Predictions CSV")->required();
  c_es->add_option("--method-id", es.method_id, "Method id written to the predictions");
  c_es->add_option("--split", es.split, "test, train or all")->capture_default_str();
  c_es->add_option("--trials", es.trials, "Trials per object")->capture_default_str();
  c_es->add_flag("--keep-going", es.keep_going, "Write predictions even if some prompt replies are unusable");
  c_es->add_option("--value", es.value, "fixed: the constant alpha");
  c_es->add_option("--head", es.head, "head: parameter file from train-head");
  c_es->add_flag("--per-view", es.per_view, "head: trial t uses image view t instead of the mean over views");
  c_es->add_option("--temperature", es.temperature, "categorical: softmax temperature")->capture_default_str();
  c_es->add_option("--fusion", es.cat_fusion, "categorical: embedding used for centroids")->capture_default_str();
  c_es->add_option("--likelihoods", es.likelihoods, "categorical: CSV object_id,<category>... overriding centroids");
  c_es->add_option("--replies", es.replies, "prompt: canned reply file replayed instead of a live model");
  c_es->add_option("--endpoint", es.endpoint, "prompt: chat-completions URL");
  c_es->add_option("--model", es.model, "prompt: model name");
  c_es->add_option("--api-key", es.api_key, "prompt: bearer token")->envname(kApiKeyEnv);
  c_es->add_option("--llm-temperature", es.llm_temperature, "prompt: sampling temperature");
  c_es->add_option("--timeout", es.timeout, "prompt: request timeout [s]")->capture_default_str();
  c_es->add_option("--retries", es.retries, "prompt: retries per request")->capture_default_str();
  c_es->add_option("--parallelism", es.parallelism, "prompt: concurrent requests")->capture_default_str();
  c_es->add_option("--queries-per-request", es.queries_per_request, "prompt: 0 = all in one request")
      ->capture_default_str();
  c_es->add_option("--max-examples", es.max_examples, "prompt: few-shot examples, 0 = all train objects")
      ->capture_default_str();
  c_es->add_option("--transcripts", es.transcripts, "prompt: JSONL transcript output");

  GraspOpts gr;
  auto* c_gr = app.add_subcommand("grasp-sim", "Simulate grasps for each method and object");
  c_gr->add_option("--manifest", gr.manifest, "Calibrated manifest")->required()->check(CLI::ExistingFile);
  c_gr->add_option("--predictions", gr.predictions, "Prediction CSV files")->check(CLI::ExistingFile);
  c_gr->add_option("--methods", gr.methods, "fixed:<v>, ground_truth or a prediction method id")->delimiter(',');
  c_gr->add_option("--out", gr.out, "Grasp results CSV")->required();
  c_gr->add_option("--summary", gr.summary, "Also write the summary table here");
  c_gr->add_option("--split", gr.split, "test, train or all")->capture_default_str();
  c_gr->add_option("--d0", gr.d0, "Sensor offset d0 [mm]")->required();
  c_gr->add_option("--n", gr.n, "Sensor decay exponent n")->required();
  c_gr->add_option("--repetitions", gr.cfg.repetitions)->capture_default_str();
  c_gr->add_option("--seed", gr.cfg.seed, "Sensor-noise seed")->capture_default_str();
  c_gr->add_option("--standoff", gr.cfg.standoff_mm, "Start distance [mm]")->capture_default_str();
  c_gr->add_option("--tolerance", gr.cfg.tolerance_mm, "Clean-grasp tolerance [mm]")->capture_default_str();
  c_gr->add_option("--noise", gr.cfg.noise_rel, "Relative sensor noise")->capture_default_str();
  c_gr->add_option("--max-force", gr.cfg.max_force_n, "Gripper force limit [N]")->capture_default_str();
  c_gr->add_option("--default-stiffness", gr.cfg.default_stiffness_n_per_mm, "Stiffness for objects without one [N/mm]")
      ->capture_default_str();
  c_gr->add_option("--deformation-limit", gr.deformation_limit, "Overshoot beyond which force saturates [mm]");
  c_gr->add_option("--threads", gr.cfg.threads)->capture_default_str();
  c_gr->add_flag("--keep-going", gr.keep_going, "Skip (method, object) pairs without an estimate");

  EvaluateOpts ev;
  auto* c_ev = app.add_subcommand("evaluate", "Error, grasp and significance tables");
  c_ev->add_option("--manifest", ev.manifest, "Calibrated manifest")->check(CLI::ExistingFile);
  c_ev->add_option("--predictions", ev.predictions, "Prediction CSV files")->check(CLI::ExistingFile);
  c_ev->add_option("--grasp", ev.grasp, "Grasp results CSV")->check(CLI::ExistingFile);
  c_ev->add_option("--out-dir", ev.out_dir, "Directory for the tables")->required();
  c_ev->add_option("--std", ev.std_estimator, "population or sample")->capture_default_str();
  c_ev->add_option("--test", ev.test, "mann_whitney or welch")->capture_default_str();
  c_ev->add_option("--correction", ev.correction, "none, bonferroni or holm")->capture_default_str();
  c_ev->add_option("--split", ev.split, "Split for error significance: unseen or known")->capture_default_str();
  c_ev->add_flag("--markup", ev.markup, "Mark best (**v**) and second best (_v_) per column");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  for (auto* sub : app.get_subcommands()) run.command = sub;
  const auto* config_opt = app.get_config_ptr();
  run.config_file = config_opt != nullptr && config_opt->count() > 0 ? config_opt->as<std::string>() : "";
  if (run.verbose) {
    err << fmt::format("configuration precedence: command-line flags > config file ({}) > environment ({}) > defaults\n",
                       run.config_file.empty() ? "none" : run.config_file, kApiKeyEnv);
    err << resolved_options(*run.command).dump(2) << "\n";
  }

  try {
    if (run.command == c_demo) run_demo(run, demo);
    if (run.command == c_cal) run_calibrate(run, cal);
    if (run.command == c_tr) run_train(run, tr);
    if (run.command == c_es) run_estimate(run, es);
    if (run.command == c_gr) run_grasp(run, gr);
    if (run.command == c_ev) {
      if (!ev.predictions.empty() && ev.manifest.empty()) throw UsageError("--predictions needs --manifest");
      run_evaluate(run, ev);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitOther;
  }
  return kExitOk;
}

}  // namespace proxrefl

#pragma once

// Evaluation tables: reflectance error per method and split, grasp outcome
// summaries, and pairwise significance matrices. Every builder returns a
// DisplayTable that renders either as aligned text or as CSV. Empty cells
// (no contributing trials) print as "-" in text and as an empty CSV field.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "proxrefl/dataset.hpp"
#include "proxrefl/grasp.hpp"
#include "proxrefl/stats.hpp"

namespace proxrefl {

// Train objects are reported as "known", test objects as "unseen".
std::string split_label(Split s);

struct ErrorSummary {
  std::string method_id;
  Split split = Split::Test;
  double mean_abs_error = 0.0;
  double std_abs_error = 0.0;
  int n = 0;  // contributing (object, trial) pairs
  std::map<Category, SampleStats> per_category;
};

// Absolute error per prediction, grouped by method x split. Rows come out in
// order of first appearance of the method, then known before unseen; splits
// without predictions are omitted. Throws DataError listing every prediction
// whose object is unknown or lacks true_alpha.
std::vector<ErrorSummary> reflectance_error_table(const std::vector<PredictionRecord>& predictions,
                                                  const Manifest& manifest,
                                                  StdEstimator estimator = StdEstimator::Population);

// Per-trial absolute errors of each method on one split, for significance testing.
std::vector<NamedSample> error_samples(const std::vector<PredictionRecord>& predictions, const Manifest& manifest,
                                       Split split);

struct GraspSummaryRow {
  std::string method_id;
  std::string object_id;  // empty for per-method rows
  std::optional<SampleStats> distance_mm;  // over underreach trials only
  std::optional<SampleStats> force_n;      // over overreach trials only
  int clean = 0;
  int underreach = 0;
  int overreach = 0;
};

// One row per method in order of first appearance. Throws DomainError on empty input.
std::vector<GraspSummaryRow> grasp_summary(const std::vector<GraspTrialResult>& results,
                                           StdEstimator estimator = StdEstimator::Population);
std::vector<GraspSummaryRow> grasp_summary_by_object(const std::vector<GraspTrialResult>& results,
                                                     StdEstimator estimator = StdEstimator::Population);

enum class GraspMetric { Distance, Force };

// Distance errors of underreach trials (or forces of overreach trials) per method.
std::vector<NamedSample> grasp_samples(const std::vector<GraspTrialResult>& results, GraspMetric metric);

// Presentation metadata for a method row.
struct MethodInfo {
  std::string display_name;
  std::string group;        // e.g. "Baseline", "VLM", "LLM"
  std::string pretraining;  // pre-training dataset, "*" if not disclosed
  std::string backbone;
  std::string input_modal;  // "Image-only", "Text-only", "Image and text"
  std::string combined_by;  // "Addition", "Concatenation", or "-"
};

// Derived from the method id conventions used by the `estimate` command
// (fixed_<v>, ground_truth, head_<fusion>, categorical, prompt).
MethodInfo default_method_info(const std::string& method_id);

struct DisplayTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::optional<std::string>>> rows;  // nullopt = no data

  std::string render_text() const;
  std::string render_csv() const;
};

// "0.118 ± 0.094" at three decimals.
std::string format_mean_std(const SampleStats& s);

using MethodInfoMap = std::map<std::string, MethodInfo>;

// Group, method, pre-training, known, unseen. With `markup`, the lowest and
// second-lowest mean in each split column are wrapped as **v** and _v_.
DisplayTable error_table_view(const std::vector<ErrorSummary>& summaries, const MethodInfoMap& info = {},
                              bool markup = false);

// Long form: method_id,split,category,mean_abs_error,std_abs_error,n with
// category "all" for the overall row. Full precision.
DisplayTable error_table_csv(const std::vector<ErrorSummary>& summaries);

// Backbone, pre-training, input modal, combined by, unseen; one row per method
// that has unseen-split predictions and a known backbone.
DisplayTable fusion_table_view(const std::vector<ErrorSummary>& summaries, const MethodInfoMap& info = {},
                               bool markup = false);

// Method, distance error [mm], force [N]. Per-object rows add an object column.
DisplayTable grasp_table_view(const std::vector<GraspSummaryRow>& rows, const MethodInfoMap& info = {},
                              bool markup = false);
// method_id[,object_id],clean,underreach,overreach,distance_mean,distance_std,distance_n,force_mean,force_std,force_n
DisplayTable grasp_table_csv(const std::vector<GraspSummaryRow>& rows);

// Lower-triangular layout: rows are methods[1..], columns methods[0..n-2].
// Pairs without a p-value show "-"; the upper triangle is blank.
DisplayTable significance_view(const SignificanceMatrix& m, const MethodInfoMap& info = {});
// method_a,method_b,test,correction,p_value,label,note
DisplayTable significance_csv(const SignificanceMatrix& m);

}  // namespace proxrefl

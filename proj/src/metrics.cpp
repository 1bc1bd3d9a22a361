#include "proxrefl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "proxrefl/csv.hpp"
#include "proxrefl/errors.hpp"

namespace proxrefl {

std::string split_label(Split s) { return s == Split::Train ? "known" : "unseen"; }

namespace {

template <typename Key>
std::vector<Key> first_appearance(const std::vector<Key>& keys) {
  std::vector<Key> order;
  std::set<Key> seen;
  for (const auto& k : keys) {
    if (seen.insert(k).second) order.push_back(k);
  }
  return order;
}

struct ScoredPrediction {
  const PredictionRecord* record;
  const ObjectRecord* object;
  double abs_error;
};

std::vector<ScoredPrediction> score(const std::vector<PredictionRecord>& predictions, const Manifest& manifest) {
  std::vector<ScoredPrediction> out;
  std::vector<std::string> violations;
  std::set<std::string> reported;
  for (const auto& p : predictions) {
    const auto* obj = manifest.find(p.object_id);
    if (obj == nullptr) {
      if (reported.insert(p.object_id).second) violations.push_back(fmt::format("unknown object '{}'", p.object_id));
      continue;
    }
    if (!obj->true_alpha) {
      if (reported.insert(p.object_id).second) {
        violations.push_back(fmt::format("object '{}' has no true_alpha", p.object_id));
      }
      continue;
    }
    out.push_back({&p, obj, std::abs(p.predicted_alpha - obj->true_alpha->value())});
  }
  if (!violations.empty()) throw DataError("cannot score predictions without ground truth", violations);
  return out;
}

std::vector<std::string> method_order(const std::vector<PredictionRecord>& predictions) {
  std::vector<std::string> ids;
  ids.reserve(predictions.size());
  for (const auto& p : predictions) ids.push_back(p.method_id);
  return first_appearance(ids);
}

}  // namespace

std::vector<ErrorSummary> reflectance_error_table(const std::vector<PredictionRecord>& predictions,
                                                  const Manifest& manifest, StdEstimator estimator) {
  const auto scored = score(predictions, manifest);
  std::vector<ErrorSummary> out;
  for (const auto& method : method_order(predictions)) {
    for (Split split : {Split::Train, Split::Test}) {
      std::vector<double> all;
      std::map<Category, std::vector<double>> by_cat;
      for (const auto& s : scored) {
        if (s.record->method_id != method || s.object->split != split) continue;
        all.push_back(s.abs_error);
        by_cat[s.object->category].push_back(s.abs_error);
      }
      if (all.empty()) continue;
      ErrorSummary e;
      e.method_id = method;
      e.split = split;
      const auto st = describe(all, estimator);
      e.mean_abs_error = st.mean;
      e.std_abs_error = st.std;
      e.n = st.n;
      for (const auto& [cat, values] : by_cat) e.per_category[cat] = describe(values, estimator);
      out.push_back(std::move(e));
    }
  }
  return out;
}

std::vector<NamedSample> error_samples(const std::vector<PredictionRecord>& predictions, const Manifest& manifest,
                                       Split split) {
  const auto scored = score(predictions, manifest);
  std::vector<NamedSample> out;
  for (const auto& method : method_order(predictions)) {
    NamedSample s{method, {}};
    for (const auto& p : scored) {
      if (p.record->method_id == method && p.object->split == split) s.values.push_back(p.abs_error);
    }
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

std::vector<GraspSummaryRow> summarize(const std::vector<GraspTrialResult>& results, StdEstimator estimator,
                                       bool by_object) {
  if (results.empty()) throw DomainError("grasp summary needs at least one trial");
  using Key = std::pair<std::string, std::string>;
  std::vector<Key> keys;
  keys.reserve(results.size());
  for (const auto& r : results) keys.emplace_back(r.method_id, by_object ? r.object_id : std::string{});

  std::vector<GraspSummaryRow> out;
  for (const auto& key : first_appearance(keys)) {
    GraspSummaryRow row;
    row.method_id = key.first;
    row.object_id = key.second;
    std::vector<double> distances;
    std::vector<double> forces;
    for (const auto& r : results) {
      if (r.method_id != key.first || (by_object && r.object_id != key.second)) continue;
      switch (r.outcome) {
        case GraspOutcome::CleanGrasp: ++row.clean; break;
        case GraspOutcome::Underreach:
          ++row.underreach;
          distances.push_back(r.distance_error_mm);
          break;
        case GraspOutcome::Overreach:
          ++row.overreach;
          forces.push_back(r.force_n);
          break;
      }
    }
    if (!distances.empty()) row.distance_mm = describe(distances, estimator);
    if (!forces.empty()) row.force_n = describe(forces, estimator);
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace

std::vector<GraspSummaryRow> grasp_summary(const std::vector<GraspTrialResult>& results, StdEstimator estimator) {
  return summarize(results, estimator, false);
}

std::vector<GraspSummaryRow> grasp_summary_by_object(const std::vector<GraspTrialResult>& results,
                                                     StdEstimator estimator) {
  return summarize(results, estimator, true);
}

std::vector<NamedSample> grasp_samples(const std::vector<GraspTrialResult>& results, GraspMetric metric) {
  std::vector<std::string> ids;
  for (const auto& r : results) ids.push_back(r.method_id);
  std::vector<NamedSample> out;
  for (const auto& method : first_appearance(ids)) {
    NamedSample s{method, {}};
    for (const auto& r : results) {
      if (r.method_id != method) continue;
      if (metric == GraspMetric::Distance && r.outcome == GraspOutcome::Underreach) s.values.push_back(r.distance_error_mm);
      if (metric == GraspMetric::Force && r.outcome == GraspOutcome::Overreach) s.values.push_back(r.force_n);
    }
    out.push_back(std::move(s));
  }
  return out;
}

MethodInfo default_method_info(const std::string& method_id) {
  MethodInfo info{method_id, "Other", "-", "-", "-", "-"};
  if (method_id.rfind("fixed_", 0) == 0) {
    info.display_name = fmt::format("Fixed ({})", method_id.substr(6));
    info.group = "Baseline";
  } else if (method_id == "ground_truth") {
    info.display_name = "Ground truth";
    info.group = "Baseline";
  } else if (method_id.rfind("head", 0) == 0) {
    info.group = "VLM";
    info.pretraining = "WebImageText";
    info.backbone = "ViT-B/32";
    const auto fusion = method_id.size() > 5 ? method_id.substr(5) : std::string("image_only");
    if (fusion == "text_only") {
      info.backbone = "Transformer";
      info.input_modal = "Text-only";
    } else if (fusion == "add" || fusion == "concat") {
      info.input_modal = "Image and text";
      info.combined_by = fusion == "add" ? "Addition" : "Concatenation";
    } else {
      info.input_modal = "Image-only";
    }
    info.display_name = fmt::format("Head ({})", fusion);
  } else if (method_id == "categorical") {
    info.display_name = "Categorical expectation";
    info.group = "Baseline";
    info.input_modal = "Image-only";
  } else if (method_id.rfind("prompt", 0) == 0) {
    info.display_name = "Prompt";
    info.group = "LLM";
    info.pretraining = "*";
    info.input_modal = "Text-only";
  }
  return info;
}

namespace {

std::size_t display_width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

const MethodInfo info_for(const MethodInfoMap& info, const std::string& id) {
  const auto it = info.find(id);
  return it != info.end() ? it->second : default_method_info(id);
}

std::optional<std::string> stats_cell(const std::optional<SampleStats>& s) {
  if (!s) return std::nullopt;
  return format_mean_std(*s);
}

// Wraps the lowest and second-lowest entries of one column.
void apply_markup(DisplayTable& table, std::size_t column, const std::vector<std::optional<double>>& means) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < means.size(); ++i) {
    if (means[i]) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return *means[a] < *means[b]; });
  if (!order.empty()) table.rows[order[0]][column] = fmt::format("**{}**", *table.rows[order[0]][column]);
  if (order.size() > 1) table.rows[order[1]][column] = fmt::format("_{}_", *table.rows[order[1]][column]);
}

std::optional<std::string> opt_double(const std::optional<double>& v) {
  if (!v) return std::nullopt;
  return csv::format_double(*v);
}

}  // namespace

std::string DisplayTable::render_text() const {
  std::vector<std::size_t> widths(header.size(), 0);
  for (std::size_t c = 0; c < header.size(); ++c) widths[c] = display_width(header[c]);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size() && c < widths.size(); ++c) {
      widths[c] = std::max(widths[c], display_width(row[c].value_or("-")));
    }
  }
  auto line = [&](const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c > 0) out += "  ";
      out += cells[c];
      if (c + 1 < cells.size()) out.append(widths[c] - display_width(cells[c]), ' ');
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out + "\n";
  };
  std::string out = line(header);
  std::size_t total = 0;
  for (auto w : widths) total += w;
  out += std::string(total + 2 * (widths.empty() ? 0 : widths.size() - 1), '-') + "\n";
  for (const auto& row : rows) {
    std::vector<std::string> cells;
    for (const auto& cell : row) cells.push_back(cell.value_or("-"));
    out += line(cells);
  }
  return out;
}

std::string DisplayTable::render_csv() const {
  std::string out;
  for (std::size_t c = 0; c < header.size(); ++c) out += (c ? "," : "") + csv_field(header[c]);
  out += "\n";
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) out += (c ? "," : "") + csv_field(row[c].value_or(""));
    out += "\n";
  }
  return out;
}

std::string format_mean_std(const SampleStats& s) { return fmt::format("{:.3f} ± {:.3f}", s.mean, s.std); }

DisplayTable error_table_view(const std::vector<ErrorSummary>& summaries, const MethodInfoMap& info, bool markup) {
  DisplayTable t{{"Group", "Method", "Pre-training dataset", "Known objects", "Unseen objects"}, {}};
  std::vector<std::string> ids;
  for (const auto& s : summaries) ids.push_back(s.method_id);
  std::vector<std::optional<double>> known_means;
  std::vector<std::optional<double>> unseen_means;
  for (const auto& id : first_appearance(ids)) {
    const auto mi = info_for(info, id);
    std::optional<std::string> known;
    std::optional<std::string> unseen;
    known_means.emplace_back();
    unseen_means.emplace_back();
    for (const auto& s : summaries) {
      if (s.method_id != id) continue;
      const auto cell = format_mean_std({s.mean_abs_error, s.std_abs_error, s.n});
      if (s.split == Split::Train) {
        known = cell;
        known_means.back() = s.mean_abs_error;
      } else {
        unseen = cell;
        unseen_means.back() = s.mean_abs_error;
      }
    }
    t.rows.push_back({mi.group, mi.display_name, mi.pretraining, known, unseen});
  }
  if (markup) {
    apply_markup(t, 3, known_means);
    apply_markup(t, 4, unseen_means);
  }
  return t;
}

DisplayTable error_table_csv(const std::vector<ErrorSummary>& summaries) {
  DisplayTable t{{"method_id", "split", "category", "mean_abs_error", "std_abs_error", "n"}, {}};
  for (const auto& s : summaries) {
    t.rows.push_back({s.method_id, split_label(s.split), "all", csv::format_double(s.mean_abs_error),
                      csv::format_double(s.std_abs_error), std::to_string(s.n)});
    for (const auto& [cat, st] : s.per_category) {
      t.rows.push_back({s.method_id, split_label(s.split), to_string(cat), csv::format_double(st.mean),
                        csv::format_double(st.std), std::to_string(st.n)});
    }
  }
  return t;
}

DisplayTable fusion_table_view(const std::vector<ErrorSummary>& summaries, const MethodInfoMap& info, bool markup) {
  DisplayTable t{{"Backbone", "Pre-training dataset", "Input modal", "Combined by", "Unseen objects"}, {}};
  std::vector<std::optional<double>> means;
  for (const auto& s : summaries) {
    if (s.split != Split::Test) continue;
    const auto mi = info_for(info, s.method_id);
    if (mi.backbone == "-") continue;
    t.rows.push_back({mi.backbone, mi.pretraining, mi.input_modal, mi.combined_by,
                      format_mean_std({s.mean_abs_error, s.std_abs_error, s.n})});
    means.emplace_back(s.mean_abs_error);
  }
  if (markup) apply_markup(t, 4, means);
  return t;
}

DisplayTable grasp_table_view(const std::vector<GraspSummaryRow>& rows, const MethodInfoMap& info, bool markup) {
  const bool per_object = std::any_of(rows.begin(), rows.end(), [](const auto& r) { return !r.object_id.empty(); });
  DisplayTable t;
  t.header = {"Method"};
  if (per_object) t.header.push_back("Object");
  t.header.push_back("Distance error [mm]");
  t.header.push_back("Force [N]");
  std::vector<std::optional<double>> dist_means;
  std::vector<std::optional<double>> force_means;
  for (const auto& r : rows) {
    std::vector<std::optional<std::string>> row{info_for(info, r.method_id).display_name};
    if (per_object) row.emplace_back(r.object_id);
    row.push_back(stats_cell(r.distance_mm));
    row.push_back(stats_cell(r.force_n));
    t.rows.push_back(std::move(row));
    dist_means.push_back(r.distance_mm ? std::optional<double>(r.distance_mm->mean) : std::nullopt);
    force_means.push_back(r.force_n ? std::optional<double>(r.force_n->mean) : std::nullopt);
  }
  if (markup && !per_object) {
    apply_markup(t, 1, dist_means);
    apply_markup(t, 2, force_means);
  }
  return t;
}

DisplayTable grasp_table_csv(const std::vector<GraspSummaryRow>& rows) {
  const bool per_object = std::any_of(rows.begin(), rows.end(), [](const auto& r) { return !r.object_id.empty(); });
  DisplayTable t;
  t.header = {"method_id"};
  if (per_object) t.header.push_back("object_id");
  for (const char* h : {"clean", "underreach", "overreach", "distance_mean", "distance_std", "distance_n",
                        "force_mean", "force_std", "force_n"}) {
    t.header.emplace_back(h);
  }
  for (const auto& r : rows) {
    std::vector<std::optional<std::string>> row{r.method_id};
    if (per_object) row.emplace_back(r.object_id);
    row.emplace_back(std::to_string(r.clean));
    row.emplace_back(std::to_string(r.underreach));
    row.emplace_back(std::to_string(r.overreach));
    for (const auto& cell : {r.distance_mm, r.force_n}) {
      row.push_back(opt_double(cell ? std::optional<double>(cell->mean) : std::nullopt));
      row.push_back(opt_double(cell ? std::optional<double>(cell->std) : std::nullopt));
      row.push_back(cell ? std::optional<std::string>(std::to_string(cell->n)) : std::nullopt);
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

DisplayTable significance_view(const SignificanceMatrix& m, const MethodInfoMap& info) {
  DisplayTable t;
  t.header.emplace_back("");
  for (std::size_t c = 0; c + 1 < m.methods.size(); ++c) t.header.push_back(info_for(info, m.methods[c]).display_name);
  for (std::size_t r = 1; r < m.methods.size(); ++r) {
    std::vector<std::optional<std::string>> row{info_for(info, m.methods[r]).display_name};
    for (std::size_t c = 0; c + 1 < m.methods.size(); ++c) {
      if (c >= r) {
        row.emplace_back("");
        continue;
      }
      const auto& e = m.at(r, c);
      row.push_back(e.p_value ? std::optional<std::string>(significance_label(*e.p_value)) : std::nullopt);
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

DisplayTable significance_csv(const SignificanceMatrix& m) {
  DisplayTable t{{"method_a", "method_b", "test", "correction", "p_value", "label", "note"}, {}};
  for (const auto& e : m.entries) {
    t.rows.push_back({m.methods[e.row], m.methods[e.col], to_string(m.test), to_string(m.correction),
                      opt_double(e.p_value),
                      e.p_value ? std::optional<std::string>(significance_label(*e.p_value)) : std::nullopt, e.note});
  }
  return t;
}

}  // namespace proxrefl

#include "proxrefl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include <fmt/format.h>
#include <json.hpp>

#include "proxrefl/csv.hpp"

namespace proxrefl {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Category c) {
  switch (c) {
    case Category::Regular: return "regular";
    case Category::Irregular: return "irregular";
    case Category::Transparent: return "transparent";
  }
  return "regular";
}

std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }
std::string to_string(Modality m) { return m == Modality::Image ? "image" : "text"; }

Category parse_category(const std::string& text) {
  if (text == "regular") return Category::Regular;
  if (text == "irregular") return Category::Irregular;
  if (text == "transparent") return Category::Transparent;
  throw DataError(fmt::format("unknown category '{}' (expected regular, irregular or transparent)", text));
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "test") return Split::Test;
  throw DataError(fmt::format("unknown split '{}' (expected train or test)", text));
}

Modality parse_modality(const std::string& text) {
  if (text == "image") return Modality::Image;
  if (text == "text") return Modality::Text;
  throw DataError(fmt::format("unknown modality '{}' (expected image or text)", text));
}

const ObjectRecord* Manifest::find(const std::string& object_id) const {
  for (const auto& o : objects) {
    if (o.object_id == object_id) return &o;
  }
  return nullptr;
}

std::vector<const ObjectRecord*> Manifest::objects_in(Split split) const {
  std::vector<const ObjectRecord*> out;
  for (const auto& o : objects) {
    if (o.split == split) out.push_back(&o);
  }
  return out;
}

std::map<Split, int> Manifest::split_counts() const {
  std::map<Split, int> counts{{Split::Train, 0}, {Split::Test, 0}};
  for (const auto& o : objects) ++counts[o.split];
  return counts;
}

namespace {

bool valid_identifier(const std::string& id) {
  return !id.empty() && id.find_first_of(",\n\r\"") == std::string::npos;
}

void expect_header(const csv::Table& table, const std::vector<std::string>& expected, const fs::path& path) {
  if (table.header != expected) {
    throw DataError(fmt::format("'{}': header must be '{}', found '{}'", path.string(), csv::join(expected),
                                csv::join(table.header)));
  }
}

std::string where(const fs::path& path, const csv::Row& row) { return fmt::format("{}:{}", path.string(), row.line); }

std::pair<std::size_t, std::size_t> line_and_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  std::size_t col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

std::vector<std::string> string_list(const json& node, const std::string& field, std::vector<std::string>& problems) {
  std::vector<std::string> out;
  if (!node.contains(field)) return out;
  if (!node[field].is_array()) {
    problems.push_back(fmt::format("files.{} must be an array of paths", field));
    return out;
  }
  for (std::size_t i = 0; i < node[field].size(); ++i) {
    if (!node[field][i].is_string()) {
      problems.push_back(fmt::format("files.{}[{}] must be a string", field, i));
      continue;
    }
    out.push_back(node[field][i].get<std::string>());
  }
  return out;
}

ObjectRecord parse_object(const json& node, std::size_t index, std::vector<std::string>& problems) {
  ObjectRecord rec;
  const auto ctx = fmt::format("objects[{}]", index);
  if (!node.is_object()) {
    problems.push_back(ctx + " must be an object");
    return rec;
  }
  auto str_field = [&](const char* key) -> std::string {
    if (!node.contains(key) || !node[key].is_string()) {
      problems.push_back(fmt::format("{}.{} is required and must be a string", ctx, key));
      return {};
    }
    return node[key].get<std::string>();
  };
  rec.object_id = str_field("object_id");
  rec.name = str_field("name");
  const auto category = str_field("category");
  const auto split = str_field("split");
  if (!rec.object_id.empty() && !valid_identifier(rec.object_id)) {
    problems.push_back(fmt::format("{}.object_id '{}' must not contain commas, quotes or newlines", ctx,
                                   rec.object_id));
  }
  if (node.contains("name") && rec.name.empty()) problems.push_back(ctx + ".name must be non-empty");
  try {
    if (!category.empty()) rec.category = parse_category(category);
  } catch (const DataError& e) {
    problems.push_back(fmt::format("{}.category: {}", ctx, e.what()));
  }
  try {
    if (!split.empty()) rec.split = parse_split(split);
  } catch (const DataError& e) {
    problems.push_back(fmt::format("{}.split: {}", ctx, e.what()));
  }
  if (node.contains("true_alpha") && !node["true_alpha"].is_null()) {
    if (!node["true_alpha"].is_number()) {
      problems.push_back(ctx + ".true_alpha must be a number");
    } else {
      try {
        rec.true_alpha = Reflectance(node["true_alpha"].get<double>());
      } catch (const DomainError& e) {
        problems.push_back(fmt::format("{}.true_alpha: {}", ctx, e.what()));
      }
    }
  }
  if (node.contains("stiffness_n_per_mm") && !node["stiffness_n_per_mm"].is_null()) {
    const auto& s = node["stiffness_n_per_mm"];
    if (!s.is_number() || !(s.get<double>() > 0.0)) {
      problems.push_back(ctx + ".stiffness_n_per_mm must be a positive number");
    } else {
      rec.stiffness_n_per_mm = s.get<double>();
    }
  }
  return rec;
}

template <typename Loader>
void load_referenced(const fs::path& base, const std::vector<std::string>& refs, const char* kind,
                     std::vector<std::string>& problems, Loader&& loader) {
  for (const auto& ref : refs) {
    const auto full = base / ref;
    if (!fs::exists(full)) {
      problems.push_back(fmt::format("{} file '{}' does not exist", kind, ref));
      continue;
    }
    try {
      loader(full);
    } catch (const DataError& e) {
      problems.push_back(fmt::format("{} file '{}': {}", kind, ref, e.what()));
    }
  }
}

}  // namespace

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open manifest '{}'", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();

  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_and_column(text, e.byte == 0 ? 0 : e.byte - 1);
    throw DataError(fmt::format("{}:{}:{}: manifest is not valid JSON: {}", path.string(), line, col, e.what()));
  }
  if (!doc.is_object()) throw DataError(fmt::format("{}: manifest must be a JSON object", path.string()));

  Manifest m;
  m.base_dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  std::vector<std::string> problems;

  if (!doc.contains("schema_version") || !doc["schema_version"].is_number_integer()) {
    problems.push_back("schema_version is required and must be an integer");
  } else {
    m.schema_version = doc["schema_version"].get<int>();
    if (m.schema_version != kManifestSchemaVersion) {
      problems.push_back(fmt::format("unsupported schema_version {} (this build reads version {})",
                                     m.schema_version, kManifestSchemaVersion));
    }
  }
  if (doc.contains("description") && doc["description"].is_string()) {
    m.description = doc["description"].get<std::string>();
  }
  if (doc.contains("embedding_dim")) {
    if (!doc["embedding_dim"].is_number_integer() || doc["embedding_dim"].get<int>() < 1) {
      problems.push_back("embedding_dim must be a positive integer");
    } else {
      m.embedding_dim = doc["embedding_dim"].get<int>();
    }
  }

  if (doc.contains("objects")) {
    if (!doc["objects"].is_array()) {
      problems.push_back("objects must be an array");
    } else {
      for (std::size_t i = 0; i < doc["objects"].size(); ++i) {
        m.objects.push_back(parse_object(doc["objects"][i], i, problems));
      }
    }
  }
  std::set<std::string> ids;
  for (const auto& o : m.objects) {
    if (!o.object_id.empty() && !ids.insert(o.object_id).second) {
      problems.push_back(fmt::format("duplicate object_id '{}'", o.object_id));
    }
  }

  if (doc.contains("files")) {
    const auto& files = doc["files"];
    if (!files.is_object()) {
      problems.push_back("files must be an object");
    } else {
      m.files.sweeps = string_list(files, "sweeps", problems);
      m.files.embeddings = string_list(files, "embeddings", problems);
      m.files.predictions = string_list(files, "predictions", problems);
    }
  }

  if (!problems.empty()) throw DataError(fmt::format("{}: invalid manifest", path.string()), std::move(problems));

  auto check_ref = [&](const std::string& object_id, const std::string& kind, const std::string& file) {
    if (!ids.count(object_id)) {
      problems.push_back(fmt::format("{} file '{}' references unknown object '{}'", kind, file, object_id));
    }
  };

  load_referenced(m.base_dir, m.files.sweeps, "sweep", problems, [&](const fs::path& full) {
    for (auto& s : load_sweeps(full)) {
      check_ref(s.object_id(), "sweep", full.filename().string());
      m.sweeps.push_back(std::move(s));
    }
  });
  load_referenced(m.base_dir, m.files.embeddings, "embedding", problems, [&](const fs::path& full) {
    for (auto& e : load_embeddings(full, m.embedding_dim)) {
      check_ref(e.object_id, "embedding", full.filename().string());
      m.embeddings.push_back(std::move(e));
    }
  });
  load_referenced(m.base_dir, m.files.predictions, "prediction", problems, [&](const fs::path& full) {
    for (auto& p : load_predictions(full)) {
      check_ref(p.object_id, "prediction", full.filename().string());
      m.predictions.push_back(std::move(p));
    }
  });

  std::set<std::string> sweep_ids;
  for (const auto& s : m.sweeps) {
    if (!sweep_ids.insert(s.object_id()).second) {
      problems.push_back(fmt::format("more than one sweep for object '{}'", s.object_id()));
    }
  }
  std::set<std::tuple<std::string, Modality, int>> emb_keys;
  for (const auto& e : m.embeddings) {
    if (!emb_keys.insert({e.object_id, e.modality, e.view_index}).second) {
      problems.push_back(fmt::format("duplicate embedding for ({}, {}, view {})", e.object_id, to_string(e.modality),
                                     e.view_index));
    }
  }

  if (!problems.empty()) {
    throw DataError(fmt::format("{}: referential-integrity check failed", path.string()), std::move(problems));
  }

  std::sort(m.sweeps.begin(), m.sweeps.end(),
            [](const SweepSeries& a, const SweepSeries& b) { return a.object_id() < b.object_id(); });
  std::sort(m.embeddings.begin(), m.embeddings.end(), [](const EmbeddingVector& a, const EmbeddingVector& b) {
    return std::tie(a.object_id, a.modality, a.view_index) < std::tie(b.object_id, b.modality, b.view_index);
  });
  sort_canonical(m.predictions);
  return m;
}

void save_manifest(const Manifest& manifest, const fs::path& path) {
  json doc;
  doc["schema_version"] = manifest.schema_version;
  if (!manifest.description.empty()) doc["description"] = manifest.description;
  doc["embedding_dim"] = manifest.embedding_dim;
  doc["objects"] = json::array();
  for (const auto& o : manifest.objects) {
    json node;
    node["object_id"] = o.object_id;
    node["name"] = o.name;
    node["category"] = to_string(o.category);
    node["split"] = to_string(o.split);
    if (o.true_alpha) node["true_alpha"] = o.true_alpha->value();
    if (o.stiffness_n_per_mm) node["stiffness_n_per_mm"] = *o.stiffness_n_per_mm;
    doc["objects"].push_back(std::move(node));
  }
  doc["files"] = {{"sweeps", manifest.files.sweeps},
                  {"embeddings", manifest.files.embeddings},
                  {"predictions", manifest.files.predictions}};
  csv::write_file_atomic(path, doc.dump(2) + "\n");
}

std::vector<SweepSeries> load_sweeps(const fs::path& path) {
  const auto table = csv::read_file(path);
  expect_header(table, {"object_id", "distance_mm", "current_mean", "repeats"}, path);
  std::map<std::string, std::vector<SweepSample>> grouped;
  for (const auto& row : table.rows) {
    const auto ctx = where(path, row);
    SweepSample s;
    s.distance_mm = csv::parse_double(row.fields[1], ctx + " distance_mm");
    s.current_mean = csv::parse_double(row.fields[2], ctx + " current_mean");
    s.repeat_count = static_cast<int>(csv::parse_int(row.fields[3], ctx + " repeats"));
    if (!valid_identifier(row.fields[0])) throw DataError(ctx + ": empty or malformed object_id");
    grouped[row.fields[0]].push_back(s);
  }
  std::vector<SweepSeries> out;
  for (auto& [id, samples] : grouped) {
    std::sort(samples.begin(), samples.end(),
              [](const SweepSample& a, const SweepSample& b) { return a.distance_mm < b.distance_mm; });
    out.emplace_back(id, std::move(samples));
  }
  return out;
}

void save_sweeps(const std::vector<SweepSeries>& sweeps, const fs::path& path) {
  std::vector<const SweepSeries*> ordered;
  for (const auto& series : sweeps) ordered.push_back(&series);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const SweepSeries* a, const SweepSeries* b) { return a->object_id() < b->object_id(); });
  std::string out = "object_id,distance_mm,current_mean,repeats\n";
  for (const auto* series_ptr : ordered) {
    const auto& series = *series_ptr;
    for (const auto& s : series.samples()) {
      out += fmt::format("{},{},{},{}\n", series.object_id(), csv::format_double(s.distance_mm),
                         csv::format_double(s.current_mean), s.repeat_count);
    }
  }
  csv::write_file_atomic(path, out);
}

std::vector<EmbeddingVector> load_embeddings(const fs::path& path, int expected_dim) {
  const auto table = csv::read_file(path);
  const auto& h = table.header;
  if (h.size() < 4 || h[0] != "object_id" || h[1] != "modality" || h[2] != "view_index") {
    throw DataError(fmt::format("'{}': header must start with 'object_id,modality,view_index,v0'", path.string()));
  }
  const int dim = static_cast<int>(h.size()) - 3;
  for (int k = 0; k < dim; ++k) {
    if (h[static_cast<std::size_t>(k) + 3] != fmt::format("v{}", k)) {
      throw DataError(fmt::format("'{}': column {} must be named 'v{}'", path.string(), k + 3, k));
    }
  }
  if (expected_dim >= 0 && dim != expected_dim) {
    throw DataError(fmt::format("'{}': embedding dimension {} does not match the declared {}", path.string(), dim,
                                expected_dim));
  }
  std::vector<EmbeddingVector> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    const auto ctx = where(path, row);
    EmbeddingVector e;
    e.object_id = row.fields[0];
    if (!valid_identifier(e.object_id)) throw DataError(ctx + ": empty or malformed object_id");
    e.modality = parse_modality(row.fields[1]);
    e.view_index = static_cast<int>(csv::parse_int(row.fields[2], ctx + " view_index"));
    if (e.view_index < 0) throw DataError(ctx + ": view_index must be >= 0");
    e.values.resize(static_cast<std::size_t>(dim));
    for (int k = 0; k < dim; ++k) {
      const double v = csv::parse_double(row.fields[static_cast<std::size_t>(k) + 3], ctx + fmt::format(" v{}", k));
      if (!std::isfinite(v)) throw DataError(fmt::format("{}: v{} is not finite", ctx, k));
      e.values[static_cast<std::size_t>(k)] = v;
    }
    out.push_back(std::move(e));
  }
  return out;
}

void save_embeddings(std::vector<EmbeddingVector> vectors, const fs::path& path) {
  if (vectors.empty()) throw DataError("refusing to write an embedding file with no vectors (dimension unknown)");
  const auto dim = vectors.front().dim();
  std::sort(vectors.begin(), vectors.end(), [](const EmbeddingVector& a, const EmbeddingVector& b) {
    return std::tie(a.object_id, a.modality, a.view_index) < std::tie(b.object_id, b.modality, b.view_index);
  });
  std::string out = "object_id,modality,view_index";
  for (std::size_t k = 0; k < dim; ++k) out += fmt::format(",v{}", k);
  out += '\n';
  for (const auto& e : vectors) {
    if (e.dim() != dim) {
      throw DataError(fmt::format("embedding for '{}' has dimension {}, expected {}", e.object_id, e.dim(), dim));
    }
    out += fmt::format("{},{},{}", e.object_id, to_string(e.modality), e.view_index);
    for (double v : e.values) {
      if (!std::isfinite(v)) throw DataError(fmt::format("embedding for '{}' has a non-finite value", e.object_id));
      out += ',';
      out += csv::format_double(v);
    }
    out += '\n';
  }
  csv::write_file_atomic(path, out);
}

void sort_canonical(std::vector<PredictionRecord>& records) {
  std::stable_sort(records.begin(), records.end(), [](const PredictionRecord& a, const PredictionRecord& b) {
    return std::tie(a.method_id, a.object_id, a.trial_index) < std::tie(b.method_id, b.object_id, b.trial_index);
  });
}

namespace {

void validate_predictions(const std::vector<PredictionRecord>& records, const std::string& context) {
  std::vector<std::string> problems;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!valid_identifier(r.method_id)) problems.push_back(fmt::format("record {}: malformed method_id", i));
    if (!valid_identifier(r.object_id)) problems.push_back(fmt::format("record {}: malformed object_id", i));
    if (r.trial_index < 0) problems.push_back(fmt::format("record {}: trial_index {} < 0", i, r.trial_index));
    if (!std::isfinite(r.predicted_alpha)) {
      problems.push_back(fmt::format("record {} ({}, {}, trial {}): prediction is not finite", i, r.method_id,
                                     r.object_id, r.trial_index));
    }
    if (i > 0) {
      const auto& p = records[i - 1];
      if (p.method_id == r.method_id && p.object_id == r.object_id && p.trial_index == r.trial_index) {
        problems.push_back(fmt::format("duplicate prediction key ({}, {}, trial {})", r.method_id, r.object_id,
                                       r.trial_index));
      }
    }
  }
  if (!problems.empty()) throw DataError(context, std::move(problems));
}

}  // namespace

void save_predictions(std::vector<PredictionRecord> records, const fs::path& path) {
  sort_canonical(records);
  validate_predictions(records, fmt::format("refusing to write invalid predictions to '{}'", path.string()));
  std::string out = "method_id,object_id,trial_index,predicted_alpha\n";
  for (const auto& r : records) {
    out += fmt::format("{},{},{},{}\n", r.method_id, r.object_id, r.trial_index,
                       csv::format_double(r.predicted_alpha));
  }
  csv::write_file_atomic(path, out);
}

std::vector<PredictionRecord> load_predictions(const fs::path& path) {
  const auto table = csv::read_file(path);
  expect_header(table, {"method_id", "object_id", "trial_index", "predicted_alpha"}, path);
  std::vector<PredictionRecord> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    const auto ctx = where(path, row);
    PredictionRecord r;
    r.method_id = row.fields[0];
    r.object_id = row.fields[1];
    r.trial_index = static_cast<int>(csv::parse_int(row.fields[2], ctx + " trial_index"));
    r.predicted_alpha = csv::parse_double(row.fields[3], ctx + " predicted_alpha");
    out.push_back(std::move(r));
  }
  sort_canonical(out);
  validate_predictions(out, fmt::format("invalid predictions in '{}'", path.string()));
  return out;
}

}  // namespace proxrefl

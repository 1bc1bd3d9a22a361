#pragma once

// Interchange formats: a JSON manifest describing objects plus flat CSV files
// for sweeps, embeddings and predictions.
//
//   sweeps       object_id,distance_mm,current_mean,repeats
//   embeddings   object_id,modality,view_index,v0,...,v{dim-1}
//   predictions  method_id,object_id,trial_index,predicted_alpha
//
// See docs/manifest.md for the manifest schema.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "proxrefl/calibration.hpp"
#include "proxrefl/sensor.hpp"

namespace proxrefl {

enum class Category { Regular, Irregular, Transparent };
enum class Split { Train, Test };
enum class Modality { Image, Text };

std::string to_string(Category c);
std::string to_string(Split s);
std::string to_string(Modality m);
Category parse_category(const std::string& text);
Split parse_split(const std::string& text);
Modality parse_modality(const std::string& text);

inline constexpr int kManifestSchemaVersion = 1;
inline constexpr int kDefaultEmbeddingDim = 512;
inline constexpr int kViewsPerObject = 6;

struct ObjectRecord {
  std::string object_id;
  std::string name;  // short descriptor, e.g. "energy drink"
  Category category = Category::Regular;
  Split split = Split::Train;
  std::optional<Reflectance> true_alpha;
  std::optional<double> stiffness_n_per_mm;  // used by the grasp simulator
};

struct EmbeddingVector {
  std::string object_id;
  Modality modality = Modality::Image;
  int view_index = 0;
  std::vector<double> values;

  std::size_t dim() const noexcept { return values.size(); }
};

struct PredictionRecord {
  std::string method_id;
  std::string object_id;
  int trial_index = 0;
  double predicted_alpha = 0.0;
  // Value before clamping to [0, 1]; not part of the CSV schema.
  std::optional<double> raw_alpha;
};

struct ManifestFiles {
  std::vector<std::string> sweeps;
  std::vector<std::string> embeddings;
  std::vector<std::string> predictions;
};

struct Manifest {
  int schema_version = kManifestSchemaVersion;
  std::string description;
  int embedding_dim = kDefaultEmbeddingDim;
  std::vector<ObjectRecord> objects;
  ManifestFiles files;  // paths relative to `base_dir`

  // Resolved contents of the referenced files, in canonical order.
  std::filesystem::path base_dir;
  std::vector<SweepSeries> sweeps;
  std::vector<EmbeddingVector> embeddings;
  std::vector<PredictionRecord> predictions;

  const ObjectRecord* find(const std::string& object_id) const;
  std::vector<const ObjectRecord*> objects_in(Split split) const;
  std::map<Split, int> split_counts() const;
};

// Parses and validates a manifest together with every file it references.
// Throws DataError with line context for syntax errors, and a single DataError
// listing every referential-integrity violation otherwise.
Manifest load_manifest(const std::filesystem::path& path);

// Writes the manifest JSON (objects and file references only; data files are untouched).
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

// Both directions use canonical order: series by object_id, samples by distance.
std::vector<SweepSeries> load_sweeps(const std::filesystem::path& path);
void save_sweeps(const std::vector<SweepSeries>& sweeps, const std::filesystem::path& path);

// `expected_dim` < 0 accepts whatever dimension the header declares.
std::vector<EmbeddingVector> load_embeddings(const std::filesystem::path& path, int expected_dim = -1);
void save_embeddings(std::vector<EmbeddingVector> vectors, const std::filesystem::path& path);

// Predictions are stored sorted by (method_id, object_id, trial_index).
// Non-finite predictions and duplicate keys are rejected.
void save_predictions(std::vector<PredictionRecord> records, const std::filesystem::path& path);
std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path);

void sort_canonical(std::vector<PredictionRecord>& records);

}  // namespace proxrefl

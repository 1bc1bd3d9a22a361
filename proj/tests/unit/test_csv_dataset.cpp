#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include <fmt/format.h>

#include "proxrefl/csv.hpp"
#include "proxrefl/dataset.hpp"
#include "test_util.hpp"

using namespace proxrefl;
using testutil::TempDir;

namespace {

Manifest paper_sized_manifest() {
  Manifest m;
  m.embedding_dim = 4;
  const Category cats[] = {Category::Regular, Category::Irregular, Category::Transparent};
  for (int i = 0; i < 54; ++i) {
    ObjectRecord o;
    o.object_id = fmt::format("obj{:02}", i + 1);
    o.name = fmt::format("thing {}", i + 1);
    o.category = cats[i % 3];
    o.split = i < 40 ? Split::Train : Split::Test;
    o.true_alpha = Reflectance(0.1 + 0.015 * i);
    m.objects.push_back(o);
  }
  return m;
}

std::vector<PredictionRecord> eighty_four_records() {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<PredictionRecord> out;
  for (int obj = 0; obj < 14; ++obj) {
    for (int t = 0; t < 6; ++t) out.push_back({"head_concat", fmt::format("obj{:02}", 41 + obj), t, u(rng), {}});
  }
  // Deliberately unsorted on input.
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

}  // namespace

TEST_CASE("numeric fields are parsed strictly") {
  CHECK(csv::parse_double("0.422", "x") == 0.422);
  CHECK(csv::parse_double(" 1e-3 ", "x") == 1e-3);
  CHECK(csv::parse_double("+2", "x") == 2.0);
  CHECK_THROWS_AS(csv::parse_double("", "x"), DataError);
  CHECK_THROWS_AS(csv::parse_double("0.4x", "x"), DataError);
  CHECK_THROWS_AS(csv::parse_double("1,2", "x"), DataError);
  CHECK(csv::parse_int("6", "x") == 6);
  CHECK_THROWS_AS(csv::parse_int("6.0", "x"), DataError);
  CHECK_THROWS_AS(csv::parse_int("", "x"), DataError);

  try {
    csv::parse_double("abc", "file.csv:3 predicted_alpha");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("file.csv:3 predicted_alpha") != std::string::npos);
  }
}

TEST_CASE("format_double round-trips exactly") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 2000; ++i) {
    const double v = u(rng) * std::pow(10.0, static_cast<int>(rng() % 20) - 10);
    CHECK(csv::parse_double(csv::format_double(v), "x") == v);
  }
  CHECK(csv::format_double(0.5) == "0.5");
  CHECK(csv::format_double(0.422) == "0.422");
}

TEST_CASE("CSV reader reports rows with the wrong field count") {
  TempDir dir;
  testutil::spit(dir / "bad.csv", "a,b,c\n1,2,3\n1,2\n\n4,5,6,7\n");
  try {
    csv::read_file(dir / "bad.csv");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    REQUIRE(e.violations().size() == 2);
    CHECK(e.violations()[0].find(":3:") != std::string::npos);
    CHECK(e.violations()[1].find(":5:") != std::string::npos);
  }
  CHECK_THROWS_AS(csv::read_file(dir / "missing.csv"), DataError);
  testutil::spit(dir / "empty.csv", "\n\n");
  CHECK_THROWS_AS(csv::read_file(dir / "empty.csv"), DataError);
}

TEST_CASE("manifest with 54 objects reports a 40/14 split") {
  TempDir dir;
  const auto m = paper_sized_manifest();
  save_manifest(m, dir / "manifest.json");
  const auto loaded = load_manifest(dir / "manifest.json");
  CHECK(loaded.objects.size() == 54);
  const auto counts = loaded.split_counts();
  CHECK(counts.at(Split::Train) == 40);
  CHECK(counts.at(Split::Test) == 14);
  CHECK(loaded.objects_in(Split::Test).size() == 14);
  REQUIRE(loaded.find("obj07") != nullptr);
  CHECK(loaded.find("obj07")->category == Category::Regular);
  CHECK(loaded.find("obj08")->category == Category::Irregular);
  CHECK(loaded.find("nope") == nullptr);

  // Save -> load -> save is byte-identical.
  save_manifest(loaded, dir / "again.json");
  CHECK(testutil::slurp(dir / "manifest.json") == testutil::slurp(dir / "again.json"));
}

TEST_CASE("empty object list is a valid manifest") {
  TempDir dir;
  testutil::spit(dir / "m.json", R"({"schema_version": 1, "objects": []})");
  const auto m = load_manifest(dir / "m.json");
  CHECK(m.objects.empty());
  CHECK(m.split_counts().at(Split::Train) == 0);
  CHECK(m.split_counts().at(Split::Test) == 0);
}

TEST_CASE("missing embedding file is reported by name") {
  TempDir dir;
  testutil::spit(dir / "m.json", R"({"schema_version": 1, "embedding_dim": 4, "objects": [],
    "files": {"embeddings": ["vectors/clip_image.csv"]}})");
  try {
    load_manifest(dir / "m.json");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    REQUIRE(e.violations().size() == 1);
    CHECK(e.violations()[0].find("vectors/clip_image.csv") != std::string::npos);
  }
}

TEST_CASE("manifest validation collects every violation") {
  TempDir dir;
  testutil::spit(dir / "m.json", R"({"schema_version": 1, "objects": [
    {"object_id": "a", "name": "cup", "category": "regular", "split": "train"},
    {"object_id": "a", "name": "mug", "category": "shiny", "split": "train"},
    {"object_id": "b", "name": "", "category": "regular", "split": "validation", "true_alpha": 1.5}
  ]})");
  try {
    load_manifest(dir / "m.json");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    // bad category, empty name, bad split, alpha out of range, duplicate id
    CHECK(e.violations().size() == 5);
  }

  testutil::spit(dir / "refs.json", R"({"schema_version": 1, "embedding_dim": 2, "objects": [
    {"object_id": "a", "name": "cup", "category": "regular", "split": "train"}],
    "files": {"embeddings": ["e.csv"], "predictions": ["p.csv", "gone.csv"]}})");
  testutil::spit(dir / "e.csv", "object_id,modality,view_index,v0,v1\na,image,0,1,2\nz,image,0,1,2\n");
  testutil::spit(dir / "p.csv", "method_id,object_id,trial_index,predicted_alpha\nm,y,0,0.5\n");
  try {
    load_manifest(dir / "refs.json");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(e.violations().size() == 3);
  }
}

TEST_CASE("JSON syntax errors carry line and column") {
  TempDir dir;
  testutil::spit(dir / "m.json", "{\n  \"schema_version\": 1,\n  \"objects\": [,]\n}\n");
  try {
    load_manifest(dir / "m.json");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("m.json:3:") != std::string::npos);
  }
}

TEST_CASE("84 predictions round-trip byte-identically in canonical order") {
  TempDir dir;
  const auto records = eighty_four_records();
  save_predictions(records, dir / "p.csv");
  const auto loaded = load_predictions(dir / "p.csv");
  REQUIRE(loaded.size() == 84);
  for (std::size_t i = 1; i < loaded.size(); ++i) {
    const auto& a = loaded[i - 1];
    const auto& b = loaded[i];
    CHECK(std::tie(a.method_id, a.object_id, a.trial_index) < std::tie(b.method_id, b.object_id, b.trial_index));
  }
  // Every input value survives exactly.
  for (const auto& r : records) {
    const auto it = std::find_if(loaded.begin(), loaded.end(), [&](const PredictionRecord& p) {
      return p.object_id == r.object_id && p.trial_index == r.trial_index;
    });
    REQUIRE(it != loaded.end());
    CHECK(it->predicted_alpha == r.predicted_alpha);
  }
  save_predictions(loaded, dir / "q.csv");
  CHECK(testutil::slurp(dir / "p.csv") == testutil::slurp(dir / "q.csv"));

  // Order of rows in the file does not change what is loaded.
  auto text = testutil::slurp(dir / "p.csv");
  const auto header_end = text.find('\n') + 1;
  std::vector<std::string> lines;
  for (std::size_t pos = header_end; pos < text.size();) {
    const auto nl = text.find('\n', pos);
    lines.push_back(text.substr(pos, nl - pos + 1));
    pos = nl + 1;
  }
  std::reverse(lines.begin(), lines.end());
  std::string reversed = text.substr(0, header_end);
  for (const auto& l : lines) reversed += l;
  testutil::spit(dir / "r.csv", reversed);
  const auto from_reversed = load_predictions(dir / "r.csv");
  REQUIRE(from_reversed.size() == loaded.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(from_reversed[i].object_id == loaded[i].object_id);
    CHECK(from_reversed[i].trial_index == loaded[i].trial_index);
    CHECK(from_reversed[i].predicted_alpha == loaded[i].predicted_alpha);
  }
}

TEST_CASE("invalid predictions are rejected") {
  TempDir dir;
  std::vector<PredictionRecord> recs{{"m", "a", 0, std::numeric_limits<double>::quiet_NaN(), {}}};
  CHECK_THROWS_AS(save_predictions(recs, dir / "p.csv"), DataError);
  CHECK_FALSE(std::filesystem::exists(dir / "p.csv"));
  recs = {{"m", "a", 0, std::numeric_limits<double>::infinity(), {}}};
  CHECK_THROWS_AS(save_predictions(recs, dir / "p.csv"), DataError);
  recs = {{"m", "a", 0, 0.5, {}}, {"m", "a", 0, 0.6, {}}};
  CHECK_THROWS_AS(save_predictions(recs, dir / "p.csv"), DataError);
  recs = {{"m", "a", -1, 0.5, {}}};
  CHECK_THROWS_AS(save_predictions(recs, dir / "p.csv"), DataError);
  recs = {{"m,x", "a", 0, 0.5, {}}};
  CHECK_THROWS_AS(save_predictions(recs, dir / "p.csv"), DataError);

  testutil::spit(dir / "nan.csv", "method_id,object_id,trial_index,predicted_alpha\nm,a,0,nan\n");
  CHECK_THROWS_AS(load_predictions(dir / "nan.csv"), DataError);
  testutil::spit(dir / "hdr.csv", "method,object_id,trial_index,predicted_alpha\nm,a,0,0.5\n");
  CHECK_THROWS_AS(load_predictions(dir / "hdr.csv"), DataError);
}

TEST_CASE("shipped fixture replays the two transcript predictions") {
  const auto recs = load_predictions(testutil::fixture("reply_predictions.csv"));
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].object_id == "energy_drink");
  CHECK(recs[0].predicted_alpha == 0.422);
  CHECK(recs[1].object_id == "yogurt");
  CHECK(recs[1].predicted_alpha == 0.762);
  CHECK(recs[0].method_id == "prompt");
}

TEST_CASE("sweeps round-trip and come back grouped and sorted") {
  TempDir dir;
  const auto intr = SensorIntrinsics::example();
  SweepConfig cfg;
  cfg.noise_rel = 0.01;
  cfg.repeats = 200;
  std::vector<SweepSeries> sweeps;
  for (int i = 0; i < 3; ++i) {
    cfg.seed = static_cast<std::uint64_t>(i);
    sweeps.push_back(simulate_sweep(intr, Reflectance(0.3 + 0.2 * i), cfg, fmt::format("s{}", 2 - i)));
  }
  save_sweeps(sweeps, dir / "s.csv");
  const auto loaded = load_sweeps(dir / "s.csv");
  REQUIRE(loaded.size() == 3);
  CHECK(loaded[0].object_id() == "s0");
  CHECK(loaded[2].object_id() == "s2");
  for (const auto& s : loaded) {
    const auto& orig = *std::find_if(sweeps.begin(), sweeps.end(),
                                     [&](const SweepSeries& x) { return x.object_id() == s.object_id(); });
    REQUIRE(s.size() == orig.size());
    for (std::size_t k = 0; k < s.size(); ++k) {
      CHECK(s.samples()[k].distance_mm == orig.samples()[k].distance_mm);
      CHECK(s.samples()[k].current_mean == orig.samples()[k].current_mean);
      CHECK(s.samples()[k].repeat_count == 200);
    }
  }
  save_sweeps(loaded, dir / "t.csv");
  CHECK(testutil::slurp(dir / "s.csv") == testutil::slurp(dir / "t.csv"));

  testutil::spit(dir / "bad.csv", "object_id,distance_mm,current_mean,repeats\na,5,x,1\n");
  CHECK_THROWS_AS(load_sweeps(dir / "bad.csv"), DataError);
}

TEST_CASE("embeddings round-trip and enforce the declared dimension") {
  TempDir dir;
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  std::vector<EmbeddingVector> vecs;
  for (const char* id : {"b", "a"}) {
    for (int v = 5; v >= 0; --v) {
      EmbeddingVector e{id, Modality::Image, v, std::vector<double>(512)};
      for (auto& x : e.values) x = g(rng);
      vecs.push_back(e);
    }
    EmbeddingVector t{id, Modality::Text, 0, std::vector<double>(512)};
    for (auto& x : t.values) x = g(rng);
    vecs.push_back(t);
  }
  save_embeddings(vecs, dir / "e.csv");
  const auto loaded = load_embeddings(dir / "e.csv", 512);
  REQUIRE(loaded.size() == 14);
  CHECK(loaded.front().object_id == "a");
  CHECK(loaded.front().view_index == 0);
  CHECK(loaded[6].modality == Modality::Text);
  for (const auto& e : loaded) {
    const auto& orig = *std::find_if(vecs.begin(), vecs.end(), [&](const EmbeddingVector& x) {
      return x.object_id == e.object_id && x.modality == e.modality && x.view_index == e.view_index;
    });
    CHECK(e.values == orig.values);
  }
  save_embeddings(loaded, dir / "f.csv");
  CHECK(testutil::slurp(dir / "e.csv") == testutil::slurp(dir / "f.csv"));

  CHECK_THROWS_AS(load_embeddings(dir / "e.csv", 1024), DataError);
  CHECK(load_embeddings(dir / "e.csv").front().dim() == 512);

  testutil::spit(dir / "inf.csv", "object_id,modality,view_index,v0,v1\na,image,0,1,inf\n");
  CHECK_THROWS_AS(load_embeddings(dir / "inf.csv"), DataError);
  testutil::spit(dir / "mod.csv", "object_id,modality,view_index,v0\na,audio,0,1\n");
  CHECK_THROWS_AS(load_embeddings(dir / "mod.csv"), DataError);
  vecs[0].values.pop_back();
  CHECK_THROWS_AS(save_embeddings(vecs, dir / "g.csv"), DataError);
}

TEST_CASE("a full manifest resolves referenced files into canonical order") {
  TempDir dir;
  auto m = paper_sized_manifest();
  std::vector<SweepSeries> sweeps;
  std::vector<EmbeddingVector> vecs;
  for (auto it = m.objects.rbegin(); it != m.objects.rend(); ++it) {
    sweeps.push_back(simulate_sweep(SensorIntrinsics::example(), *it->true_alpha, {}, it->object_id));
    vecs.push_back({it->object_id, Modality::Text, 0, {1.0, 2.0, 3.0, 4.0}});
  }
  save_sweeps(sweeps, dir / "data/sweeps.csv");
  save_embeddings(vecs, dir / "data/emb.csv");
  save_predictions(eighty_four_records(), dir / "data/pred.csv");
  m.files = {{"data/sweeps.csv"}, {"data/emb.csv"}, {"data/pred.csv"}};
  save_manifest(m, dir / "manifest.json");

  const auto loaded = load_manifest(dir / "manifest.json");
  CHECK(loaded.sweeps.size() == 54);
  CHECK(loaded.sweeps.front().object_id() == "obj01");
  CHECK(loaded.embeddings.size() == 54);
  CHECK(loaded.predictions.size() == 84);
  CHECK(loaded.find("obj41")->true_alpha->value() == m.objects[40].true_alpha->value());
}

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "proxrefl/metrics.hpp"
#include "test_util.hpp"

using namespace proxrefl;

namespace {

constexpr double kTol = 1e-12;

Manifest fixture_manifest() { return load_manifest(testutil::fixture("error_table/manifest.json")); }

GraspTrialResult trial(const std::string& method, const std::string& object, GraspOutcome outcome, double value,
                       int index = 0) {
  GraspTrialResult r;
  r.method_id = method;
  r.object_id = object;
  r.outcome = outcome;
  r.trial_index = index;
  if (outcome == GraspOutcome::Underreach) r.distance_error_mm = value;
  if (outcome == GraspOutcome::Overreach) r.force_n = value;
  return r;
}

}  // namespace

TEST_CASE("shipped fixture reproduces the hand-computed error table") {
  const auto m = fixture_manifest();
  const auto table = reflectance_error_table(m.predictions, m);
  REQUIRE(table.size() == 3);

  // head_concat on known objects: errors {0.1, 0, 0, 0.1}.
  CHECK(table[0].method_id == "head_concat");
  CHECK(table[0].split == Split::Train);
  CHECK(table[0].n == 4);
  CHECK(std::abs(table[0].mean_abs_error - 0.05) <= kTol);
  CHECK(std::abs(table[0].std_abs_error - 0.05) <= kTol);
  CHECK(std::abs(table[0].per_category.at(Category::Regular).mean - 0.05) <= kTol);
  CHECK(std::abs(table[0].per_category.at(Category::Transparent).std - 0.05) <= kTol);
  CHECK(table[0].per_category.count(Category::Irregular) == 0);

  // head_concat on unseen objects: errors {0.1, 0.1, 0.2, 0.2, 0, 0}; variance 0.04 / 6.
  CHECK(table[1].split == Split::Test);
  CHECK(table[1].n == 6);
  CHECK(std::abs(table[1].mean_abs_error - 0.1) <= kTol);
  CHECK(std::abs(table[1].std_abs_error - std::sqrt(0.04 / 6.0)) <= kTol);
  CHECK(std::abs(table[1].per_category.at(Category::Irregular).mean - 0.2) <= kTol);
  CHECK(std::abs(table[1].per_category.at(Category::Transparent).mean) <= kTol);

  // prompt: errors {0.1, 0.1, 0.2, 0.2}.
  CHECK(table[2].method_id == "prompt");
  CHECK(table[2].n == 4);
  CHECK(std::abs(table[2].mean_abs_error - 0.15) <= kTol);
  CHECK(std::abs(table[2].std_abs_error - 0.05) <= kTol);
  const auto sample = reflectance_error_table(m.predictions, m, StdEstimator::Sample);
  CHECK(std::abs(sample[2].std_abs_error - std::sqrt(0.01 / 3.0)) <= kTol);
}

TEST_CASE("perfect predictions give zero error") {
  const auto m = fixture_manifest();
  std::vector<PredictionRecord> preds;
  for (const auto& o : m.objects) preds.push_back({"oracle", o.object_id, 0, o.true_alpha->value(), {}});
  for (const auto& s : reflectance_error_table(preds, m)) {
    CHECK(s.mean_abs_error == 0.0);
    CHECK(s.std_abs_error == 0.0);
  }
}

TEST_CASE("missing ground truth or unknown objects are listed") {
  auto m = fixture_manifest();
  m.objects[2].true_alpha.reset();
  std::vector<PredictionRecord> preds{{"x", "can", 0, 0.5, {}}, {"x", "ghost", 0, 0.5, {}}, {"x", "cup", 0, 0.5, {}}};
  try {
    reflectance_error_table(preds, m);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(e.violations().size() == 2);
  }
}

TEST_CASE("property: category recombination and trial permutation invariance") {
  Manifest m;
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int i = 0; i < 30; ++i) {
    m.objects.push_back({fmt::format("o{}", i), "x", static_cast<Category>(i % 3), i < 20 ? Split::Train : Split::Test,
                         Reflectance(u(rng)), {}});
  }
  std::vector<PredictionRecord> preds;
  for (const auto& o : m.objects) {
    for (int t = 0; t < 6; ++t) preds.push_back({"m", o.object_id, t, u(rng), {}});
  }
  const auto base = reflectance_error_table(preds, m);
  for (const auto& s : base) {
    double weighted = 0.0;
    int count = 0;
    for (const auto& [cat, st] : s.per_category) {
      weighted += st.mean * st.n;
      count += st.n;
    }
    CHECK(count == s.n);
    CHECK(std::abs(weighted / count - s.mean_abs_error) <= kTol);
  }
  for (int rep = 0; rep < 20; ++rep) {
    std::shuffle(preds.begin(), preds.end(), rng);
    const auto again = reflectance_error_table(preds, m);
    REQUIRE(again.size() == base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      CHECK(again[i].split == base[i].split);
      CHECK(std::abs(again[i].mean_abs_error - base[i].mean_abs_error) <= kTol);
      CHECK(std::abs(again[i].std_abs_error - base[i].std_abs_error) <= kTol);
    }
  }
}

TEST_CASE("error samples per method for significance testing") {
  const auto m = fixture_manifest();
  const auto samples = error_samples(m.predictions, m, Split::Test);
  REQUIRE(samples.size() == 2);
  CHECK(samples[0].method_id == "head_concat");
  CHECK(samples[0].values.size() == 6);
  CHECK(samples[1].values.size() == 4);
}

TEST_CASE("grasp summary follows the hyphen convention") {
  std::vector<GraspTrialResult> results{
      trial("under", "a", GraspOutcome::Underreach, 1.0, 0), trial("under", "a", GraspOutcome::Underreach, 2.0, 1),
      trial("under", "b", GraspOutcome::Underreach, 3.0, 0), trial("fixed_1.0", "a", GraspOutcome::Overreach, 5.25),
      trial("fixed_1.0", "b", GraspOutcome::Overreach, 4.0), trial("truth", "a", GraspOutcome::CleanGrasp, 0.0),
      trial("mixed", "a", GraspOutcome::Underreach, 0.5), trial("mixed", "b", GraspOutcome::Overreach, 2.0),
      trial("mixed", "b", GraspOutcome::CleanGrasp, 0.0, 1)};
  const auto rows = grasp_summary(results);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].method_id == "under");
  REQUIRE(rows[0].distance_mm.has_value());
  CHECK(rows[0].distance_mm->mean == 2.0);
  CHECK(rows[0].distance_mm->n == 3);
  CHECK_FALSE(rows[0].force_n.has_value());

  CHECK_FALSE(rows[1].distance_mm.has_value());
  REQUIRE(rows[1].force_n.has_value());
  CHECK(rows[1].force_n->mean == 4.625);

  CHECK_FALSE(rows[2].distance_mm.has_value());
  CHECK_FALSE(rows[2].force_n.has_value());
  CHECK(rows[2].clean == 1);

  // Every non-clean trial lands in exactly one cell.
  for (const auto& r : rows) {
    const int in_cells = (r.distance_mm ? r.distance_mm->n : 0) + (r.force_n ? r.force_n->n : 0);
    CHECK(in_cells == r.underreach + r.overreach);
  }
  CHECK(rows[3].clean + rows[3].underreach + rows[3].overreach == 3);

  const auto by_obj = grasp_summary_by_object(results);
  CHECK(by_obj.size() == 7);
  CHECK(by_obj[0].object_id == "a");
  CHECK(by_obj[0].distance_mm->mean == 1.5);

  const auto view = grasp_table_view(rows).render_text();
  CHECK(view.find("Distance error [mm]") != std::string::npos);
  const auto csv = grasp_table_csv(rows).render_csv();
  CHECK(csv.find("fixed_1.0,0,0,2,,,,4.625,0.625,2\n") != std::string::npos);
  CHECK(csv.find("truth,1,0,0,,,,,,\n") != std::string::npos);

  CHECK_THROWS_AS(grasp_summary({}), DomainError);
}

TEST_CASE("grasp samples feed the significance matrix") {
  std::vector<GraspTrialResult> results;
  for (int i = 0; i < 5; ++i) {
    results.push_back(trial("low", "a", GraspOutcome::Overreach, 0.5 + 0.01 * i, i));
    results.push_back(trial("high", "a", GraspOutcome::Overreach, 5.0 + 0.01 * i, i));
    results.push_back(trial("same", "a", GraspOutcome::Overreach, 0.5 + 0.01 * i, i));
  }
  const auto samples = grasp_samples(results, GraspMetric::Force);
  REQUIRE(samples.size() == 3);
  const auto m = significance_matrix(samples);
  CHECK(*m.at(1, 0).p_value <= 0.01);
  CHECK(*m.at(2, 0).p_value == 1.0);
  CHECK(grasp_samples(results, GraspMetric::Distance)[0].values.empty());

  const auto text = significance_view(m).render_text();
  CHECK(text.find("**") != std::string::npos);
  const auto csv = significance_csv(m).render_csv();
  CHECK(csv.rfind("method_a,method_b,test,correction,p_value,label,note\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}

TEST_CASE("reflectance table layout and markup") {
  const auto m = fixture_manifest();
  auto preds = m.predictions;
  for (const auto& o : m.objects) {
    for (int t = 0; t < 2; ++t) preds.push_back({"fixed_0.5", o.object_id, t, 0.5, {}});
  }
  const auto summaries = reflectance_error_table(preds, m);
  const auto view = error_table_view(summaries);
  CHECK(view.header == std::vector<std::string>{"Group", "Method", "Pre-training dataset", "Known objects",
                                                "Unseen objects"});
  REQUIRE(view.rows.size() == 3);
  // Rows follow the first appearance of each method.
  CHECK(*view.rows[0][0] == "VLM");
  CHECK(*view.rows[0][4] == "0.100 ± 0.082");
  CHECK(*view.rows[1][2] == "*");
  CHECK_FALSE(view.rows[1][3].has_value());
  CHECK(*view.rows[2][1] == "Fixed (0.5)");
  CHECK(*view.rows[2][0] == "Baseline");
  CHECK(view.render_text().find(" - ") != std::string::npos);

  const auto marked = error_table_view(summaries, {}, true);
  CHECK(*marked.rows[0][4] == "**0.100 ± 0.082**");
  CHECK(*marked.rows[1][4] == "_0.150 ± 0.050_");
  CHECK(*marked.rows[2][4] == "0.167 ± 0.118");
  CHECK(*marked.rows[0][3] == "**0.050 ± 0.050**");
  CHECK(*marked.rows[2][3] == "_0.150 ± 0.050_");

  const auto csv = error_table_csv(summaries).render_csv();
  CHECK(csv.rfind("method_id,split,category,mean_abs_error,std_abs_error,n\n", 0) == 0);
  CHECK(csv.find("prompt,unseen,all,0.15") != std::string::npos);
  CHECK(csv.find("head_concat,known,regular,") != std::string::npos);
}

TEST_CASE("fusion table columns") {
  const auto m = fixture_manifest();
  auto preds = m.predictions;
  for (const char* id : {"head_add", "head_image_only", "head_text_only"}) {
    for (const auto& o : m.objects_in(Split::Test)) preds.push_back({id, o->object_id, 0, 0.5, {}});
  }
  const auto view = fusion_table_view(reflectance_error_table(preds, m));
  CHECK(view.header ==
        std::vector<std::string>{"Backbone", "Pre-training dataset", "Input modal", "Combined by", "Unseen objects"});
  REQUIRE(view.rows.size() == 4);
  CHECK(*view.rows[0][2] == "Image and text");
  CHECK(*view.rows[1][3] == "Addition");
  CHECK(*view.rows[3][0] == "Transformer");
  CHECK(*view.rows[3][2] == "Text-only");
  bool concat = false;
  for (const auto& r : view.rows) concat |= r[3] == std::optional<std::string>("Concatenation");
  CHECK(concat);
}

TEST_CASE("text rendering aligns columns by character width") {
  DisplayTable t{{"a", "b"}, {{std::string("0.1 ± 0.2"), std::nullopt}, {std::string("x"), std::string("y,z")}}};
  const auto text = t.render_text();
  std::vector<std::string> lines;
  for (std::size_t pos = 0; pos < text.size();) {
    const auto nl = text.find('\n', pos);
    lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  REQUIRE(lines.size() == 4);
  auto width = [](const std::string& s) {
    return std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; });
  };
  CHECK(lines[2].find('-') != std::string::npos);
  CHECK(lines[2].find("0.1 ± 0.2") == 0);
  CHECK(lines[3].find("y,z") == lines[2].find("-") - (lines[2].size() - static_cast<std::size_t>(width(lines[2]))));
  CHECK(t.render_csv() == "a,b\n0.1 ± 0.2,\nx,\"y,z\"\n");
}

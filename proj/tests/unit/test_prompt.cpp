#include <doctest.h>

#include <atomic>
#include <cmath>
#include <mutex>
#include <random>

#include <fmt/format.h>

#include "proxrefl/prompt.hpp"
#include "test_util.hpp"

using namespace proxrefl;

namespace {

std::string fixture_transcript() { return testutil::slurp(testutil::fixture("reply_transcript.txt")); }

PromptSpec spec_with(std::vector<PromptExample> examples, std::vector<std::string> queries) {
  auto spec = PromptSpec::with_default_template();
  spec.examples = std::move(examples);
  spec.query_names = std::move(queries);
  return spec;
}

const std::vector<PromptExample> kSaladExamples = {{"salad dressing bottles [plastic, orange]", 0.326},
                                                   {"salad dressing bottles [plastic, brown]", 0.327},
                                                   {"salad dressing bottles [plastic, grean]", 0.399},
                                                   {"salad dressing bottles [plastic, yellow]", 0.403}};

}  // namespace

TEST_CASE("transcript fixture parses into the two replies") {
  const auto replies = parse_reply(fixture_transcript());
  REQUIRE(replies.size() == 2);
  CHECK(replies[0].name == "energy drink");
  CHECK(replies[0].prediction == 0.422);
  CHECK(replies[0].range_lo == 0.41);
  CHECK(replies[0].range_hi == 0.46);
  CHECK(replies[0].has_range);
  CHECK(replies[0].consistent);
  CHECK(replies[0].reason.find("chips tube is 0.684") != std::string::npos);
  CHECK(replies[1].name == "yogurt");
  CHECK(replies[1].prediction == 0.762);
  CHECK(replies[1].range_lo == 0.68);
  CHECK(replies[1].range_hi == 0.79);
  CHECK(replies[1].consistent);
  CHECK(replies[0].offset < replies[1].offset);
  CHECK(parse_reply_detailed(fixture_transcript()).issues.empty());
}

TEST_CASE("reply parsing edge cases") {
  CHECK(parse_reply("").empty());
  CHECK(parse_reply("no tables here, just prose: prediction 0.5").empty());

  const auto outside = parse_reply("|item|result|\n|:--|:--|\n|Name|mirror|\n|Reason|shiny|\n"
                                   "|**Response**|range: 0.80 - 0.90, prediction: **0.95**|\n");
  REQUIRE(outside.size() == 1);
  CHECK(outside[0].prediction == 0.95);
  CHECK_FALSE(outside[0].consistent);

  // One good entry, one without a number: partial result plus an issue with an offset.
  const std::string mixed = "|item|result|\n|:--|:--|\n|Name|cup|\n|**Response**|prediction: **0.5**|\n\n"
                            "|item|result|\n|:--|:--|\n|Name|bowl|\n|**Response**|no idea|\n";
  const auto detailed = parse_reply_detailed(mixed);
  REQUIRE(detailed.replies.size() == 1);
  CHECK(detailed.replies[0].name == "cup");
  CHECK_FALSE(detailed.replies[0].has_range);
  REQUIRE(detailed.issues.size() == 1);
  CHECK(detailed.issues[0].offset == mixed.find("|Name|bowl|"));
  CHECK(detailed.issues[0].message.find("bowl") != std::string::npos);

  // Horizontal layout with one row per object.
  const auto horizontal = parse_reply("|Name|Reason|Response|\n|---|---|---|\n"
                                      "|mug|ceramic|range: 0.5 - 0.7, prediction: **0.6**|\n"
                                      "|can|metal|range: 0.3 - 0.5, prediction: **0.45**|\n");
  REQUIRE(horizontal.size() == 2);
  CHECK(horizontal[0].name == "mug");
  CHECK(horizontal[1].prediction == 0.45);
  CHECK(horizontal[1].range_hi == 0.5);
}

TEST_CASE("prompt contains the few-shot lines verbatim") {
  const auto spec = spec_with(kSaladExamples, {"energy drink", "yogurt"});
  const auto prompt = build_prompt(spec);
  CHECK(prompt.find("salad dressing bottles [plastic, orange] : 0.326\n") != std::string::npos);
  CHECK(prompt.find("salad dressing bottles [plastic, yellow] : 0.403\n") != std::string::npos);
  CHECK(prompt.find("salad dressing bottles [plastic, orange] : 0.326\nsalad dressing bottles [plastic, brown] : 0.327\n"
                    "salad dressing bottles [plastic, grean] : 0.399\n") != std::string::npos);
  CHECK(prompt.find("get_reflectance([\"energy drink\", \"yogurt\"])") != std::string::npos);
  CHECK(prompt.find(default_preamble()) == 0);
  CHECK(prompt.find(default_reasoning_directive()) != std::string::npos);
  CHECK(prompt.find(default_format_directive()) != std::string::npos);
  CHECK(build_prompt(spec) == prompt);
  CHECK(example_line({"chips tube", 0.684}) == "chips tube : 0.684");

  CHECK(extract_query_names(prompt) == std::vector<std::string>{"energy drink", "yogurt"});
  const auto quoted = build_prompt(spec_with(kSaladExamples, {"12\" record", "a, b"}));
  CHECK(extract_query_names(quoted) == std::vector<std::string>{"12\" record", "a, b"});
  CHECK(extract_query_names("nothing").empty());
}

TEST_CASE("default template asks for one value with a guessing fallback") {
  const auto pre = default_preamble();
  CHECK(pre.find("expert") != std::string::npos);
  CHECK(pre.find("single") != std::string::npos);
  CHECK(pre.find("guess") != std::string::npos);
}

TEST_CASE("distinct example sets give distinct prompts") {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> v(1, 999);
  std::vector<std::string> seen;
  for (int t = 0; t < 100; ++t) {
    std::vector<PromptExample> ex;
    for (int i = 0; i < 3; ++i) ex.push_back({fmt::format("object {}", v(rng)), v(rng) / 1000.0});
    seen.push_back(build_prompt(spec_with(ex, {"q"})));
    for (std::size_t j = 0; j + 1 < seen.size(); ++j) {
      if (seen[j] == seen.back()) FAIL("two example sets produced the same prompt");
    }
  }
}

TEST_CASE("prompt spec validation") {
  CHECK_THROWS_AS(build_prompt(spec_with({}, {"a"})), UsageError);
  CHECK_THROWS_AS(build_prompt(spec_with(kSaladExamples, {})), UsageError);
  CHECK_THROWS_AS(build_prompt(spec_with(kSaladExamples, {"a", "a"})), UsageError);
  CHECK_THROWS_AS(build_prompt(spec_with(kSaladExamples, {"a\nb"})), UsageError);
  CHECK_THROWS_AS(build_prompt(spec_with({{"x\ny", 0.5}}, {"a"})), UsageError);
}

TEST_CASE("render then parse is the identity on name, range and prediction") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<EstimateReply> replies;
    const int count = 1 + static_cast<int>(rng() % 5);
    for (int i = 0; i < count; ++i) {
      EstimateReply r;
      r.name = fmt::format("object {} [plastic, {}]", i, t);
      r.prediction = std::round(u(rng) * 1000) / 1000;
      r.range_lo = std::round(u(rng) * r.prediction * 100) / 100;
      r.range_hi = std::round((r.prediction + u(rng) * (1 - r.prediction)) * 100) / 100;
      r.has_range = true;
      r.reason = "because | it is\nmultiline";
      replies.push_back(r);
    }
    const auto back = parse_reply(render_reply(replies));
    REQUIRE(back.size() == replies.size());
    for (std::size_t i = 0; i < replies.size(); ++i) {
      CHECK(back[i].name == replies[i].name);
      CHECK(back[i].prediction == replies[i].prediction);
      CHECK(back[i].range_lo == replies[i].range_lo);
      CHECK(back[i].range_hi == replies[i].range_hi);
    }
  }
}

TEST_CASE("replay client answers the transcript queries") {
  auto client = ReplayClient::from_file(testutil::fixture("reply_transcript.txt"));
  const auto spec = spec_with(kSaladExamples, {});
  const auto run = estimate({{"energy_drink", "energy drink"}, {"yogurt", "yogurt"}}, spec, client,
                            EstimateOptions{"prompt", 1, 2, 1, 0});
  REQUIRE(run.records.size() == 2);
  CHECK(run.records[0].object_id == "energy_drink");
  CHECK(run.records[0].predicted_alpha == 0.422);
  CHECK(run.records[1].predicted_alpha == 0.762);
  CHECK(*run.records[1].raw_alpha == 0.762);
  CHECK(run.protocol_errors.empty());
  REQUIRE(run.transcripts.size() == 1);
  CHECK(run.transcripts[0].prompt.find("get_reflectance([\"energy drink\", \"yogurt\"])") != std::string::npos);
  CHECK(run.transcripts[0].reply.find("0.422") != std::string::npos);
  CHECK(client.describe().at("client") == "replay");
}

TEST_CASE("fourteen queries by six trials give 84 ordered records") {
  std::vector<EstimateReply> canned;
  std::vector<PromptQuery> queries;
  for (int i = 0; i < 14; ++i) {
    EstimateReply r;
    r.name = fmt::format("thing {}", i);
    r.prediction = 0.05 * (i + 1);
    canned.push_back(r);
    queries.push_back({fmt::format("obj{:02}", 41 + i), r.name});
  }
  ReplayClient client(canned);
  const auto spec = spec_with(kSaladExamples, {});
  for (int parallelism : {1, 4}) {
    for (std::size_t per_request : {0u, 3u}) {
      const auto run = estimate(queries, spec, client, EstimateOptions{"prompt", 6, 0, parallelism, per_request});
      REQUIRE(run.records.size() == 84);
      for (std::size_t k = 0; k < run.records.size(); ++k) {
        CHECK(run.records[k].object_id == queries[k / 6].object_id);
        CHECK(run.records[k].trial_index == static_cast<int>(k % 6));
        CHECK(run.records[k].predicted_alpha == doctest::Approx(0.05 * static_cast<double>(k / 6 + 1)));
        CHECK(std::isfinite(run.records[k].predicted_alpha));
      }
      CHECK(run.transcripts.size() == (per_request == 0 ? 6u : 30u));
    }
  }
}

TEST_CASE("predictions are clamped with the raw value kept") {
  FunctionClient client([](const std::string&) {
    return std::string("|item|result|\n|:--|:--|\n|Name|lamp|\n|**Response**|prediction: **1.3**|\n");
  });
  const auto run = estimate({{"o1", "lamp"}}, spec_with(kSaladExamples, {}), client, EstimateOptions{"prompt", 2, 0, 1, 0});
  REQUIRE(run.records.size() == 2);
  CHECK(run.records[0].predicted_alpha == 1.0);
  CHECK(*run.records[0].raw_alpha == 1.3);
}

TEST_CASE("transient failures are retried, persistent ones name every query") {
  std::atomic<int> calls{0};
  FunctionClient flaky([&](const std::string& prompt) -> std::string {
    if (calls++ % 2 == 0) throw TransportError("connection reset");
    std::vector<EstimateReply> out;
    for (const auto& n : extract_query_names(prompt)) out.push_back({n, 0.4, 0.6, 0.5, "", true, true, 0});
    return render_reply(out);
  });
  const auto spec = spec_with(kSaladExamples, {});
  const auto run = estimate({{"a", "cup"}, {"b", "bowl"}}, spec, flaky, EstimateOptions{"prompt", 3, 1, 1, 0});
  CHECK(run.records.size() == 6);
  for (const auto& t : run.transcripts) CHECK(t.attempts == 2);

  std::atomic<int> attempts{0};
  FunctionClient dead([&](const std::string&) -> std::string {
    ++attempts;
    throw TransportError("unreachable");
  });
  try {
    estimate({{"a", "cup"}, {"b", "bowl"}}, spec, dead, EstimateOptions{"prompt", 1, 2, 1, 0});
    FAIL("expected TransportError");
  } catch (const TransportError& e) {
    CHECK(attempts == 3);
    REQUIRE(e.failed().size() == 2);
    CHECK(e.failed()[0].find("cup") != std::string::npos);
    CHECK(e.failed()[1].find("bowl") != std::string::npos);
  }
}

TEST_CASE("missing entries are protocol errors and the run continues") {
  ReplayClient client({{"cup", 0.4, 0.6, 0.5, "", true, true, 0}});
  const auto run = estimate({{"a", "cup"}, {"b", "bowl"}}, spec_with(kSaladExamples, {}), client,
                            EstimateOptions{"prompt", 2, 0, 1, 0});
  CHECK(run.records.size() == 2);
  REQUIRE(run.protocol_errors.size() == 2);
  CHECK(run.protocol_errors[0].object_id == "b");
  CHECK(run.protocol_errors[1].trial == 1);
}

TEST_CASE("estimate argument checks") {
  ReplayClient client({});
  const auto spec = spec_with(kSaladExamples, {});
  CHECK_THROWS_AS(estimate({}, spec, client), UsageError);
  CHECK_THROWS_AS(estimate({{"a", "cup"}}, spec, client, EstimateOptions{"prompt", 0, 0, 1, 0}), UsageError);
  CHECK_THROWS_AS(estimate({{"a", "cup"}, {"b", "cup"}}, spec, client), UsageError);
}

TEST_CASE("transcripts are written one JSON object per line") {
  testutil::TempDir dir;
  ReplayClient client({{"cup", 0.4, 0.6, 0.5, "", true, true, 0}});
  const auto run = estimate({{"a", "cup"}}, spec_with(kSaladExamples, {}), client, EstimateOptions{"prompt", 3, 0, 1, 0});
  save_transcripts(run.transcripts, dir / "t.jsonl");
  const auto text = testutil::slurp(dir / "t.jsonl");
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
  CHECK(text.find("\"trial\":2") != std::string::npos);
}

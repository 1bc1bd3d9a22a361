#pragma once

// Few-shot + chain-of-thought prompting for reflectance estimation, and the
// markdown-table reply protocol:
//
//   |item|result|
//   |:--|:--|
//   |Name|energy drink|
//   |Reason|...|
//   |**Response**|range: 0.41 - 0.46, prediction: **0.422**|

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "proxrefl/dataset.hpp"
#include "proxrefl/errors.hpp"

namespace proxrefl {

inline constexpr int kPromptTemplateVersion = 1;

struct PromptExample {
  std::string name;
  double alpha = 0.0;
};

struct PromptSpec {
  std::string preamble;            // role and task framing
  std::string reasoning_directive;  // chain-of-thought steps
  std::string format_directive;     // markdown-table reply layout
  std::vector<PromptExample> examples;
  std::vector<std::string> query_names;

  // Spec with the repository's default template texts and no examples or queries.
  static PromptSpec with_default_template();

  // Throws UsageError unless examples and queries are non-empty, queries are
  // distinct, and no name contains a line break.
  void validate() const;
};

std::string default_preamble();
std::string default_reasoning_directive();
std::string default_format_directive();

// Deterministic prompt text. Examples appear as `name : alpha` lines in the
// given order, followed by the query call `get_reflectance(["a", "b"])`.
std::string build_prompt(const PromptSpec& spec);

// The `name : alpha` line used for a few-shot example.
std::string example_line(const PromptExample& example);

struct EstimateReply {
  std::string name;
  double range_lo = 0.0;
  double range_hi = 0.0;
  double prediction = 0.0;
  std::string reason;
  bool has_range = false;
  // True when range_lo <= prediction <= range_hi (or no range was given).
  bool consistent = true;
  std::size_t offset = 0;  // byte offset of the entry in the source text
};

struct ParseIssue {
  std::size_t offset = 0;
  std::string message;
};

struct ReplyParse {
  std::vector<EstimateReply> replies;
  std::vector<ParseIssue> issues;
};

// Extracts every (Name, Reason, Response) table in document order. Entries that
// cannot be parsed are skipped and reported as issues.
ReplyParse parse_reply_detailed(std::string_view text);
std::vector<EstimateReply> parse_reply(std::string_view text);

// Renders replies in the same table layout parse_reply reads.
std::string render_reply(const std::vector<EstimateReply>& replies);

// Names listed in the prompt's `get_reflectance([...])` call.
std::vector<std::string> extract_query_names(std::string_view prompt);

struct ClientConfig {
  std::string endpoint;
  std::string model;
  double timeout_s = 60.0;
  int max_retries = 2;
  int parallelism = 1;

  void validate() const;
};

// Sends one text prompt and returns one text completion. Implementations throw
// TransportError on failure; they must be callable from several threads.
class CompletionClient {
 public:
  virtual ~CompletionClient() = default;
  virtual std::string complete(const std::string& prompt) = 0;
  // Parameters actually used, recorded into run metadata.
  virtual std::map<std::string, std::string> describe() const { return {}; }
};

// Replays canned answers: for each name in the prompt's query call, the
// matching canned entry (case-insensitive) is rendered back. Unknown names are
// left out of the reply.
class ReplayClient : public CompletionClient {
 public:
  explicit ReplayClient(std::vector<EstimateReply> canned);
  static ReplayClient from_transcript(std::string_view reply_text);
  static ReplayClient from_file(const std::filesystem::path& path);

  std::string complete(const std::string& prompt) override;
  std::map<std::string, std::string> describe() const override;

 private:
  std::map<std::string, EstimateReply> canned_;
};

class FunctionClient : public CompletionClient {
 public:
  explicit FunctionClient(std::function<std::string(const std::string&)> fn) : fn_(std::move(fn)) {}
  std::string complete(const std::string& prompt) override { return fn_(prompt); }

 private:
  std::function<std::string(const std::string&)> fn_;
};

struct PromptQuery {
  std::string object_id;
  std::string name;
};

struct EstimateOptions {
  std::string method_id = "prompt";
  int trials = 6;
  int max_retries = 2;
  int parallelism = 1;
  std::size_t queries_per_request = 0;  // 0 = all queries in one request
};

struct Transcript {
  int trial = 0;
  std::size_t request = 0;
  int attempts = 0;
  std::vector<std::string> queries;
  std::string prompt;
  std::string reply;
  std::string error;
};

struct ProtocolError {
  std::string object_id;
  int trial = 0;
  std::string message;
};

struct EstimateRun {
  std::vector<PredictionRecord> records;  // ordered by (query order, trial)
  std::vector<Transcript> transcripts;
  std::vector<ProtocolError> protocol_errors;
};

// One independent request per (trial, query batch). Predictions are clamped to
// [0, 1] with the raw value kept in PredictionRecord::raw_alpha. Queries without a
// parseable entry are recorded as protocol errors and the run continues. If any
// request still fails after the retries, TransportError names the affected queries.
EstimateRun estimate(const std::vector<PromptQuery>& queries, const PromptSpec& spec, CompletionClient& client,
                     const EstimateOptions& options = {});

// One JSON object per line: trial, request, attempts, queries, prompt, reply, error.
void save_transcripts(const std::vector<Transcript>& transcripts, const std::filesystem::path& path);

}  // namespace proxrefl

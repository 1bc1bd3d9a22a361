#include "proxrefl/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <regex>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "proxrefl/csv.hpp"
#include "proxrefl/parallel.hpp"

namespace proxrefl {

using nlohmann::json;

std::string default_preamble() {
  return "You are an expert in material properties. Your task is to determine the infrared reflectance of a "
         "given object. Please provide a single, reasonable value from the estimated range of infrared "
         "reflectance for each object. If your prediction is not conclusive, please output an approximate value "
         "as a guess. Note that the reflectivity of plastic bottles varies depending on their contents and "
         "labels.";
}

std::string default_reasoning_directive() {
  return "For each object, reason step by step: first infer how the surface of the object reflects light from "
         "its name (material, colour, coating, transparency); next compare those surface features with the "
         "example objects above to estimate a possible range of infrared reflectance; finally give the most "
         "plausible value within that range as the answer. Write this reasoning in the Reason row.";
}

std::string default_format_directive() {
  return "Format the answer for each object as a markdown table with the rows Name, Reason and **Response**, "
         "where the Response cell reads `range: <low> - <high>, prediction: **<value>**`.";
}

PromptSpec PromptSpec::with_default_template() {
  PromptSpec spec;
  spec.preamble = default_preamble();
  spec.reasoning_directive = default_reasoning_directive();
  spec.format_directive = default_format_directive();
  return spec;
}

namespace {

bool has_line_break(const std::string& s) { return s.find_first_of("\r\n") != std::string::npos; }

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string strip_emphasis(std::string_view s) {
  std::string out;
  for (char c : trim(s)) {
    if (c != '*') out += c;
  }
  return std::string(trim(out));
}

std::string name_key(std::string_view name) { return lower(strip_emphasis(name)); }

}  // namespace

void PromptSpec::validate() const {
  if (examples.empty()) throw UsageError("prompt needs at least one few-shot example");
  if (query_names.empty()) throw UsageError("prompt needs at least one query name");
  for (const auto& e : examples) {
    if (e.name.empty() || has_line_break(e.name)) {
      throw UsageError(fmt::format("example name '{}' is empty or contains a line break", e.name));
    }
    if (!std::isfinite(e.alpha)) throw UsageError(fmt::format("example '{}' has a non-finite alpha", e.name));
  }
  std::set<std::string> seen;
  for (const auto& q : query_names) {
    if (q.empty() || has_line_break(q)) {
      throw UsageError(fmt::format("query name '{}' is empty or contains a line break", q));
    }
    if (!seen.insert(name_key(q)).second) throw UsageError(fmt::format("query name '{}' is repeated", q));
  }
}

std::string example_line(const PromptExample& example) {
  return fmt::format("{} : {}", example.name, csv::format_double(example.alpha));
}

std::string build_prompt(const PromptSpec& spec) {
  spec.validate();
  std::string out = spec.preamble;
  out += "\n\nHere are some example objects and their reflectance for reference:\n\n";
  for (const auto& e : spec.examples) {
    out += example_line(e);
    out += '\n';
  }
  out += "\n";
  out += spec.reasoning_directive;
  out += "\n";
  out += spec.format_directive;
  out += "\n\n---\n\nUser: get_reflectance([";
  for (std::size_t i = 0; i < spec.query_names.size(); ++i) {
    if (i) out += ", ";
    out += json(spec.query_names[i]).dump();
  }
  out += "])\nYou:\n";
  return out;
}

std::vector<std::string> extract_query_names(std::string_view prompt) {
  const auto call = prompt.rfind("get_reflectance(");
  if (call == std::string_view::npos) return {};
  const auto open = prompt.find('[', call);
  if (open == std::string_view::npos) return {};
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = open; i < prompt.size(); ++i) {
    const char c = prompt[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') in_string = true;
    if (c == ']') {
      try {
        const auto list = json::parse(prompt.substr(open, i - open + 1));
        std::vector<std::string> names;
        for (const auto& item : list) {
          if (item.is_string()) names.push_back(item.get<std::string>());
        }
        return names;
      } catch (const json::exception&) {
        return {};
      }
    }
  }
  return {};
}

namespace {

struct TableRow {
  std::size_t offset = 0;
  std::vector<std::string> cells;
};

std::vector<std::string> split_cells(std::string_view row) {
  row = trim(row);
  if (!row.empty() && row.front() == '|') row.remove_prefix(1);
  if (!row.empty() && row.back() == '|') row.remove_suffix(1);
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto bar = row.find('|', start);
    cells.emplace_back(trim(row.substr(start, bar == std::string_view::npos ? std::string_view::npos : bar - start)));
    if (bar == std::string_view::npos) break;
    start = bar + 1;
  }
  return cells;
}

bool is_separator(const std::vector<std::string>& cells) {
  return std::all_of(cells.begin(), cells.end(), [](const std::string& c) {
    return !c.empty() && c.find('-') != std::string::npos &&
           std::all_of(c.begin(), c.end(), [](char ch) { return ch == '-' || ch == ':' || ch == ' '; });
  });
}

// Groups markdown table rows into tables. A row whose closing bar is missing
// continues on the following non-table lines (wrapped cells).
std::vector<std::vector<TableRow>> collect_tables(std::string_view text) {
  std::vector<std::vector<TableRow>> tables;
  std::vector<TableRow> current;
  std::size_t pos = 0;
  auto next_line = [&](std::size_t& start) -> std::optional<std::string_view> {
    if (start >= text.size()) return std::nullopt;
    const auto nl = text.find('\n', start);
    const auto end = nl == std::string_view::npos ? text.size() : nl;
    auto line = text.substr(start, end - start);
    start = end + 1;
    return line;
  };
  while (true) {
    const std::size_t line_offset = pos;
    auto line = next_line(pos);
    if (!line) break;
    const auto t = trim(*line);
    if (t.empty() || t.front() != '|') {
      if (!current.empty()) tables.push_back(std::move(current));
      current.clear();
      continue;
    }
    std::string row(t);
    while (row.size() < 2 || row.back() != '|') {
      std::size_t peek = pos;
      auto cont = next_line(peek);
      if (!cont) break;
      const auto ct = trim(*cont);
      if (ct.empty() || ct.front() == '|') break;
      row += ' ';
      row += ct;
      pos = peek;
    }
    current.push_back({line_offset + static_cast<std::size_t>(t.data() - line->data()), split_cells(row)});
  }
  if (!current.empty()) tables.push_back(std::move(current));
  return tables;
}

std::optional<double> to_number(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

struct RawEntry {
  std::size_t offset = 0;
  std::string name;
  std::string reason;
  std::optional<std::string> response;
  bool has_name = false;
};

void finish_entry(const RawEntry& raw, ReplyParse& out) {
  static const std::regex prediction_re(R"(prediction\s*[:=]?\s*\**\s*(\d*\.?\d+(?:[eE][-+]?\d+)?))",
                                        std::regex::icase);
  static const std::regex bold_re(R"(\*\*\s*(\d*\.?\d+)\s*\*\*)");
  static const std::regex range_re(R"(range\s*[:=]?\s*\**\s*(\d*\.?\d+)\s*(?:-|–|~|to)\s*(\d*\.?\d+))",
                                   std::regex::icase);
  if (!raw.has_name || raw.name.empty()) {
    out.issues.push_back({raw.offset, "table entry has no Name row"});
    return;
  }
  if (!raw.response) {
    out.issues.push_back({raw.offset, fmt::format("entry '{}' has no Response row", raw.name)});
    return;
  }
  EstimateReply reply;
  reply.name = raw.name;
  reply.reason = raw.reason;
  reply.offset = raw.offset;
  std::smatch m;
  std::optional<double> prediction;
  if (std::regex_search(*raw.response, m, prediction_re) || std::regex_search(*raw.response, m, bold_re)) {
    prediction = to_number(m[1].str());
  }
  if (!prediction) {
    out.issues.push_back({raw.offset, fmt::format("entry '{}': no numeric prediction in '{}'", raw.name,
                                                  *raw.response)});
    return;
  }
  reply.prediction = *prediction;
  if (std::regex_search(*raw.response, m, range_re)) {
    const auto lo = to_number(m[1].str());
    const auto hi = to_number(m[2].str());
    if (lo && hi) {
      reply.has_range = true;
      reply.range_lo = *lo;
      reply.range_hi = *hi;
    } else {
      out.issues.push_back({raw.offset, fmt::format("entry '{}': unreadable range", raw.name)});
    }
  }
  if (!reply.has_range) {
    reply.range_lo = reply.range_hi = reply.prediction;
  }
  reply.consistent = reply.range_lo <= reply.prediction && reply.prediction <= reply.range_hi;
  out.replies.push_back(std::move(reply));
}

void parse_vertical(const std::vector<TableRow>& rows, ReplyParse& out) {
  std::optional<RawEntry> entry;
  for (const auto& row : rows) {
    if (row.cells.size() < 2 || is_separator(row.cells)) continue;
    const auto key = name_key(row.cells[0]);
    const auto& value = row.cells[1];
    if (key == "name") {
      if (entry) finish_entry(*entry, out);
      entry = RawEntry{row.offset, strip_emphasis(value), {}, std::nullopt, true};
    } else if (key == "reason") {
      if (!entry) entry = RawEntry{row.offset, {}, {}, std::nullopt, false};
      entry->reason = value;
    } else if (key == "response") {
      if (!entry) entry = RawEntry{row.offset, {}, {}, std::nullopt, false};
      entry->response = value;
    }
  }
  if (entry) finish_entry(*entry, out);
}

void parse_horizontal(const std::vector<TableRow>& rows, std::size_t name_col, std::optional<std::size_t> reason_col,
                      std::size_t response_col, ReplyParse& out) {
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& cells = rows[r].cells;
    if (is_separator(cells)) continue;
    RawEntry entry{rows[r].offset, {}, {}, std::nullopt, false};
    if (name_col < cells.size()) {
      entry.name = strip_emphasis(cells[name_col]);
      entry.has_name = true;
    }
    if (reason_col && *reason_col < cells.size()) entry.reason = cells[*reason_col];
    if (response_col < cells.size()) entry.response = cells[response_col];
    finish_entry(entry, out);
  }
}

}  // namespace

ReplyParse parse_reply_detailed(std::string_view text) {
  ReplyParse out;
  for (const auto& rows : collect_tables(text)) {
    const auto& header = rows.front().cells;
    std::optional<std::size_t> name_col, reason_col, response_col;
    for (std::size_t i = 0; i < header.size(); ++i) {
      const auto key = name_key(header[i]);
      if (key == "name") name_col = i;
      if (key == "reason") reason_col = i;
      if (key == "response") response_col = i;
    }
    if (name_col && response_col) {
      parse_horizontal(rows, *name_col, reason_col, *response_col, out);
    } else {
      parse_vertical(rows, out);
    }
  }
  return out;
}

std::vector<EstimateReply> parse_reply(std::string_view text) { return parse_reply_detailed(text).replies; }

namespace {

std::string cell_text(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '|') {
      out += '/';
    } else if (c == '\n' || c == '\r') {
      out += ' ';
    } else {
      out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_reply(const std::vector<EstimateReply>& replies) {
  std::string out;
  for (std::size_t i = 0; i < replies.size(); ++i) {
    const auto& r = replies[i];
    if (i) out += '\n';
    out += "|item|result|\n|:--|:--|\n";
    out += fmt::format("|Name|{}|\n", cell_text(r.name));
    out += fmt::format("|Reason|{}|\n", cell_text(r.reason));
    if (r.has_range) {
      out += fmt::format("|**Response**|range: {} - {}, prediction: **{}**|\n", csv::format_double(r.range_lo),
                         csv::format_double(r.range_hi), csv::format_double(r.prediction));
    } else {
      out += fmt::format("|**Response**|prediction: **{}**|\n", csv::format_double(r.prediction));
    }
  }
  return out;
}

void ClientConfig::validate() const {
  if (!(timeout_s > 0.0)) throw UsageError("client timeout must be > 0");
  if (max_retries < 0) throw UsageError("client max_retries must be >= 0");
  if (parallelism < 1) throw UsageError("client parallelism must be >= 1");
}

ReplayClient::ReplayClient(std::vector<EstimateReply> canned) {
  for (auto& r : canned) {
    const auto key = name_key(r.name);
    canned_.emplace(key, std::move(r));
  }
}

ReplayClient ReplayClient::from_transcript(std::string_view reply_text) {
  return ReplayClient(parse_reply(reply_text));
}

ReplayClient ReplayClient::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open transcript '{}'", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_transcript(buffer.str());
}

std::string ReplayClient::complete(const std::string& prompt) {
  std::vector<EstimateReply> out;
  for (const auto& name : extract_query_names(prompt)) {
    const auto it = canned_.find(name_key(name));
    if (it == canned_.end()) continue;
    auto reply = it->second;
    reply.name = name;
    out.push_back(std::move(reply));
  }
  return render_reply(out);
}

std::map<std::string, std::string> ReplayClient::describe() const {
  return {{"client", "replay"}, {"canned_entries", std::to_string(canned_.size())}};
}

EstimateRun estimate(const std::vector<PromptQuery>& queries, const PromptSpec& spec, CompletionClient& client,
                     const EstimateOptions& options) {
  if (queries.empty()) throw UsageError("estimate needs at least one query");
  if (options.trials < 1) throw UsageError("estimate needs at least one trial");
  if (options.max_retries < 0) throw UsageError("max_retries must be >= 0");

  const std::size_t per_request = options.queries_per_request == 0 ? queries.size() : options.queries_per_request;
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < queries.size(); start += per_request) {
    std::vector<std::size_t> batch;
    for (std::size_t q = start; q < std::min(start + per_request, queries.size()); ++q) batch.push_back(q);
    batches.push_back(std::move(batch));
  }

  // Validate the full query set once so duplicates across batches are caught too.
  PromptSpec full = spec;
  full.query_names.clear();
  for (const auto& q : queries) full.query_names.push_back(q.name);
  full.validate();

  const auto trials = static_cast<std::size_t>(options.trials);
  std::vector<Transcript> transcripts(trials * batches.size());
  std::vector<char> failed(transcripts.size(), 0);

  parallel_for(transcripts.size(), options.parallelism, [&](std::size_t r) {
    const std::size_t trial = r / batches.size();
    const std::size_t b = r % batches.size();
    PromptSpec request = spec;
    request.query_names.clear();
    auto& t = transcripts[r];
    t.trial = static_cast<int>(trial);
    t.request = b;
    for (std::size_t q : batches[b]) {
      request.query_names.push_back(queries[q].name);
      t.queries.push_back(queries[q].name);
    }
    t.prompt = build_prompt(request);
    for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
      t.attempts = attempt + 1;
      try {
        t.reply = client.complete(t.prompt);
        t.error.clear();
        return;
      } catch (const TransportError& e) {
        t.error = e.what();
      }
    }
    failed[r] = 1;
  });

  EstimateRun run;
  std::vector<std::string> transport_failures;
  std::vector<std::vector<EstimateReply>> parsed(transcripts.size());
  for (std::size_t r = 0; r < transcripts.size(); ++r) {
    if (!failed[r]) parsed[r] = parse_reply(transcripts[r].reply);
  }
  for (std::size_t b = 0; b < batches.size(); ++b) {
    for (std::size_t q : batches[b]) {
      const auto& query = queries[q];
      for (std::size_t trial = 0; trial < trials; ++trial) {
        const std::size_t r = trial * batches.size() + b;
        if (failed[r]) {
          transport_failures.push_back(fmt::format("{} (trial {})", query.name, trial));
          continue;
        }
        const auto key = name_key(query.name);
        const auto it = std::find_if(parsed[r].begin(), parsed[r].end(),
                                     [&](const EstimateReply& e) { return name_key(e.name) == key; });
        if (it == parsed[r].end()) {
          run.protocol_errors.push_back(
              {query.object_id, static_cast<int>(trial), fmt::format("no parseable entry for '{}'", query.name)});
          continue;
        }
        if (!std::isfinite(it->prediction)) {
          run.protocol_errors.push_back({query.object_id, static_cast<int>(trial), "prediction is not finite"});
          continue;
        }
        PredictionRecord rec;
        rec.method_id = options.method_id;
        rec.object_id = query.object_id;
        rec.trial_index = static_cast<int>(trial);
        rec.raw_alpha = it->prediction;
        rec.predicted_alpha = std::clamp(it->prediction, 0.0, 1.0);
        run.records.push_back(std::move(rec));
      }
    }
  }
  run.transcripts = std::move(transcripts);
  if (!transport_failures.empty()) {
    std::string names;
    for (const auto& f : transport_failures) names += (names.empty() ? "" : ", ") + f;
    throw TransportError(fmt::format("completion requests failed after {} attempts for: {}", options.max_retries + 1,
                                     names),
                         std::move(transport_failures));
  }
  return run;
}

void save_transcripts(const std::vector<Transcript>& transcripts, const std::filesystem::path& path) {
  std::string out;
  for (const auto& t : transcripts) {
    json line = {{"trial", t.trial},     {"request", t.request}, {"attempts", t.attempts}, {"queries", t.queries},
                 {"prompt", t.prompt},   {"reply", t.reply},     {"error", t.error}};
    out += line.dump();
    out += '\n';
  }
  csv::write_file_atomic(path, out);
}

}  // namespace proxrefl

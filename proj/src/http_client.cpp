#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "proxrefl/http_client.hpp"

#include <cstdlib>
#include <regex>

#include <fmt/format.h>
#include <httplib.h>
#include <json.hpp>

#include "proxrefl/csv.hpp"

namespace proxrefl {

HttpChatClient::HttpChatClient(ClientConfig config, std::optional<std::string> api_key,
                               std::optional<double> temperature)
    : config_(std::move(config)), temperature_(temperature) {
  config_.validate();
  static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config_.endpoint, m, url)) {
    throw UsageError(fmt::format("endpoint '{}' is not an http(s) URL", config_.endpoint));
  }
  origin_ = m[1].str();
  path_ = m[2].matched ? m[2].str() : "/v1/chat/completions";
  if (api_key) {
    api_key_ = *api_key;
  } else if (const char* env = std::getenv(kApiKeyEnv)) {
    api_key_ = env;
  }
}

std::string HttpChatClient::complete(const std::string& prompt) {
  nlohmann::json body = {{"model", config_.model},
                         {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})}};
  if (temperature_) body["temperature"] = *temperature_;

  httplib::Client client(origin_);
  const auto seconds = static_cast<time_t>(config_.timeout_s);
  const auto micros = static_cast<time_t>((config_.timeout_s - static_cast<double>(seconds)) * 1e6);
  client.set_connection_timeout(seconds, micros);
  client.set_read_timeout(seconds, micros);
  client.set_write_timeout(seconds, micros);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  const auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res) {
    throw TransportError(fmt::format("request to {} failed: {}", config_.endpoint, httplib::to_string(res.error())));
  }
  if (res->status < 200 || res->status >= 300) {
    throw TransportError(fmt::format("{} answered HTTP {}: {}", config_.endpoint, res->status,
                                     res->body.substr(0, 200)));
  }
  try {
    const auto reply = nlohmann::json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(fmt::format("{} returned an unexpected body: {}", config_.endpoint, e.what()));
  }
}

std::map<std::string, std::string> HttpChatClient::describe() const {
  std::map<std::string, std::string> d{{"client", "http"},
                                       {"endpoint", config_.endpoint},
                                       {"model", config_.model},
                                       {"timeout_s", csv::format_double(config_.timeout_s)}};
  if (temperature_) d["temperature"] = csv::format_double(*temperature_);
  return d;
}

}  // namespace proxrefl

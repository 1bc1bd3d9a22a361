#pragma once

#include <map>
#include <optional>
#include <string>

#include "proxrefl/prompt.hpp"

namespace proxrefl {

// Environment variable holding the bearer token for the chat endpoint.
inline constexpr const char* kApiKeyEnv = "PROXREFL_API_KEY";

// Chat-completions client for an OpenAI-compatible HTTP endpoint, e.g.
// https://api.openai.com/v1/chat/completions. Each call opens its own
// connection, so one instance can be shared across threads.
class HttpChatClient : public CompletionClient {
 public:
  // `api_key` defaults to the PROXREFL_API_KEY environment variable; requests
  // are sent without an Authorization header when neither is set.
  explicit HttpChatClient(ClientConfig config, std::optional<std::string> api_key = std::nullopt,
                          std::optional<double> temperature = std::nullopt);

  std::string complete(const std::string& prompt) override;
  std::map<std::string, std::string> describe() const override;

 private:
  ClientConfig config_;
  std::string origin_;  // scheme://host[:port]
  std::string path_;
  std::string api_key_;
  std::optional<double> temperature_;
};

}  // namespace proxrefl

#pragma once

#include <chrono>
#include <cstdlib>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "saelab/autointerp/autointerp.hpp"

namespace saelab {

struct ProviderConfig {
  std::string name = "http";
  std::string base_url;                 // e.g. http://localhost:8000
  std::string path = "/v1/complete";
  std::string auth_token_env;           // name of the variable holding a bearer token
  std::string model;
  double timeout_seconds = 30.0;
  int max_attempts = 3;
  double retry_backoff_seconds = 0.5;
};

inline ProviderConfig provider_config_from_json(const nlohmann::json& j) {
  ProviderConfig c;
  c.name = j.value("name", c.name);
  c.base_url = j.at("base_url").get<std::string>();
  c.path = j.value("path", c.path);
  c.auth_token_env = j.value("auth_token_env", c.auth_token_env);
  c.model = j.value("model", c.model);
  c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
  c.max_attempts = j.value("max_attempts", c.max_attempts);
  c.retry_backoff_seconds = j.value("retry_backoff_seconds", c.retry_backoff_seconds);
  return c;
}

// One endpoint for both roles:
//   POST <path> {"model", "template_id", "prompt"} -> {"text": "..."}
// Prediction replies carry one number per line.
class HttpProvider final : public InterpretationProvider {
 public:
  explicit HttpProvider(ProviderConfig config) : config_(std::move(config)) {
    if (config_.base_url.empty()) throw Error(ErrorCode::config, "provider base_url is empty");
    if (config_.max_attempts < 1) throw Error(ErrorCode::config, "provider max_attempts must be >= 1");
  }

  std::string id() const override { return config_.name + (config_.model.empty() ? "" : ":" + config_.model); }
  std::string scorer_kind() const override { return "external"; }

  std::string describe(const std::string& prompt, const std::vector<Snippet>&) override {
    return complete(kDescribeTemplateId, prompt);
  }

  std::vector<double> predict(const std::string& prompt, const std::string&, const std::vector<Snippet>& snippets) override {
    const auto text = complete(kPredictTemplateId, prompt);
    std::vector<double> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      // Accept "3: 7.5" as well as "7.5".
      if (auto colon = line.find(':'); colon != std::string::npos) line = line.substr(colon + 1);
      try {
        out.push_back(std::stod(line));
      } catch (const std::exception&) {
        throw ProviderError("unparseable prediction line '" + line + "'", 1, std::nullopt);
      }
    }
    if (out.size() != snippets.size())
      throw ProviderError("expected " + std::to_string(snippets.size()) + " predictions, got " + std::to_string(out.size()), 1,
                          std::nullopt);
    return out;
  }

  std::string complete(const std::string& template_id, const std::string& prompt) {
    httplib::Client client(config_.base_url);
    const auto secs = static_cast<time_t>(config_.timeout_seconds);
    const auto usecs = static_cast<time_t>((config_.timeout_seconds - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (!config_.auth_token_env.empty()) {
      if (const char* token = std::getenv(config_.auth_token_env.c_str()))
        headers.emplace("Authorization", std::string("Bearer ") + token);
    }
    const std::string body = nlohmann::json{{"model", config_.model}, {"template_id", template_id}, {"prompt", prompt}}.dump();
    std::optional<int> last_status;
    std::string last_error;
    for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
      auto res = client.Post(config_.path, headers, body, "application/json");
      if (res && res->status == 200) {
        try {
          return nlohmann::json::parse(res->body).at("text").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
          throw ProviderError(std::string("malformed provider response: ") + e.what(), attempt, res->status);
        }
      }
      if (res) {
        last_status = res->status;
        last_error = "HTTP " + std::to_string(res->status);
        if (res->status >= 400 && res->status < 500 && res->status != 429)
          throw ProviderError("provider rejected request: " + last_error, attempt, last_status);
      } else {
        last_error = httplib::to_string(res.error());
      }
      if (attempt < config_.max_attempts)
        std::this_thread::sleep_for(std::chrono::duration<double>(config_.retry_backoff_seconds * attempt));
    }
    throw ProviderError("provider request failed after " + std::to_string(config_.max_attempts) + " attempts: " + last_error,
                        config_.max_attempts, last_status);
  }

 private:
  ProviderConfig config_;
};

}  // namespace saelab

#pragma once

// OpenAI-compatible chat-completions provider.

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include <cstdlib>
#include <string>

#include <nlohmann/json.hpp>

#include "geval/llm.hpp"

namespace geval {

struct ParsedUrl {
  std::string scheme_host_port;  // "https://api.openai.com" or "http://127.0.0.1:8080"
  std::string path_prefix;       // "/v1" or ""
};

inline ParsedUrl split_base_url(const std::string& base_url) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorKind::config, "base_url must include a scheme: '" + base_url + "'");
  }
  const auto path_start = base_url.find('/', scheme_end + 3);
  ParsedUrl out;
  if (path_start == std::string::npos) {
    out.scheme_host_port = base_url;
  } else {
    out.scheme_host_port = base_url.substr(0, path_start);
    out.path_prefix = base_url.substr(path_start);
  }
  while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
  return out;
}

/// Request body for one chat-completions call: a single user message.
inline nlohmann::json chat_request_body(const GenerationRequest& req, const std::string& model) {
  nlohmann::json body = {
      {"model", model},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", req.prompt}}})},
      {"temperature", req.temperature},
      {"top_p", req.top_p},
      {"n", req.n_samples},
      {"max_tokens", req.max_tokens},
  };
  if (req.want_logprobs) {
    body["logprobs"] = true;
    body["top_logprobs"] = req.top_logprobs_k;
  }
  return body;
}

/// Extracts completions (and logprobs when present) from a chat-completions body.
inline GenerationResponse parse_chat_response(const std::string& body) {
  auto excerpt = [&] { return body.substr(0, 200); };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorKind::protocol, "provider returned non-JSON body: " + excerpt());
  }
  try {
    GenerationResponse resp;
    resp.model_id = j.value("model", "");
    const auto& choices = j.at("choices");
    if (!choices.is_array()) throw Error(ErrorKind::protocol, "'choices' is not an array: " + excerpt());
    std::vector<TokenLogprobs> tables;
    bool any_logprobs = false;
    for (const auto& choice : choices) {
      const auto& content = choice.at("message").at("content");
      resp.completions.push_back(content.is_null() ? std::string() : content.get<std::string>());
      TokenLogprobs table;
      if (choice.contains("logprobs") && choice["logprobs"].is_object() &&
          choice["logprobs"].contains("content") && choice["logprobs"]["content"].is_array()) {
        any_logprobs = true;
        for (const auto& pos : choice["logprobs"]["content"]) {
          TokenPosition p;
          p.token = pos.at("token").get<std::string>();
          p.logprob = pos.at("logprob").get<double>();
          for (const auto& alt : pos.value("top_logprobs", nlohmann::json::array())) {
            p.top.push_back({alt.at("token").get<std::string>(), alt.at("logprob").get<double>()});
          }
          table.push_back(std::move(p));
        }
      }
      tables.push_back(std::move(table));
    }
    if (any_logprobs) resp.token_logprobs = std::move(tables);
    return resp;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::protocol, std::string("unexpected provider JSON (") + e.what() +
                                         "): " + excerpt());
  }
}

class HttpProvider : public Provider {
 public:
  explicit HttpProvider(BackendConfig config)
      : config_(std::move(config)), url_(split_base_url(config_.base_url)) {}

  std::string model_id() const override { return config_.model; }

  GenerationResponse call(const GenerationRequest& req) override {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (!key || !*key) {
      throw Error(ErrorKind::credential,
                  "environment variable " + config_.api_key_env + " is not set");
    }
    httplib::Client client(url_.scheme_host_port);
    const auto timeout = static_cast<time_t>(config_.timeout.count());
    client.set_connection_timeout(timeout, 0);
    client.set_read_timeout(timeout, 0);
    client.set_write_timeout(timeout, 0);
    client.set_bearer_token_auth(key);

    const std::string body = chat_request_body(req, config_.model).dump();
    auto res = client.Post(url_.path_prefix + "/chat/completions", body, "application/json");
    if (!res) {
      throw TransportError("HTTP request failed: " + httplib::to_string(res.error()), true);
    }
    const int status = res->status;
    if (status == 401 || status == 403) {
      throw Error(ErrorKind::credential,
                  "provider rejected credentials (HTTP " + std::to_string(status) + ")");
    }
    if (status == 429 || status == 408 || status >= 500) {
      throw TransportError("HTTP " + std::to_string(status) + ": " + res->body.substr(0, 200), true,
                           status);
    }
    if (status != 200) {
      throw TransportError("HTTP " + std::to_string(status) + ": " + res->body.substr(0, 200), false,
                           status);
    }
    return parse_chat_response(res->body);
  }

 private:
  BackendConfig config_;
  ParsedUrl url_;
};

inline std::unique_ptr<LlmBackend> http_backend(BackendConfig config) {
  auto provider = std::make_shared<HttpProvider>(config);
  return std::make_unique<LlmBackend>(std::move(provider), std::move(config));
}

}  // namespace geval

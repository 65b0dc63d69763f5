#pragma once

// Backend abstraction for score-producing text models.
//
// A Provider performs one raw model call. LlmBackend wraps a provider with
// the response cache, the retry policy and the concurrency bound. The
// scripted provider is a deterministic stand-in keyed by prompt fingerprint.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <semaphore>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "geval/error.hpp"
#include "geval/hash.hpp"

namespace geval {

namespace fs = std::filesystem;

/// Stable hash of the exact prompt text.
inline std::string fingerprint(std::string_view text) { return sha256_hex(text); }

struct GenerationRequest {
  std::string prompt;
  double temperature = 0.0;
  double top_p = 1.0;
  int n_samples = 1;
  int max_tokens = 64;
  bool want_logprobs = false;
  int top_logprobs_k = 0;

  void validate() const {
    if (!(temperature >= 0.0)) throw Error(ErrorKind::validation, "temperature must be >= 0");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw Error(ErrorKind::validation, "top_p must be in (0, 1]");
    if (n_samples < 1) throw Error(ErrorKind::validation, "n_samples must be >= 1");
    if (max_tokens < 1) throw Error(ErrorKind::validation, "max_tokens must be >= 1");
    if (top_logprobs_k < 0) throw Error(ErrorKind::validation, "top_logprobs_k must be >= 0");
    if (want_logprobs && top_logprobs_k < 1) {
      throw Error(ErrorKind::validation, "want_logprobs requires top_logprobs_k >= 1");
    }
  }
};

struct TokenAlternative {
  std::string token;
  double logprob = 0.0;

  bool operator==(const TokenAlternative&) const = default;
};

/// One emitted token with its top-k alternatives.
struct TokenPosition {
  std::string token;
  double logprob = 0.0;
  std::vector<TokenAlternative> top;

  bool operator==(const TokenPosition&) const = default;
};

using TokenLogprobs = std::vector<TokenPosition>;

struct GenerationResponse {
  std::vector<std::string> completions;
  /// Per completion, per position. Absent when the provider has no logprobs.
  std::optional<std::vector<TokenLogprobs>> token_logprobs;
  std::string model_id;
  bool cached = false;
  int attempts = 0;
};

// ---------------------------------------------------------------------------
// JSON forms (shared by the cache, the HTTP provider and script files)

inline void to_json(nlohmann::json& j, const TokenAlternative& a) {
  j = nlohmann::json::array({a.token, a.logprob});
}

inline void from_json(const nlohmann::json& j, TokenAlternative& a) {
  if (j.is_array()) {
    a.token = j.at(0).get<std::string>();
    a.logprob = j.at(1).get<double>();
  } else {
    a.token = j.at("token").get<std::string>();
    a.logprob = j.at("logprob").get<double>();
  }
}

inline void to_json(nlohmann::json& j, const TokenPosition& p) {
  j = {{"token", p.token}, {"logprob", p.logprob}, {"top", p.top}};
}

inline void from_json(const nlohmann::json& j, TokenPosition& p) {
  p.token = j.at("token").get<std::string>();
  p.logprob = j.value("logprob", 0.0);
  p.top = j.value("top", std::vector<TokenAlternative>{});
}

inline nlohmann::json request_to_json(const GenerationRequest& r, const std::string& model_id) {
  return {{"model", model_id},          {"prompt", r.prompt},
          {"temperature", r.temperature}, {"top_p", r.top_p},
          {"n", r.n_samples},           {"max_tokens", r.max_tokens},
          {"logprobs", r.want_logprobs},  {"top_logprobs", r.top_logprobs_k}};
}

/// Cache key covers the model id and every sampling parameter.
inline std::string request_key(const GenerationRequest& r, const std::string& model_id) {
  return sha256_hex(request_to_json(r, model_id).dump());
}

inline nlohmann::json response_to_json(const GenerationResponse& r) {
  nlohmann::json j = {{"completions", r.completions}, {"model_id", r.model_id}};
  j["token_logprobs"] = r.token_logprobs ? nlohmann::json(*r.token_logprobs) : nlohmann::json();
  return j;
}

inline GenerationResponse response_from_json(const nlohmann::json& j) {
  GenerationResponse r;
  r.completions = j.at("completions").get<std::vector<std::string>>();
  r.model_id = j.value("model_id", "");
  if (j.contains("token_logprobs") && !j["token_logprobs"].is_null()) {
    r.token_logprobs = j["token_logprobs"].get<std::vector<TokenLogprobs>>();
  }
  return r;
}

// ---------------------------------------------------------------------------

class Provider {
 public:
  virtual ~Provider() = default;
  virtual GenerationResponse call(const GenerationRequest& req) = 0;
  virtual std::string model_id() const = 0;
};

struct RetryPolicy {
  int max_attempts = 4;
  std::chrono::milliseconds backoff_base{500};
  double jitter = 0.25;  // fraction of the delay, uniformly +/-
};

struct BackendConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string model = "gpt-4-0613";
  std::string api_key_env = "OPENAI_API_KEY";
  int max_concurrency = 4;
  RetryPolicy retry;
  std::optional<fs::path> cache_dir;
  std::chrono::seconds timeout{60};
  unsigned seed = 0;

  void validate() const {
    if (max_concurrency < 1) throw Error(ErrorKind::config, "max_concurrency must be >= 1");
    if (retry.max_attempts < 1) throw Error(ErrorKind::config, "retry max_attempts must be >= 1");
    if (retry.jitter < 0.0 || retry.jitter > 1.0) {
      throw Error(ErrorKind::config, "retry jitter must be within [0, 1]");
    }
  }
};

class LlmBackend {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  LlmBackend(std::shared_ptr<Provider> provider, BackendConfig config)
      : provider_(std::move(provider)),
        config_(std::move(config)),
        slots_(std::max(config_.max_concurrency, 1)),
        rng_(config_.seed),
        sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {
    config_.validate();
    if (config_.cache_dir) fs::create_directories(*config_.cache_dir);
  }

  LlmBackend(const LlmBackend&) = delete;
  LlmBackend& operator=(const LlmBackend&) = delete;

  std::string model_id() const { return provider_->model_id(); }
  const BackendConfig& config() const { return config_; }
  Provider& provider() { return *provider_; }

  /// Number of requests that reached the provider, including failed attempts.
  std::size_t provider_calls() const { return provider_calls_.load(); }
  std::size_t cache_hits() const { return cache_hits_.load(); }

  void set_sleeper(Sleeper sleeper) { sleeper_ = std::move(sleeper); }

  GenerationResponse generate(const GenerationRequest& req) {
    req.validate();
    const std::string model = model_id();
    const std::string key = request_key(req, model);
    if (auto hit = lookup(key)) {
      ++cache_hits_;
      hit->cached = true;
      hit->attempts = 0;
      return *hit;
    }

    std::string attempt_log;
    for (int attempt = 1;; ++attempt) {
      try {
        GenerationResponse resp = call_bounded(req);
        if (static_cast<int>(resp.completions.size()) != req.n_samples) {
          throw Error(ErrorKind::protocol,
                      "provider returned " + std::to_string(resp.completions.size()) +
                          " completions, expected " + std::to_string(req.n_samples));
        }
        if (resp.model_id.empty()) resp.model_id = model;
        resp.cached = false;
        resp.attempts = attempt;
        store(key, req, resp);
        return resp;
      } catch (const TransportError& e) {
        attempt_log += "  attempt " + std::to_string(attempt) + ": " + e.what() + "\n";
        if (!e.retryable() || attempt >= config_.retry.max_attempts) {
          throw TransportError("request failed after " + std::to_string(attempt) +
                                   " attempt(s):\n" + attempt_log,
                               false, e.http_status());
        }
        sleeper_(backoff_delay(attempt));
      }
    }
  }

 private:
  GenerationResponse call_bounded(const GenerationRequest& req) {
    slots_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{slots_};
    ++provider_calls_;
    return provider_->call(req);
  }

  std::chrono::milliseconds backoff_delay(int attempt) {
    const double base = static_cast<double>(config_.retry.backoff_base.count()) *
                        std::pow(2.0, attempt - 1);
    double factor = 1.0;
    if (config_.retry.jitter > 0.0) {
      std::lock_guard lock(mutex_);
      std::uniform_real_distribution<double> dist(-config_.retry.jitter, config_.retry.jitter);
      factor += dist(rng_);
    }
    return std::chrono::milliseconds(static_cast<long long>(base * factor));
  }

  std::optional<GenerationResponse> lookup(const std::string& key) {
    {
      std::lock_guard lock(mutex_);
      if (auto it = memory_.find(key); it != memory_.end()) return it->second;
    }
    if (!config_.cache_dir) return std::nullopt;
    const fs::path file = *config_.cache_dir / (key + ".json");
    std::ifstream in(file);
    if (!in) return std::nullopt;
    try {
      auto j = nlohmann::json::parse(in);
      GenerationResponse resp = response_from_json(j.at("response"));
      std::lock_guard lock(mutex_);
      memory_.emplace(key, resp);
      return resp;
    } catch (const nlohmann::json::exception&) {
      return std::nullopt;  // unreadable entry: treat as a miss and overwrite
    }
  }

  void store(const std::string& key, const GenerationRequest& req, const GenerationResponse& resp) {
    {
      std::lock_guard lock(mutex_);
      memory_[key] = resp;
    }
    if (!config_.cache_dir) return;
    nlohmann::json j = {{"request", request_to_json(req, model_id())},
                        {"response", response_to_json(resp)}};
    const fs::path file = *config_.cache_dir / (key + ".json");
    const fs::path tmp = file.string() + ".tmp" + std::to_string(std::hash<std::thread::id>{}(
                                                      std::this_thread::get_id()));
    {
      std::ofstream out(tmp);
      if (!out) throw Error(ErrorKind::io, "cannot write cache file " + tmp.string());
      out << j.dump(2) << "\n";
    }
    fs::rename(tmp, file);
  }

  std::shared_ptr<Provider> provider_;
  BackendConfig config_;
  std::counting_semaphore<> slots_;
  std::mt19937 rng_;
  Sleeper sleeper_;
  std::mutex mutex_;
  std::map<std::string, GenerationResponse> memory_;
  std::atomic<std::size_t> provider_calls_{0};
  std::atomic<std::size_t> cache_hits_{0};
};

// ---------------------------------------------------------------------------
// Scripted mock

struct ScriptEntry {
  std::vector<std::string> completions;
  /// Token table for the first completion, when the logprob path is exercised.
  std::optional<TokenLogprobs> logprobs;
};

/// Entries are looked up by exact prompt fingerprint first; `rules` match by
/// substring (all needles must occur) in declaration order.
struct Script {
  std::map<std::string, ScriptEntry> by_fingerprint;
  std::vector<std::pair<std::vector<std::string>, ScriptEntry>> rules;
  std::string model_id = "mock";

  bool empty() const { return by_fingerprint.empty() && rules.empty(); }
};

inline ScriptEntry script_entry_from_json(const nlohmann::json& j) {
  ScriptEntry e;
  e.completions = j.at("completions").get<std::vector<std::string>>();
  if (e.completions.empty()) throw Error(ErrorKind::config, "script entry with no completions");
  if (j.contains("logprobs") && !j["logprobs"].is_null()) {
    e.logprobs = j["logprobs"].get<TokenLogprobs>();
  }
  return e;
}

/// Script file: {"model_id": ..., "entries": [{"fingerprint"|"contains": ..., "completions": [...],
/// "logprobs": [...]}]}.
inline Script script_from_json(const nlohmann::json& j) {
  Script s;
  s.model_id = j.value("model_id", "mock");
  for (const auto& entry : j.at("entries")) {
    ScriptEntry e = script_entry_from_json(entry);
    if (entry.contains("fingerprint")) {
      s.by_fingerprint[entry["fingerprint"].get<std::string>()] = std::move(e);
    } else if (entry.contains("contains")) {
      const auto& c = entry["contains"];
      std::vector<std::string> needles =
          c.is_array() ? c.get<std::vector<std::string>>() : std::vector<std::string>{c.get<std::string>()};
      s.rules.emplace_back(std::move(needles), std::move(e));
    } else {
      throw Error(ErrorKind::config, "script entry needs 'fingerprint' or 'contains'");
    }
  }
  return s;
}

inline Script load_script(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::config, "cannot open mock script " + path.string());
  try {
    return script_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, "malformed mock script " + path.string() + ": " + e.what());
  }
}

class ScriptedProvider : public Provider {
 public:
  explicit ScriptedProvider(Script script) : script_(std::move(script)) {
    if (script_.empty()) throw Error(ErrorKind::config, "mock script must be non-empty");
  }

  std::string model_id() const override { return script_.model_id; }

  /// The next `count` calls fail with a retryable (or not) transport error.
  void inject_failures(int count, int http_status = 503) {
    std::lock_guard lock(mutex_);
    pending_failures_ = count;
    failure_status_ = http_status;
  }

  /// Each call holds its slot for `latency`; used to observe the concurrency bound.
  void set_latency(std::chrono::milliseconds latency) { latency_ = latency; }

  int calls() const { return calls_.load(); }
  int peak_in_flight() const { return peak_.load(); }

  GenerationResponse call(const GenerationRequest& req) override {
    ++calls_;
    const int now = ++in_flight_;
    int prev = peak_.load();
    while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
    }
    struct Leave {
      std::atomic<int>& n;
      ~Leave() { --n; }
    } leave{in_flight_};

    if (latency_.count() > 0) std::this_thread::sleep_for(latency_);
    {
      std::lock_guard lock(mutex_);
      if (pending_failures_ > 0) {
        --pending_failures_;
        const bool retryable = failure_status_ == 429 || failure_status_ >= 500;
        throw TransportError("scripted failure (HTTP " + std::to_string(failure_status_) + ")",
                             retryable, failure_status_);
      }
    }

    const std::string fp = fingerprint(req.prompt);
    const ScriptEntry* entry = find(fp, req.prompt);
    if (!entry) throw Error(ErrorKind::scripted_miss, "no scripted response for prompt fingerprint " + fp);

    GenerationResponse resp;
    resp.model_id = script_.model_id;
    for (int i = 0; i < req.n_samples; ++i) {
      resp.completions.push_back(entry->completions[static_cast<std::size_t>(i) % entry->completions.size()]);
    }
    if (req.want_logprobs && entry->logprobs) {
      std::vector<TokenLogprobs> table(static_cast<std::size_t>(req.n_samples));
      table[0] = *entry->logprobs;
      resp.token_logprobs = std::move(table);
    }
    return resp;
  }

 private:
  const ScriptEntry* find(const std::string& fp, const std::string& prompt) const {
    if (auto it = script_.by_fingerprint.find(fp); it != script_.by_fingerprint.end()) {
      return &it->second;
    }
    for (const auto& [needles, entry] : script_.rules) {
      if (std::all_of(needles.begin(), needles.end(),
                      [&](const std::string& n) { return prompt.find(n) != std::string::npos; })) {
        return &entry;
      }
    }
    return nullptr;
  }

  Script script_;
  std::chrono::milliseconds latency_{0};
  std::mutex mutex_;
  int pending_failures_ = 0;
  int failure_status_ = 503;
  std::atomic<int> calls_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> peak_{0};
};

/// Backend over a scripted provider. Retries are immediate by default.
inline std::unique_ptr<LlmBackend> mock_from_script(Script script, BackendConfig config = {}) {
  config.model = script.model_id;
  config.retry.backoff_base = std::chrono::milliseconds(0);
  auto backend = std::make_unique<LlmBackend>(std::make_shared<ScriptedProvider>(std::move(script)),
                                              std::move(config));
  return backend;
}

}  // namespace geval

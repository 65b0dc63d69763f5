#include <cstdlib>
#include <thread>

#include <gtest/gtest.h>

#include "geval/http_provider.hpp"
#include "geval/llm.hpp"
#include "support.hpp"

using namespace geval;
using testutil::kind_of;
using testutil::message_of;

namespace {

Script fingerprint_script(const std::string& prompt, std::vector<std::string> completions) {
  Script s;
  s.by_fingerprint[fingerprint(prompt)] = ScriptEntry{std::move(completions), {}};
  return s;
}

GenerationRequest request(const std::string& prompt, int n = 1, double temperature = 0.0) {
  GenerationRequest r;
  r.prompt = prompt;
  r.n_samples = n;
  r.temperature = temperature;
  return r;
}

ScriptedProvider& mock(LlmBackend& b) { return dynamic_cast<ScriptedProvider&>(b.provider()); }

}  // namespace

TEST(Request, Validation) {
  auto r = request("p");
  r.n_samples = 0;
  EXPECT_EQ(kind_of([&] { r.validate(); }), ErrorKind::validation);
  r = request("p");
  r.want_logprobs = true;
  r.top_logprobs_k = 0;
  EXPECT_EQ(kind_of([&] { r.validate(); }), ErrorKind::validation);
}

TEST(Request, KeyCoversSamplingParameters) {
  const auto base = request("p", 20, 1.0);
  auto other = base;
  other.temperature = 0.0;
  EXPECT_NE(request_key(base, "m"), request_key(other, "m"));
  EXPECT_NE(request_key(base, "m"), request_key(base, "m2"));
  other = base;
  other.want_logprobs = true;
  EXPECT_NE(request_key(base, "m"), request_key(other, "m"));
  EXPECT_EQ(request_key(base, "m"), request_key(request("p", 20, 1.0), "m"));
}

TEST(Mock, ScriptedCompletion) {
  auto b = mock_from_script(fingerprint_script("judge this", {"4"}));
  const auto r = b->generate(request("judge this"));
  EXPECT_EQ(r.completions, std::vector<std::string>{"4"});
  EXPECT_FALSE(r.cached);
  EXPECT_EQ(r.attempts, 1);
}

TEST(Mock, CacheHitSkipsProvider) {
  auto b = mock_from_script(fingerprint_script("judge this", {"4"}));
  const auto first = b->generate(request("judge this"));
  const auto second = b->generate(request("judge this"));
  EXPECT_TRUE(second.cached);
  EXPECT_EQ(second.completions, first.completions);
  EXPECT_EQ(mock(*b).calls(), 1);
  EXPECT_EQ(b->provider_calls(), 1u);
  EXPECT_EQ(b->cache_hits(), 1u);
}

TEST(Mock, TwentyInScriptOrder) {
  std::vector<std::string> texts;
  for (int i = 0; i < 20; ++i) texts.push_back(std::to_string(i % 5 + 1) + "/" + std::to_string(i));
  auto b = mock_from_script(fingerprint_script("p", texts));
  EXPECT_EQ(b->generate(request("p", 20, 1.0)).completions, texts);
}

TEST(Mock, CyclesShortScript) {
  auto b = mock_from_script(fingerprint_script("p", {"1", "2", "3", "4"}));
  const auto r = b->generate(request("p", 20, 1.0));
  ASSERT_EQ(r.completions.size(), 20u);
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(r.completions[i], std::to_string(i % 4 + 1));
}

TEST(Mock, MissNamesFingerprint) {
  auto b = mock_from_script(fingerprint_script("p", {"5"}));
  const auto msg = message_of([&] { b->generate(request("unknown prompt")); });
  EXPECT_NE(msg.find(fingerprint("unknown prompt")), std::string::npos);
  EXPECT_EQ(kind_of([&] { b->generate(request("unknown prompt")); }), ErrorKind::scripted_miss);
}

TEST(Mock, EmptyScriptRejected) {
  EXPECT_EQ(kind_of([] { mock_from_script(Script{}); }), ErrorKind::config);
}

TEST(Mock, SubstringRulesInOrder) {
  auto b = mock_from_script(testutil::rule_script({{{"alpha", "beta"}, {"both"}}, {{"alpha"}, {"one"}}}));
  EXPECT_EQ(b->generate(request("alpha and beta")).completions[0], "both");
  EXPECT_EQ(b->generate(request("alpha only")).completions[0], "one");
}

TEST(Mock, ScriptFileFormat) {
  const auto s = load_script(testutil::data("mock_script.json"));
  EXPECT_EQ(s.model_id, "mock-judge");
  EXPECT_EQ(s.rules.size(), 8u);
  EXPECT_EQ(kind_of([] { load_script("/nonexistent/script.json"); }), ErrorKind::config);
}

TEST(Retry, TwoFailuresThenSuccess) {
  auto b = mock_from_script(fingerprint_script("p", {"4"}));
  std::vector<std::chrono::milliseconds> sleeps;
  b->set_sleeper([&](std::chrono::milliseconds d) { sleeps.push_back(d); });
  mock(*b).inject_failures(2, 503);
  const auto r = b->generate(request("p"));
  EXPECT_EQ(r.attempts, 3);
  EXPECT_EQ(r.completions[0], "4");
  EXPECT_EQ(mock(*b).calls(), 3);
  EXPECT_EQ(sleeps.size(), 2u);
}

TEST(Retry, BackoffGrowsExponentially) {
  BackendConfig cfg;
  cfg.retry.backoff_base = std::chrono::milliseconds(100);
  cfg.retry.jitter = 0.0;
  auto b = std::make_unique<LlmBackend>(std::make_shared<ScriptedProvider>(fingerprint_script("p", {"4"})), cfg);
  std::vector<long long> sleeps;
  b->set_sleeper([&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); });
  mock(*b).inject_failures(3, 429);
  EXPECT_EQ(b->generate(request("p")).attempts, 4);
  EXPECT_EQ(sleeps, (std::vector<long long>{100, 200, 400}));
}

TEST(Retry, ExhaustedCarriesAttemptLog) {
  BackendConfig cfg;
  cfg.retry.max_attempts = 3;
  auto b = mock_from_script(fingerprint_script("p", {"4"}), cfg);
  mock(*b).inject_failures(5, 500);
  try {
    b->generate(request("p"));
    FAIL() << "expected transport error";
  } catch (const TransportError& e) {
    const std::string msg = e.what();
    EXPECT_EQ(e.kind(), ErrorKind::transport);
    EXPECT_NE(msg.find("attempt 1"), std::string::npos);
    EXPECT_NE(msg.find("attempt 3"), std::string::npos);
  }
  EXPECT_EQ(mock(*b).calls(), 3);
}

TEST(Retry, NonRetryableStopsImmediately) {
  auto b = mock_from_script(fingerprint_script("p", {"4"}));
  mock(*b).inject_failures(1, 400);
  EXPECT_EQ(kind_of([&] { b->generate(request("p")); }), ErrorKind::transport);
  EXPECT_EQ(mock(*b).calls(), 1);
}

TEST(Concurrency, InFlightNeverExceedsBound) {
  const auto start = std::chrono::steady_clock::now();
  BackendConfig cfg;
  cfg.max_concurrency = 3;
  auto b = mock_from_script(testutil::rule_script({{{"prompt"}, {"4"}}}), cfg);
  mock(*b).set_latency(std::chrono::milliseconds(20));
  {
    std::vector<std::jthread> threads;
    for (int i = 0; i < 16; ++i) {
      threads.emplace_back([&, i] { b->generate(request("prompt " + std::to_string(i))); });
    }
  }
  EXPECT_EQ(mock(*b).calls(), 16);
  EXPECT_LE(mock(*b).peak_in_flight(), 3);
  EXPECT_GE(mock(*b).peak_in_flight(), 2);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 5.0);
}

TEST(Cache, PersistsAcrossBackends) {
  testutil::TempDir dir;
  BackendConfig cfg;
  cfg.cache_dir = dir.path();
  auto first = mock_from_script(fingerprint_script("p", {"4", "5"}), cfg);
  const auto a = first->generate(request("p", 2, 1.0));
  auto second = mock_from_script(fingerprint_script("p", {"1"}), cfg);
  const auto b = second->generate(request("p", 2, 1.0));
  EXPECT_TRUE(b.cached);
  EXPECT_EQ(b.completions, a.completions);
  EXPECT_EQ(mock(*second).calls(), 0);
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir.path())) files += e.path().extension() == ".json";
  EXPECT_EQ(files, 1u);
}

TEST(Cache, LogprobTablesRoundTrip) {
  testutil::TempDir dir;
  BackendConfig cfg;
  cfg.cache_dir = dir.path();
  Script s;
  TokenLogprobs table{{"4", std::log(0.6), {{"4", std::log(0.6)}, {"the", std::log(0.3)}, {"5", std::log(0.1)}}}};
  s.by_fingerprint[fingerprint("p")] = ScriptEntry{{"4"}, table};
  auto req = request("p");
  req.want_logprobs = true;
  req.top_logprobs_k = 5;
  const auto a = mock_from_script(s, cfg)->generate(req);
  const auto b = mock_from_script(s, cfg)->generate(req);
  ASSERT_TRUE(b.token_logprobs.has_value());
  EXPECT_TRUE(b.cached);
  EXPECT_EQ(*b.token_logprobs, *a.token_logprobs);
}

// --- HTTP provider against a local server ----------------------------------

namespace {

class LocalServer {
 public:
  explicit LocalServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server_.Post("/v1/chat/completions", std::move(handler));
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    server_.stop();
    thread_.join();
  }
  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

BackendConfig http_config(const std::string& base_url) {
  BackendConfig cfg;
  cfg.base_url = base_url;
  cfg.model = "test-model";
  cfg.api_key_env = "GEVAL_TEST_API_KEY";
  cfg.retry.backoff_base = std::chrono::milliseconds(0);
  cfg.timeout = std::chrono::seconds(5);
  return cfg;
}

}  // namespace

TEST(Http, SplitsBaseUrl) {
  const auto u = split_base_url("https://api.openai.com/v1/");
  EXPECT_EQ(u.scheme_host_port, "https://api.openai.com");
  EXPECT_EQ(u.path_prefix, "/v1");
  EXPECT_EQ(kind_of([] { split_base_url("api.openai.com"); }), ErrorKind::config);
}

TEST(Http, RequestBodyShape) {
  auto req = request("hello", 20, 1.0);
  auto body = chat_request_body(req, "gpt-4-0613");
  EXPECT_EQ(body["model"], "gpt-4-0613");
  EXPECT_EQ(body["n"], 20);
  EXPECT_EQ(body["messages"].size(), 1u);
  EXPECT_EQ(body["messages"][0]["role"], "user");
  EXPECT_FALSE(body.contains("logprobs"));
  req.want_logprobs = true;
  req.top_logprobs_k = 5;
  body = chat_request_body(req, "m");
  EXPECT_EQ(body["logprobs"], true);
  EXPECT_EQ(body["top_logprobs"], 5);
}

TEST(Http, ParsesChoicesAndLogprobs) {
  const auto r = parse_chat_response(R"({"model":"m","choices":[
    {"message":{"content":"4"},"logprobs":{"content":[{"token":"4","logprob":-0.5,
      "top_logprobs":[{"token":"4","logprob":-0.5},{"token":"5","logprob":-1.2}]}]}}]})");
  ASSERT_EQ(r.completions, std::vector<std::string>{"4"});
  ASSERT_TRUE(r.token_logprobs);
  EXPECT_EQ((*r.token_logprobs)[0][0].top.size(), 2u);
  EXPECT_DOUBLE_EQ((*r.token_logprobs)[0][0].top[1].logprob, -1.2);
}

TEST(Http, MalformedBodyIsProtocolErrorWithExcerpt) {
  const auto msg = message_of([] { parse_chat_response("<html>gateway</html>"); });
  EXPECT_NE(msg.find("<html>gateway"), std::string::npos);
  EXPECT_EQ(kind_of([] { parse_chat_response(R"({"choices":[{"nope":1}]})"); }), ErrorKind::protocol);
}

TEST(Http, EndToEndWithBearerToken) {
  std::atomic<int> hits{0};
  std::string seen_auth;
  LocalServer server([&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    seen_auth = req.get_header_value("Authorization");
    const auto body = nlohmann::json::parse(req.body);
    nlohmann::json choices = nlohmann::json::array();
    for (int i = 0; i < body["n"].get<int>(); ++i) choices.push_back({{"message", {{"content", "5"}}}});
    res.set_content(nlohmann::json{{"model", body["model"]}, {"choices", choices}}.dump(), "application/json");
  });
  ::setenv("GEVAL_TEST_API_KEY", "sk-test", 1);
  auto b = http_backend(http_config(server.base_url()));
  const auto r = b->generate(request("p", 3, 1.0));
  EXPECT_EQ(r.completions, (std::vector<std::string>{"5", "5", "5"}));
  EXPECT_EQ(seen_auth, "Bearer sk-test");
  EXPECT_TRUE(b->generate(request("p", 3, 1.0)).cached);
  EXPECT_EQ(hits.load(), 1);
}

TEST(Http, RetriesServerErrorsThenSucceeds) {
  std::atomic<int> hits{0};
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    if (++hits <= 2) {
      res.status = 503;
      res.set_content("busy", "text/plain");
      return;
    }
    res.set_content(R"({"choices":[{"message":{"content":"3"}}]})", "application/json");
  });
  ::setenv("GEVAL_TEST_API_KEY", "sk-test", 1);
  auto b = http_backend(http_config(server.base_url()));
  b->set_sleeper([](std::chrono::milliseconds) {});
  EXPECT_EQ(b->generate(request("p")).attempts, 3);
}

TEST(Http, CredentialErrorsAreNotRetried) {
  std::atomic<int> hits{0};
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 401;
  });
  ::setenv("GEVAL_TEST_API_KEY", "sk-bad", 1);
  auto b = http_backend(http_config(server.base_url()));
  EXPECT_EQ(kind_of([&] { b->generate(request("p")); }), ErrorKind::credential);
  EXPECT_EQ(hits.load(), 1);
  ::unsetenv("GEVAL_TEST_API_KEY");
  EXPECT_EQ(kind_of([&] { b->generate(request("q")); }), ErrorKind::credential);
  EXPECT_EQ(hits.load(), 1);
}

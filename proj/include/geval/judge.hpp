#pragma once

// Turns (record, criterion) pairs into JudgeResults: prompt, elicit, parse,
// estimate the score distribution, and take its probability-weighted mean.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "geval/core.hpp"
#include "geval/error.hpp"
#include "geval/llm.hpp"
#include "geval/prompt.hpp"
#include "geval/text.hpp"

namespace geval {

enum class Regime { logprob_weighted, sample_weighted, single_greedy };
enum class OutOfScalePolicy { discard_and_renormalize, error };

inline constexpr std::string_view to_string(Regime r) {
  switch (r) {
    case Regime::logprob_weighted: return "logprob_weighted";
    case Regime::sample_weighted: return "sample_weighted";
    case Regime::single_greedy: return "single_greedy";
  }
  return "single_greedy";
}

inline Regime regime_from_string(std::string_view s) {
  if (s == "logprob_weighted") return Regime::logprob_weighted;
  if (s == "sample_weighted") return Regime::sample_weighted;
  if (s == "single_greedy") return Regime::single_greedy;
  throw Error(ErrorKind::config, "unknown scoring regime '" + std::string(s) + "'");
}

struct ScoringConfig {
  Regime regime = Regime::sample_weighted;
  int n_samples = 20;
  double temperature = 1.0;
  double top_p = 1.0;
  OutOfScalePolicy out_of_scale_policy = OutOfScalePolicy::discard_and_renormalize;
  int max_tokens = 64;
  int top_logprobs_k = 20;
  bool include_cot = true;

  /// Defaults for a regime: 20 samples at temperature 1, or one greedy call.
  static ScoringConfig for_regime(Regime regime) {
    ScoringConfig cfg;
    cfg.regime = regime;
    if (regime != Regime::sample_weighted) {
      cfg.n_samples = 1;
      cfg.temperature = 0.0;
    }
    return cfg;
  }

  void validate() const {
    if (n_samples < 1) throw Error(ErrorKind::config, "n_samples must be >= 1");
    if (regime == Regime::single_greedy && n_samples != 1) {
      throw Error(ErrorKind::config, "single_greedy requires n_samples = 1");
    }
    if (!(temperature >= 0.0)) throw Error(ErrorKind::config, "temperature must be >= 0");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw Error(ErrorKind::config, "top_p must be in (0, 1]");
    if (regime == Regime::logprob_weighted && top_logprobs_k < 1) {
      throw Error(ErrorKind::config, "logprob_weighted requires top_logprobs_k >= 1");
    }
  }

  /// Per-scale check: the logprob path assumes single-token scores.
  void validate_for(const CriterionSpec& criterion) const {
    validate();
    if (regime == Regime::logprob_weighted && !criterion.scale.is_binary() &&
        (criterion.scale.max >= 10 || criterion.scale.min < 0)) {
      throw Error(ErrorKind::config, "criterion '" + criterion.name +
                                         "': logprob_weighted needs single-digit scores, scale is " +
                                         criterion.scale.describe());
    }
  }
};

struct ParsedScore {
  int value = 0;
  std::string raw_text;
  std::pair<std::size_t, std::size_t> match_span;  // [begin, end)
};

namespace detail {

inline bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

/// First whole-word, case-insensitive occurrence of `word` in `text`.
inline std::optional<std::size_t> find_word(std::string_view text, std::string_view word) {
  const std::string hay = lower(text);
  const std::string needle = lower(word);
  std::size_t pos = 0;
  while ((pos = hay.find(needle, pos)) != std::string::npos) {
    const bool left_ok = pos == 0 || !is_word_char(hay[pos - 1]);
    const std::size_t end = pos + needle.size();
    const bool right_ok = end >= hay.size() || !is_word_char(hay[end]);
    if (left_ok && right_ok) return pos;
    ++pos;
  }
  return std::nullopt;
}

}  // namespace detail

/// First admissible standalone integer (or first label for binary scales).
inline ParsedScore parse_score(const std::string& text, const ScoreScale& scale) {
  if (scale.is_binary()) {
    const auto pos_hit = detail::find_word(text, scale.labels->first);
    const auto neg_hit = detail::find_word(text, scale.labels->second);
    if (pos_hit && (!neg_hit || *pos_hit <= *neg_hit)) {
      return {1, text, {*pos_hit, *pos_hit + scale.labels->first.size()}};
    }
    if (neg_hit) return {0, text, {*neg_hit, *neg_hit + scale.labels->second.size()}};
    throw ParseError("no '" + scale.labels->first + "'/'" + scale.labels->second +
                         "' answer in response: " + text,
                     text);
  }

  const std::size_t n = text.size();
  std::size_t i = 0;
  while (i < n) {
    if (!std::isdigit(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t begin = i;
    while (i < n && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t end = i;

    // reject runs glued to letters or forming part of a decimal/longer number
    bool standalone = true;
    if (begin > 0) {
      const char prev = text[begin - 1];
      if (detail::is_word_char(prev)) standalone = false;
      if (prev == '.' && begin > 1 && std::isdigit(static_cast<unsigned char>(text[begin - 2]))) {
        standalone = false;
      }
      if (prev == ',' && begin > 1 && std::isdigit(static_cast<unsigned char>(text[begin - 2]))) {
        standalone = false;
      }
    }
    if (end < n) {
      const char next = text[end];
      if (detail::is_word_char(next)) standalone = false;
      if ((next == '.' || next == ',') && end + 1 < n &&
          std::isdigit(static_cast<unsigned char>(text[end + 1]))) {
        standalone = false;
      }
    }
    bool negative = false;
    if (begin > 0 && text[begin - 1] == '-' &&
        (begin == 1 || !detail::is_word_char(text[begin - 2]))) {
      negative = true;
    }
    if (!standalone || end - begin > 9) continue;
    int value = std::stoi(text.substr(begin, end - begin));
    if (negative) {
      value = -value;
      begin -= 1;
    }
    if (scale.contains(value)) return {value, text, {begin, end}};
  }
  throw ParseError("no admissible score in " + scale.describe() + " found in response: " + text, text);
}

inline std::optional<ParsedScore> try_parse_score(const std::string& text, const ScoreScale& scale) {
  try {
    return parse_score(text, scale);
  } catch (const ParseError&) {
    return std::nullopt;
  }
}

/// Relative frequencies of the parsed scores. Unparseable responses are
/// dropped (or fail the call under OutOfScalePolicy::error).
inline ScoreDistribution estimate_distribution_sampling(const std::vector<std::string>& responses,
                                                        const ScoreScale& scale,
                                                        OutOfScalePolicy policy = OutOfScalePolicy::discard_and_renormalize) {
  if (responses.empty()) throw Error(ErrorKind::precondition, "no responses to estimate from");
  std::map<int, double> counts;
  int kept = 0;
  for (const auto& r : responses) {
    if (policy == OutOfScalePolicy::error) {
      ++counts[parse_score(r, scale).value];
      ++kept;
    } else if (auto parsed = try_parse_score(r, scale)) {
      ++counts[parsed->value];
      ++kept;
    }
  }
  if (kept == 0) {
    throw Error(ErrorKind::distribution,
                "none of " + std::to_string(responses.size()) + " responses contained an admissible score");
  }
  return ScoreDistribution::from_weights(scale, counts, Estimation::sampling, kept);
}

namespace detail {

inline std::optional<int> score_of_token(const std::string& token, const ScoreScale& scale) {
  const std::string t = trim(token);
  if (t.empty()) return std::nullopt;
  if (scale.is_binary()) {
    const std::string l = lower(t);
    if (l == lower(scale.labels->first)) return 1;
    if (l == lower(scale.labels->second)) return 0;
    return std::nullopt;
  }
  for (int s : scale.admissible()) {
    if (t == std::to_string(s)) return s;
  }
  return std::nullopt;
}

}  // namespace detail

/// Distribution from the top-k alternatives at the token that carries the
/// greedy score, renormalized over admissible score tokens only.
inline ScoreDistribution estimate_distribution_logprobs(const GenerationResponse& response,
                                                        const ScoreScale& scale) {
  if (!response.token_logprobs || response.token_logprobs->empty() ||
      response.token_logprobs->front().empty() || response.completions.empty()) {
    throw Error(ErrorKind::precondition, "response carries no token logprobs");
  }
  const TokenLogprobs& tokens = response.token_logprobs->front();
  std::string joined;
  for (const auto& t : tokens) joined += t.token;
  const std::string& text = joined == response.completions.front() ? response.completions.front() : joined;
  const ParsedScore parsed = parse_score(text, scale);

  const TokenPosition* at = nullptr;
  std::size_t offset = 0;
  for (const auto& t : tokens) {
    if (parsed.match_span.first < offset + t.token.size()) {
      at = &t;
      break;
    }
    offset += t.token.size();
  }
  if (!at) return ScoreDistribution::degenerate(scale, parsed.value);

  std::map<int, double> mass;
  for (const auto& alt : at->top) {
    if (auto s = detail::score_of_token(alt.token, scale)) mass[*s] += std::exp(alt.logprob);
  }
  double total = 0.0;
  for (const auto& [s, m] : mass) total += m;
  if (mass.empty() || !(total > 0.0)) return ScoreDistribution::degenerate(scale, parsed.value);
  return ScoreDistribution::from_weights(scale, mass, Estimation::logprobs, 0);
}

namespace detail {

[[noreturn]] inline void rethrow_tagged(const std::string& record_id, const std::string& criterion) {
  const std::string tag = "[" + record_id + " / " + criterion + "] ";
  try {
    throw;
  } catch (const ParseError& e) {
    throw ParseError(tag + e.what(), e.text());
  } catch (const TransportError& e) {
    throw TransportError(tag + e.what(), e.retryable(), e.http_status());
  } catch (const Error& e) {
    throw Error(e.kind(), tag + e.what());
  }
}

}  // namespace detail

/// Scores one record under one criterion. `prompt_out` receives the assembled prompt.
inline JudgeResult score_one(const EvalRecord& record, const CriterionSpec& criterion,
                             const PromptTemplate& tmpl, const ScoringConfig& cfg, LlmBackend& backend,
                             AssembledPrompt* prompt_out = nullptr) {
  try {
    cfg.validate_for(criterion);
    AssembledPrompt prompt = assemble(tmpl, criterion, record, cfg.include_cot);

    GenerationRequest req;
    req.prompt = prompt.text;
    req.top_p = cfg.top_p;
    req.max_tokens = cfg.max_tokens;
    switch (cfg.regime) {
      case Regime::sample_weighted:
        req.n_samples = cfg.n_samples;
        req.temperature = cfg.temperature;
        break;
      case Regime::logprob_weighted:
        req.n_samples = 1;
        req.temperature = cfg.temperature;
        req.want_logprobs = true;
        req.top_logprobs_k = cfg.top_logprobs_k;
        break;
      case Regime::single_greedy:
        req.n_samples = 1;
        req.temperature = cfg.temperature;
        break;
    }
    const GenerationResponse resp = backend.generate(req);

    JudgeResult result;
    result.record_id = record.record_id;
    result.criterion = criterion.name;
    result.raw_responses = resp.completions;
    result.prompt_fingerprint = prompt.fingerprint;
    switch (cfg.regime) {
      case Regime::sample_weighted:
        result.distribution =
            estimate_distribution_sampling(resp.completions, criterion.scale, cfg.out_of_scale_policy);
        result.parse_failures =
            static_cast<int>(resp.completions.size()) - result.distribution.sample_count;
        break;
      case Regime::logprob_weighted:
        result.distribution = estimate_distribution_logprobs(resp, criterion.scale);
        break;
      case Regime::single_greedy:
        result.distribution =
            ScoreDistribution::degenerate(criterion.scale, parse_score(resp.completions.at(0), criterion.scale).value);
        break;
    }
    result.final_score = weighted_score(result.distribution);
    if (prompt_out) *prompt_out = std::move(prompt);
    return result;
  } catch (const Error&) {
    detail::rethrow_tagged(record.record_id, criterion.name);
  }
}

struct FailureEntry {
  std::string record_id;
  std::string criterion;
  std::string error_kind;
  std::string message;

  bool operator==(const FailureEntry&) const = default;
};

struct PromptLogEntry {
  std::string record_id;
  std::string criterion;
  std::string fingerprint;
  std::string template_id;
  bool includes_cot = false;
  std::string text;
};

struct DatasetScores {
  std::vector<JudgeResult> results;
  std::vector<FailureEntry> failures;
  std::vector<PromptLogEntry> prompts;
};

/// Every (record, criterion) pair, evaluated concurrently up to the backend
/// bound. Per-pair failures land in the manifest; outputs are sorted by
/// (record_id, criterion) regardless of completion order.
inline DatasetScores score_dataset(const std::vector<EvalRecord>& records,
                                   const std::vector<CriterionSpec>& criteria,
                                   const std::map<std::string, PromptTemplate>& templates,
                                   const ScoringConfig& cfg, LlmBackend& backend) {
  cfg.validate();
  for (const auto& c : criteria) {
    if (!templates.count(c.name)) {
      throw Error(ErrorKind::config, "no template configured for criterion '" + c.name + "'");
    }
    cfg.validate_for(c);
  }

  struct Slot {
    std::optional<JudgeResult> result;
    std::optional<FailureEntry> failure;
    std::optional<PromptLogEntry> prompt;
  };
  const std::size_t total = records.size() * criteria.size();
  std::vector<Slot> slots(total);
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next++; i < total; i = next++) {
      const EvalRecord& rec = records[i / criteria.size()];
      const CriterionSpec& crit = criteria[i % criteria.size()];
      const PromptTemplate& tmpl = templates.at(crit.name);
      try {
        AssembledPrompt prompt;
        slots[i].result = score_one(rec, crit, tmpl, cfg, backend, &prompt);
        slots[i].prompt = PromptLogEntry{rec.record_id, crit.name, prompt.fingerprint,
                                         prompt.parts.template_id, prompt.includes_cot, prompt.text};
      } catch (const Error& e) {
        slots[i].failure = FailureEntry{rec.record_id, crit.name, std::string(to_string(e.kind())), e.what()};
      } catch (const std::exception& e) {
        slots[i].failure = FailureEntry{rec.record_id, crit.name, "internal", e.what()};
      }
    }
  };

  const std::size_t n_workers =
      std::min<std::size_t>(static_cast<std::size_t>(backend.config().max_concurrency), total);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
    if (total > 0) worker();
  }

  DatasetScores out;
  for (auto& s : slots) {
    if (s.result) out.results.push_back(std::move(*s.result));
    if (s.failure) out.failures.push_back(std::move(*s.failure));
    if (s.prompt) out.prompts.push_back(std::move(*s.prompt));
  }
  auto by_key = [](const auto& a, const auto& b) {
    return std::tie(a.record_id, a.criterion) < std::tie(b.record_id, b.criterion);
  };
  std::sort(out.results.begin(), out.results.end(), by_key);
  std::sort(out.failures.begin(), out.failures.end(), by_key);
  std::sort(out.prompts.begin(), out.prompts.end(), by_key);
  return out;
}

// ---------------------------------------------------------------------------
// JSONL forms

inline nlohmann::json result_to_json(const JudgeResult& r) {
  return {{"record_id", r.record_id},
          {"criterion", r.criterion},
          {"final_score", r.final_score},
          {"distribution", {{"support", r.distribution.support}, {"probs", r.distribution.probs}}},
          {"estimation", std::string(to_string(r.distribution.estimation))},
          {"sample_count", r.distribution.sample_count},
          {"parse_failures", r.parse_failures},
          {"prompt_fingerprint", r.prompt_fingerprint},
          {"raw_responses", r.raw_responses}};
}

inline JudgeResult result_from_json(const nlohmann::json& j) {
  JudgeResult r;
  r.record_id = j.at("record_id").get<std::string>();
  r.criterion = j.at("criterion").get<std::string>();
  r.final_score = j.at("final_score").get<double>();
  r.distribution.support = j.at("distribution").at("support").get<std::vector<int>>();
  r.distribution.probs = j.at("distribution").at("probs").get<std::vector<double>>();
  r.distribution.estimation = estimation_from_string(j.at("estimation").get<std::string>());
  r.distribution.sample_count = j.at("sample_count").get<int>();
  r.parse_failures = j.at("parse_failures").get<int>();
  r.prompt_fingerprint = j.at("prompt_fingerprint").get<std::string>();
  r.raw_responses = j.value("raw_responses", std::vector<std::string>{});
  return r;
}

inline nlohmann::json failure_to_json(const FailureEntry& f) {
  return {{"record_id", f.record_id}, {"criterion", f.criterion}, {"error_kind", f.error_kind},
          {"message", f.message}};
}

inline void write_results_jsonl(const std::vector<JudgeResult>& results, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  for (const auto& r : results) out << result_to_json(r).dump() << "\n";
}

inline std::vector<JudgeResult> read_results_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open results file " + path.string());
  std::vector<JudgeResult> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(result_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::ingestion,
                  path.string() + ":" + std::to_string(line_no) + ": malformed result: " + e.what());
    }
  }
  return out;
}

inline void write_failures_jsonl(const std::vector<FailureEntry>& failures, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  for (const auto& f : failures) out << failure_to_json(f).dump() << "\n";
}

}  // namespace geval

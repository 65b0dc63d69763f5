#pragma once

// Run configuration: a JSON file plus command-line overrides.
//
// {
//   "task": "summeval",
//   "backend":  {"kind": "mock"|"http", "base_url", "model", "api_key_env", "max_concurrency",
//                "retry": {"max_attempts", "backoff_base_ms", "jitter"}, "timeout_s",
//                "script", "cache_dir"},
//   "scoring":  {"regime", "n_samples", "temperature", "top_p", "out_of_scale_policy",
//                "max_tokens", "top_logprobs_k"},
//   "criteria": [{"name", "definition", "scale": {"kind", "min", "max", "labels"},
//                 "steps", "task_intro"}],
//   "templates": {"<criterion>": "<builtin id or template path>"},
//   "datasets": {"<name>": {"adapter", "path", "aspect_map", "ignored_aspects", "aggregation"}},
//   "output_dir": "runs/x",
//   "seed": 0
// }
//
// Relative paths resolve against the config file's directory. Credentials are
// only ever read from the environment variable named by api_key_env.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geval/benchmarks.hpp"
#include "geval/builtin.hpp"
#include "geval/core.hpp"
#include "geval/judge.hpp"
#include "geval/llm.hpp"

namespace geval {

namespace fs = std::filesystem;

struct RunConfig {
  std::string backend_kind = "mock";
  BackendConfig backend;
  std::optional<fs::path> script;
  ScoringConfig scoring;
  std::string task = "summeval";
  std::vector<CriterionSpec> criteria;
  std::map<std::string, std::string> templates;  // criterion -> builtin id or path
  std::map<std::string, DatasetDescriptor> datasets;
  fs::path output_dir = "geval-run";
  unsigned seed = 0;
  fs::path base_dir = ".";

  fs::path resolve(const fs::path& p) const { return p.is_absolute() ? p : base_dir / p; }
};

inline ScoreScale scale_from_json(const nlohmann::json& j) {
  const std::string kind = j.value("kind", "integer_range");
  if (kind == "labeled_binary") {
    const auto labels = j.value("labels", std::vector<std::string>{"Yes", "No"});
    if (labels.size() != 2) throw Error(ErrorKind::config, "labeled_binary scale needs two labels");
    return ScoreScale::labeled_binary(labels[0], labels[1]);
  }
  if (kind != "integer_range") throw Error(ErrorKind::config, "unknown scale kind '" + kind + "'");
  return ScoreScale::integer_range(j.at("min").get<int>(), j.at("max").get<int>());
}

inline nlohmann::json scale_to_json(const ScoreScale& s) {
  if (s.is_binary()) return {{"kind", "labeled_binary"}, {"labels", {s.labels->first, s.labels->second}}};
  return {{"kind", "integer_range"}, {"min", s.min}, {"max", s.max}};
}

inline const TaskPreset& task_preset(const std::string& task) {
  static const std::vector<TaskPreset> presets = builtin_tasks();
  for (const auto& p : presets) {
    if (p.task == task) return p;
  }
  throw Error(ErrorKind::config, "unknown task '" + task + "' (known: summeval, topical_chat, qags)");
}

namespace detail {

inline void apply_scoring(ScoringConfig& s, const nlohmann::json& j) {
  if (j.contains("regime")) s = ScoringConfig::for_regime(regime_from_string(j["regime"].get<std::string>()));
  s.n_samples = j.value("n_samples", s.n_samples);
  s.temperature = j.value("temperature", s.temperature);
  s.top_p = j.value("top_p", s.top_p);
  s.max_tokens = j.value("max_tokens", s.max_tokens);
  s.top_logprobs_k = j.value("top_logprobs_k", s.top_logprobs_k);
  if (j.contains("out_of_scale_policy")) {
    const auto p = j["out_of_scale_policy"].get<std::string>();
    if (p == "discard_and_renormalize") {
      s.out_of_scale_policy = OutOfScalePolicy::discard_and_renormalize;
    } else if (p == "error") {
      s.out_of_scale_policy = OutOfScalePolicy::error;
    } else {
      throw Error(ErrorKind::config, "unknown out_of_scale_policy '" + p + "'");
    }
  }
}

inline void apply_criteria(RunConfig& cfg, const nlohmann::json& list) {
  for (const auto& c : list) {
    const std::string name = c.at("name").get<std::string>();
    auto it = std::find_if(cfg.criteria.begin(), cfg.criteria.end(),
                           [&](const CriterionSpec& s) { return s.name == name; });
    if (it == cfg.criteria.end()) {
      CriterionSpec spec;
      spec.name = name;
      spec.display_definition = c.at("definition").get<std::string>();
      spec.scale = scale_from_json(c.at("scale"));
      spec.task_intro = c.value("task_intro", task_preset(cfg.task).criteria.front().task_intro);
      cfg.criteria.push_back(spec);
      it = std::prev(cfg.criteria.end());
    }
    if (c.contains("definition")) it->display_definition = c["definition"].get<std::string>();
    if (c.contains("scale")) it->scale = scale_from_json(c["scale"]);
    if (c.contains("task_intro")) it->task_intro = c["task_intro"].get<std::string>();
    if (c.contains("steps")) it->evaluation_steps = c["steps"].get<std::vector<std::string>>();
  }
}

}  // namespace detail

inline DatasetDescriptor dataset_from_json(const std::string& name, const nlohmann::json& j, const fs::path& base) {
  const AdapterKind kind = adapter_from_string(j.value("adapter", "normalized_jsonl"));
  fs::path path = j.at("path").get<std::string>();
  if (!path.is_absolute()) path = base / path;
  DatasetDescriptor d = DatasetDescriptor::with_defaults(kind, path, name);
  if (j.contains("aspect_map")) d.aspect_map = j["aspect_map"].get<std::map<std::string, std::string>>();
  if (j.contains("ignored_aspects")) {
    const auto v = j["ignored_aspects"].get<std::vector<std::string>>();
    d.ignored_aspects = {v.begin(), v.end()};
  }
  const std::string agg = j.value("aggregation", "mean");
  if (agg == "mean") {
    d.aggregation = AnnotatorAggregation::mean;
  } else if (agg == "median") {
    d.aggregation = AnnotatorAggregation::median;
  } else {
    throw Error(ErrorKind::config, "unknown annotator aggregation '" + agg + "'");
  }
  d.validate();
  return d;
}

/// Defaults, then the file (if any). Command-line overrides are applied by the caller.
inline RunConfig load_run_config(const std::optional<fs::path>& file) {
  RunConfig cfg;
  nlohmann::json j = nlohmann::json::object();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw Error(ErrorKind::config, "cannot open config file " + file->string());
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::config, "malformed config file " + file->string() + ": " + e.what());
    }
    cfg.base_dir = file->has_parent_path() ? file->parent_path() : fs::path(".");
  }
  try {
    cfg.task = j.value("task", cfg.task);
    cfg.criteria = task_preset(cfg.task).criteria;
    if (j.contains("backend")) {
      const auto& b = j["backend"];
      cfg.backend_kind = b.value("kind", cfg.backend_kind);
      cfg.backend.base_url = b.value("base_url", cfg.backend.base_url);
      cfg.backend.model = b.value("model", cfg.backend.model);
      cfg.backend.api_key_env = b.value("api_key_env", cfg.backend.api_key_env);
      cfg.backend.max_concurrency = b.value("max_concurrency", cfg.backend.max_concurrency);
      cfg.backend.timeout = std::chrono::seconds(b.value("timeout_s", cfg.backend.timeout.count()));
      if (b.contains("retry")) {
        const auto& r = b["retry"];
        cfg.backend.retry.max_attempts = r.value("max_attempts", cfg.backend.retry.max_attempts);
        cfg.backend.retry.backoff_base =
            std::chrono::milliseconds(r.value("backoff_base_ms", cfg.backend.retry.backoff_base.count()));
        cfg.backend.retry.jitter = r.value("jitter", cfg.backend.retry.jitter);
      }
      if (b.contains("script")) cfg.script = cfg.resolve(b["script"].get<std::string>());
      if (b.contains("cache_dir")) cfg.backend.cache_dir = cfg.resolve(b["cache_dir"].get<std::string>());
    }
    if (j.contains("scoring")) detail::apply_scoring(cfg.scoring, j["scoring"]);
    if (j.contains("criteria")) detail::apply_criteria(cfg, j["criteria"]);
    if (j.contains("templates")) {
      cfg.templates = j["templates"].get<std::map<std::string, std::string>>();
    }
    if (j.contains("datasets")) {
      for (const auto& [name, d] : j["datasets"].items()) {
        cfg.datasets.emplace(name, dataset_from_json(name, d, cfg.base_dir));
      }
    }
    if (j.contains("output_dir")) cfg.output_dir = cfg.resolve(j["output_dir"].get<std::string>());
    cfg.seed = j.value("seed", cfg.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, std::string("invalid config: ") + e.what());
  }
  return cfg;
}

/// Effective configuration as written into a run directory (never secrets).
inline nlohmann::ordered_json config_snapshot(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["task"] = cfg.task;
  j["backend"] = {{"kind", cfg.backend_kind},
                  {"base_url", cfg.backend.base_url},
                  {"model", cfg.backend.model},
                  {"api_key_env", cfg.backend.api_key_env},
                  {"max_concurrency", cfg.backend.max_concurrency},
                  {"retry",
                   {{"max_attempts", cfg.backend.retry.max_attempts},
                    {"backoff_base_ms", cfg.backend.retry.backoff_base.count()},
                    {"jitter", cfg.backend.retry.jitter}}},
                  {"timeout_s", cfg.backend.timeout.count()}};
  if (cfg.script) j["backend"]["script"] = cfg.script->string();
  j["scoring"] = {{"regime", std::string(to_string(cfg.scoring.regime))},
                  {"n_samples", cfg.scoring.n_samples},
                  {"temperature", cfg.scoring.temperature},
                  {"top_p", cfg.scoring.top_p},
                  {"out_of_scale_policy", cfg.scoring.out_of_scale_policy == OutOfScalePolicy::error
                                              ? "error"
                                              : "discard_and_renormalize"},
                  {"max_tokens", cfg.scoring.max_tokens},
                  {"top_logprobs_k", cfg.scoring.top_logprobs_k},
                  {"include_cot", cfg.scoring.include_cot}};
  auto crits = nlohmann::ordered_json::array();
  for (const auto& c : cfg.criteria) {
    nlohmann::ordered_json jc;
    jc["name"] = c.name;
    jc["definition"] = c.display_definition;
    jc["scale"] = scale_to_json(c.scale);
    jc["task_intro"] = c.task_intro;
    if (c.evaluation_steps) jc["steps"] = *c.evaluation_steps;
    crits.push_back(std::move(jc));
  }
  j["criteria"] = std::move(crits);
  j["templates"] = cfg.templates;
  j["seed"] = cfg.seed;
  return j;
}

}  // namespace geval

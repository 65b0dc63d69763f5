#pragma once

// Command-line driver. `run` is the whole program minus process plumbing so
// tests can call it in-process.
//
// Exit codes:
//   0  success
//   1  usage (bad flags, missing subcommand)
//   2  configuration (config, precondition, template assembly)
//   3  backend (transport, credential, protocol, scripted mock miss)
//   4  parse (judge output, score distribution, CoT generation)
//   5  data (validation, ingestion, io, aggregation, report)

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "geval/analysis.hpp"
#include "geval/benchmarks.hpp"
#include "geval/builtin.hpp"
#include "geval/config.hpp"
#include "geval/http_provider.hpp"
#include "geval/judge.hpp"
#include "geval/llm.hpp"
#include "geval/metaeval.hpp"
#include "geval/prompt.hpp"

namespace geval::cli {

namespace fs = std::filesystem;

enum ExitCode : int { ok = 0, usage = 1, config_error = 2, backend_error = 3, parse_error = 4, data_error = 5 };

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
    case ErrorKind::precondition:
    case ErrorKind::assembly:
      return config_error;
    case ErrorKind::transport:
    case ErrorKind::credential:
    case ErrorKind::protocol:
    case ErrorKind::scripted_miss:
      return backend_error;
    case ErrorKind::parse:
    case ErrorKind::distribution:
    case ErrorKind::cot_generation:
      return parse_error;
    case ErrorKind::validation:
    case ErrorKind::ingestion:
    case ErrorKind::io:
    case ErrorKind::aggregation:
    case ErrorKind::report:
      return data_error;
  }
  return data_error;
}

struct GlobalFlags {
  std::string config;
  std::string output_dir;
  std::string backend;
  std::string model;
  std::string script;
  unsigned seed = 0;
  bool force = false;
};

struct ScoreFlags {
  std::string dataset;
  std::string adapter;
  std::vector<std::string> criteria;
  std::string template_ref;
  std::string regime;
  bool no_cot = false;
  bool no_probs = false;
  int n_samples = 0;
  double temperature = 0.0;
};

struct MetaevalFlags {
  std::vector<std::string> results;
  std::vector<std::string> inputs;
  std::string dataset;
  std::string adapter;
  std::string table = "summeval";
  std::string label = "G-Eval";
  std::string aggregation;
  std::string tau_variant = "b";
  std::string undefined = "skip";
};

struct BiasFlags {
  std::string preferences;
  std::string criterion;
  std::string template_ref;
};

struct ConvertFlags {
  std::string dataset;
  std::string adapter = "normalized_jsonl";
  std::string input;
  std::string name;
  std::string output;
  std::string annotators;
  bool dry_run = false;
};

namespace detail {

/// Effective configuration: file values override defaults and explicit flags override both.
inline RunConfig effective_config(const CLI::App& app, const GlobalFlags& g) {
  RunConfig cfg = load_run_config(g.config.empty() ? std::nullopt : std::optional<fs::path>(g.config));
  if (app.count("--output-dir")) cfg.output_dir = g.output_dir;
  if (app.count("--backend")) cfg.backend_kind = g.backend;
  if (app.count("--model")) cfg.backend.model = g.model;
  if (app.count("--script")) cfg.script = fs::path(g.script);
  if (app.count("--seed")) cfg.seed = g.seed;
  cfg.backend.seed = cfg.seed;
  if (cfg.backend_kind != "mock" && cfg.backend_kind != "http") {
    throw Error(ErrorKind::config, "unknown backend '" + cfg.backend_kind + "' (expected mock or http)");
  }
  return cfg;
}

inline std::unique_ptr<LlmBackend> make_backend(RunConfig& cfg) {
  if (!cfg.backend.cache_dir) cfg.backend.cache_dir = cfg.output_dir / "cache";
  if (cfg.backend_kind == "http") return http_backend(cfg.backend);
  if (!cfg.script) {
    throw Error(ErrorKind::config, "mock backend needs a script (--script or backend.script in the config)");
  }
  Script script = load_script(*cfg.script);
  BackendConfig bc = cfg.backend;
  bc.model = script.model_id;
  return std::make_unique<LlmBackend>(std::make_shared<ScriptedProvider>(std::move(script)), bc);
}

inline std::string known_names(const std::vector<CriterionSpec>& criteria) {
  std::string out;
  for (const auto& c : criteria) out += (out.empty() ? "" : ", ") + c.name;
  return out;
}

inline const CriterionSpec& find_criterion(const RunConfig& cfg, const std::string& name) {
  for (const auto& c : cfg.criteria) {
    if (c.name == name) return c;
  }
  throw Error(ErrorKind::config, "unknown criterion '" + name + "' for task '" + cfg.task +
                                     "' (known: " + known_names(cfg.criteria) + "); see --help");
}

/// A builtin template id, or a template file with a sidecar.
inline PromptTemplate resolve_template(const RunConfig& cfg, const std::string& ref) {
  static const std::vector<PromptTemplate> builtins = load_builtin_templates();
  if (const PromptTemplate* t = find_template(builtins, ref)) return *t;
  const fs::path p = cfg.resolve(ref);
  if (!fs::exists(p)) {
    throw Error(ErrorKind::config,
                "template '" + ref + "' is neither a builtin (summarization, dialogue, hallucination) nor a file");
  }
  return load_template_file(p);
}

inline PromptTemplate template_for(const RunConfig& cfg, const std::string& criterion, const std::string& override_ref) {
  if (!override_ref.empty()) return resolve_template(cfg, override_ref);
  if (auto it = cfg.templates.find(criterion); it != cfg.templates.end()) return resolve_template(cfg, it->second);
  return resolve_template(cfg, task_preset(cfg.task).template_id);
}

inline void guard_outputs(const std::vector<fs::path>& paths, bool force) {
  if (force) return;
  for (const auto& p : paths) {
    if (fs::exists(p)) {
      throw Error(ErrorKind::config, "refusing to overwrite existing run artifact " + p.string() + " (use --force)");
    }
  }
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out << text;
  out.close();
  if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

inline DatasetDescriptor resolve_dataset(const RunConfig& cfg, const std::string& ref, const std::string& adapter) {
  if (auto it = cfg.datasets.find(ref); it != cfg.datasets.end()) return it->second;
  const AdapterKind kind = adapter_from_string(adapter.empty() ? "normalized_jsonl" : adapter);
  return DatasetDescriptor::with_defaults(kind, ref, fs::path(ref).stem().string());
}

/// Fills missing evaluation steps through the CoT cache in the output dir.
inline std::vector<CriterionSpec> with_steps(const std::vector<CriterionSpec>& criteria,
                                             const std::map<std::string, PromptTemplate>& templates,
                                             const RunConfig& cfg, LlmBackend& backend) {
  std::vector<CriterionSpec> out;
  std::optional<CotGenerator> cot;
  for (const auto& c : criteria) {
    if (c.evaluation_steps || !cfg.scoring.include_cot || !templates.at(c.name).uses("steps")) {
      out.push_back(c);
      continue;
    }
    if (!cot) cot.emplace(cfg.output_dir / "cot_cache.json");
    out.push_back(with_generated_steps(c, *cot, backend));
  }
  return out;
}

inline std::string prompts_jsonl(const std::vector<PromptLogEntry>& prompts) {
  std::string out;
  for (const auto& p : prompts) {
    nlohmann::ordered_json j;
    j["record_id"] = p.record_id;
    j["criterion"] = p.criterion;
    j["template_id"] = p.template_id;
    j["fingerprint"] = p.fingerprint;
    j["includes_cot"] = p.includes_cot;
    j["text"] = p.text;
    out += j.dump() + "\n";
  }
  return out;
}

inline std::pair<std::string, std::string> split_label(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos) return {"", s};
  return {s.substr(0, eq), s.substr(eq + 1)};
}

// ---------------------------------------------------------------------------
// Subcommands

inline int cmd_cot(const RunConfig& base, const std::string& criterion_name, std::ostream& out) {
  RunConfig cfg = base;
  const CriterionSpec& criterion = find_criterion(cfg, criterion_name);
  if (criterion.evaluation_steps) {
    out << "Evaluation steps for " << criterion.name << " (configured):\n"
        << render_steps(*criterion.evaluation_steps) << "\n";
    return ok;
  }
  fs::create_directories(cfg.output_dir);
  auto backend = make_backend(cfg);
  CotGenerator cot(cfg.output_dir / "cot_cache.json");
  const CotOutcome res = cot.generate(criterion, *backend);
  out << "Evaluation steps for " << criterion.name << " (" << (res.cached ? "cached" : "generated") << "):\n"
      << render_steps(res.steps) << "\n";
  return ok;
}

inline int cmd_score(const RunConfig& base, const ScoreFlags& f, const CLI::App& sub, bool force, std::ostream& out) {
  RunConfig cfg = base;
  if (!f.regime.empty()) {
    const bool keep_cot = cfg.scoring.include_cot;
    const auto policy = cfg.scoring.out_of_scale_policy;
    cfg.scoring = ScoringConfig::for_regime(regime_from_string(f.regime));
    cfg.scoring.include_cot = keep_cot;
    cfg.scoring.out_of_scale_policy = policy;
  }
  if (f.no_probs) cfg.scoring = variant_config(Variant::no_probs, cfg.scoring);
  if (f.no_cot) cfg.scoring = variant_config(Variant::no_cot, cfg.scoring);
  if (sub.count("--n-samples")) cfg.scoring.n_samples = f.n_samples;
  if (sub.count("--temperature")) cfg.scoring.temperature = f.temperature;
  cfg.scoring.validate();

  std::vector<CriterionSpec> criteria;
  if (f.criteria.empty()) {
    criteria = cfg.criteria;
  } else {
    for (const auto& name : f.criteria) criteria.push_back(find_criterion(cfg, name));
  }
  validate_criteria(criteria);
  std::map<std::string, PromptTemplate> templates;
  for (const auto& c : criteria) {
    PromptTemplate t = template_for(cfg, c.name, f.template_ref);
    t.validate();
    templates.emplace(c.name, std::move(t));
  }

  const DatasetDescriptor desc = resolve_dataset(cfg, f.dataset, f.adapter);
  const std::vector<fs::path> artifacts{cfg.output_dir / "config.json", cfg.output_dir / "prompts.jsonl",
                                        cfg.output_dir / "results.jsonl", cfg.output_dir / "failures.jsonl"};
  guard_outputs(artifacts, force);
  const std::vector<EvalRecord> records = ingest(desc);

  fs::create_directories(cfg.output_dir);
  auto backend = make_backend(cfg);
  criteria = with_steps(criteria, templates, cfg, *backend);
  const DatasetScores scores = score_dataset(records, criteria, templates, cfg.scoring, *backend);

  RunConfig snapshot = cfg;
  snapshot.criteria = criteria;
  for (const auto& [name, t] : templates) snapshot.templates[name] = t.template_id;
  auto snap = config_snapshot(snapshot);
  snap["dataset"] = {{"name", desc.name}, {"adapter", std::string(to_string(desc.kind))}, {"path", desc.path.string()}};
  write_text(artifacts[0], snap.dump(2) + "\n");
  write_text(artifacts[1], prompts_jsonl(scores.prompts));
  write_results_jsonl(scores.results, artifacts[2]);
  write_failures_jsonl(scores.failures, artifacts[3]);

  out << "scored " << scores.results.size() << " of " << records.size() * criteria.size() << " pairs, "
      << scores.failures.size() << " failures; provider calls " << backend->provider_calls() << ", cache hits "
      << backend->cache_hits() << "\n"
      << "results: " << artifacts[2].string() << "\n";
  return ok;
}

inline TableSpec resolve_table(const RunConfig& cfg, const std::string& ref) {
  if (ref == "summeval") return summeval_table();
  if (ref == "topical_chat") return topical_chat_table();
  if (ref == "qags") return qags_table();
  const fs::path p = cfg.resolve(ref);
  std::ifstream in(p);
  if (!in) {
    throw Error(ErrorKind::config, "table '" + ref + "' is neither builtin (summeval, topical_chat, qags) nor a file");
  }
  try {
    return table_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, "malformed table spec " + p.string() + ": " + e.what());
  }
}

inline int cmd_metaeval(const RunConfig& cfg, const MetaevalFlags& f, const CLI::App& sub, bool force,
                        std::ostream& out) {
  const TableSpec table = resolve_table(cfg, f.table);
  AggregationSpec agg;
  agg.mode = sub.count("--aggregation") ? aggregation_from_string(f.aggregation) : table.aggregation;
  agg.tau_variant = tau_variant_from_string(f.tau_variant);
  agg.undefined_policy = undefined_policy_from_string(f.undefined);

  std::map<std::string, MetaevalInput> shared;
  for (const auto& spec : f.inputs) {
    const auto [name, rest] = split_label(spec);
    std::vector<std::string> parts;
    std::stringstream ss(rest);
    for (std::string part; std::getline(ss, part, ',');) parts.push_back(part);
    if (name.empty() || parts.size() < 2 || parts.size() > 3) {
      throw Error(ErrorKind::config, "--input expects NAME=RESULTS,DATASET[,ADAPTER], got '" + spec + "'");
    }
    shared[name] = {read_results_jsonl(parts[0]),
                    ingest(resolve_dataset(cfg, parts[1], parts.size() == 3 ? parts[2] : f.adapter))};
  }

  std::vector<EvalRecord> records;
  if (!f.results.empty()) {
    if (f.dataset.empty()) throw Error(ErrorKind::config, "--results needs --dataset");
    records = ingest(resolve_dataset(cfg, f.dataset, f.adapter));
  }

  const std::vector<fs::path> artifacts{cfg.output_dir / "report.md", cfg.output_dir / "report.csv",
                                        cfg.output_dir / "report.json"};
  guard_outputs(artifacts, force);

  std::vector<CorrelationReport> rows;
  if (f.results.empty()) {
    if (shared.empty()) throw Error(ErrorKind::config, "metaeval needs --results or --input");
    rows.push_back(evaluate_table(f.label, table, shared, agg));
  }
  for (const auto& r : f.results) {
    auto [label, path] = split_label(r);
    auto inputs = shared;
    inputs[""] = {read_results_jsonl(path), records};
    rows.push_back(evaluate_table(label.empty() ? f.label : label, table, inputs, agg));
  }

  const std::string md = render_markdown(table, rows);
  fs::create_directories(cfg.output_dir);
  write_text(artifacts[0], md);
  write_text(artifacts[1], render_csv(table, rows));
  write_text(artifacts[2], report_to_json(table, rows).dump(2) + "\n");
  out << md;
  return ok;
}

inline int cmd_bias(const RunConfig& base, const BiasFlags& f, bool force, std::ostream& out) {
  RunConfig cfg = base;
  const std::string name = f.criterion.empty() ? cfg.criteria.front().name : f.criterion;
  CriterionSpec criterion = find_criterion(cfg, name);
  const PromptTemplate tmpl = template_for(cfg, criterion.name, f.template_ref);
  tmpl.validate();

  const std::vector<fs::path> artifacts{cfg.output_dir / "bias.md", cfg.output_dir / "bias.csv",
                                        cfg.output_dir / "bias_failures.jsonl"};
  guard_outputs(artifacts, force);
  const auto data = load_preferences_jsonl(f.preferences);

  fs::create_directories(cfg.output_dir);
  auto backend = make_backend(cfg);
  criterion = with_steps({criterion}, {{criterion.name, tmpl}}, cfg, *backend).front();
  const BiasReport rep = bias_report(data, criterion, tmpl, cfg.scoring, *backend);

  const std::string md = render_bias_markdown(rep);
  write_text(artifacts[0], md);
  write_text(artifacts[1], render_bias_csv(rep));
  write_failures_jsonl(rep.failures, artifacts[2]);
  out << md;
  return ok;
}

inline int cmd_convert(const RunConfig& cfg, const ConvertFlags& f, bool force, std::ostream& out) {
  DatasetDescriptor desc;
  if (!f.dataset.empty()) {
    desc = resolve_dataset(cfg, f.dataset, f.adapter);
  } else {
    if (f.input.empty()) throw Error(ErrorKind::config, "convert needs --input PATH or --dataset NAME");
    const std::string name = f.name.empty() ? fs::path(f.input).stem().string() : f.name;
    desc = DatasetDescriptor::with_defaults(adapter_from_string(f.adapter), f.input, name);
  }
  if (f.annotators == "median") {
    desc.aggregation = AnnotatorAggregation::median;
  } else if (f.annotators == "mean") {
    desc.aggregation = AnnotatorAggregation::mean;
  } else if (!f.annotators.empty()) {
    throw Error(ErrorKind::config, "unknown annotator aggregation '" + f.annotators + "'");
  }
  desc.validate();

  const fs::path target = f.output.empty() ? cfg.output_dir / (desc.name + ".jsonl") : fs::path(f.output);
  if (!f.dry_run) guard_outputs({target}, force);
  const auto records = ingest(desc);
  if (f.dry_run) {
    out << "validated " << records.size() << " records from " << desc.path.string() << " (dry run, nothing written)\n";
    return ok;
  }
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::size_t n = emit_normalized(records, target);
  out << "wrote " << n << " records to " << target.string() << "\n";
  return ok;
}

}  // namespace detail

/// Entry point; argv[0] is the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"G-Eval: LLM-judged NLG evaluation and meta-evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  app.add_option("--config", g.config, "JSON run configuration");
  app.add_option("--output-dir", g.output_dir, "run directory");
  app.add_option("--backend", g.backend, "mock or http")->check(CLI::IsMember({"mock", "http"}));
  app.add_option("--model", g.model, "model identifier for the http backend");
  app.add_option("--script", g.script, "scripted responses for the mock backend");
  app.add_option("--seed", g.seed, "seed for retry jitter");
  app.add_flag("--force", g.force, "overwrite existing run artifacts");

  auto* cot = app.add_subcommand("cot", "generate (or show cached) evaluation steps for a criterion");
  std::string cot_criterion;
  cot->add_option("--criterion", cot_criterion, "criterion name")->required();

  auto* score = app.add_subcommand("score", "score a dataset with the LLM judge");
  ScoreFlags sf;
  score->add_option("--dataset", sf.dataset, "dataset name from the config, or a path")->required();
  score->add_option("--adapter", sf.adapter, "summeval, topical_chat_usr, qags or normalized_jsonl");
  score->add_option("--criteria", sf.criteria, "comma-separated subset of criteria")->delimiter(',');
  score->add_option("--template", sf.template_ref, "builtin template id or template file");
  score->add_option("--regime", sf.regime, "sample_weighted, logprob_weighted or single_greedy");
  score->add_flag("--no-cot", sf.no_cot, "omit the evaluation steps block");
  score->add_flag("--no-probs", sf.no_probs, "single greedy score instead of a weighted sum");
  score->add_option("--n-samples", sf.n_samples, "samples per prompt");
  score->add_option("--temperature", sf.temperature, "sampling temperature");

  auto* meta = app.add_subcommand("metaeval", "correlate judge scores with human ratings");
  MetaevalFlags mf;
  meta->add_option("--results", mf.results, "[LABEL=]results.jsonl, one table row each");
  meta->add_option("--dataset", mf.dataset, "dataset name or path holding the human ratings");
  meta->add_option("--adapter", mf.adapter, "adapter for --dataset paths");
  meta->add_option("--input", mf.inputs, "NAME=RESULTS,DATASET[,ADAPTER] for multi-input tables");
  meta->add_option("--table", mf.table, "summeval, topical_chat, qags or a table spec file");
  meta->add_option("--label", mf.label, "row label when --results carries none");
  meta->add_option("--aggregation", mf.aggregation, "summary, turn or pooled");
  meta->add_option("--tau-variant", mf.tau_variant, "a or b")->check(CLI::IsMember({"a", "b"}));
  meta->add_option("--undefined", mf.undefined, "skip or zero")->check(CLI::IsMember({"skip", "zero"}));

  auto* bias = app.add_subcommand("bias", "compare judge scores on human vs LLM summaries");
  BiasFlags bf;
  bias->add_option("--preferences", bf.preferences, "preference JSONL")->required();
  bias->add_option("--criterion", bf.criterion, "criterion to score (default: first of the task)");
  bias->add_option("--template", bf.template_ref, "builtin template id or template file");

  auto* convert = app.add_subcommand("convert", "convert a benchmark file to normalized JSONL");
  ConvertFlags cf;
  convert->add_option("--dataset", cf.dataset, "dataset name from the config");
  convert->add_option("--adapter", cf.adapter, "summeval, topical_chat_usr, qags or normalized_jsonl");
  convert->add_option("--input", cf.input, "raw benchmark file");
  convert->add_option("--name", cf.name, "dataset name (default: file stem)");
  convert->add_option("--output", cf.output, "normalized JSONL path (default: <output-dir>/<name>.jsonl)");
  convert->add_option("--annotators", cf.annotators, "mean or median");
  convert->add_flag("--dry-run", cf.dry_run, "validate only");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  if (!argv_rev.empty()) argv_rev.pop_back();  // program name
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? ok : usage;
  }

  try {
    const RunConfig cfg = detail::effective_config(app, g);
    if (*cot) return detail::cmd_cot(cfg, cot_criterion, out);
    if (*score) return detail::cmd_score(cfg, sf, *score, g.force, out);
    if (*meta) return detail::cmd_metaeval(cfg, mf, *meta, g.force, out);
    if (*bias) return detail::cmd_bias(cfg, bf, g.force, out);
    if (*convert) return detail::cmd_convert(cfg, cf, g.force, out);
  } catch (const Error& e) {
    err << "error [" << to_string(e.kind()) << "]: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error [io]: " << e.what() << "\n";
    return data_error;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return data_error;
  }
  return usage;
}

}  // namespace geval::cli

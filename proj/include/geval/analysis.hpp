#pragma once

// Self-preference (human vs LLM summary) report and the CoT / probability
// ablation comparison.

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geval/core.hpp"
#include "geval/judge.hpp"
#include "geval/metaeval.hpp"
#include "geval/prompt.hpp"

namespace geval {

enum class Preference { human_better, llm_better, equal };

inline constexpr std::array<Preference, 3> kPreferences = {Preference::human_better, Preference::llm_better,
                                                           Preference::equal};

inline constexpr std::string_view to_string(Preference p) {
  switch (p) {
    case Preference::human_better: return "human_better";
    case Preference::llm_better: return "llm_better";
    case Preference::equal: return "equal";
  }
  return "equal";
}

inline Preference preference_from_string(std::string_view s) {
  for (auto p : kPreferences) {
    if (to_string(p) == s) return p;
  }
  throw Error(ErrorKind::validation, "unknown preference '" + std::string(s) +
                                         "' (expected human_better, llm_better or equal)");
}

struct PreferenceRecord {
  std::string article;
  std::string human_summary;
  std::string llm_summary;
  Preference preference = Preference::equal;

  void validate(std::size_t index) const {
    const std::string at = "preference record " + std::to_string(index);
    if (article.empty()) throw Error(ErrorKind::validation, at + ": empty article");
    if (human_summary.empty()) throw Error(ErrorKind::validation, at + ": empty human_summary");
    if (llm_summary.empty()) throw Error(ErrorKind::validation, at + ": empty llm_summary");
  }
};

/// JSONL with fields article, human_summary, llm_summary, preference.
inline std::vector<PreferenceRecord> load_preferences_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open preference dataset " + path.string());
  std::vector<PreferenceRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PreferenceRecord r{j.at("article").get<std::string>(), j.at("human_summary").get<std::string>(),
                         j.at("llm_summary").get<std::string>(),
                         preference_from_string(j.at("preference").get<std::string>())};
      r.validate(out.size());
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::ingestion, path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

struct BiasCategory {
  Preference preference = Preference::equal;
  std::optional<double> human_mean;
  std::optional<double> llm_mean;
  int count = 0;
};

struct BiasReport {
  std::array<BiasCategory, 3> categories;
  /// mean(LLM score) - mean(human score) over every scored record.
  std::optional<double> overall_delta;
  std::vector<FailureEntry> failures;
  /// Prompt provenance of the (human, LLM) pair for each record.
  std::vector<std::pair<PromptParts, PromptParts>> prompt_pairs;

  const BiasCategory& category(Preference p) const { return categories[static_cast<std::size_t>(p)]; }
};

/// Scores both summaries of every record with the same template and config,
/// then averages per human-preference category.
inline BiasReport bias_report(const std::vector<PreferenceRecord>& data, const CriterionSpec& criterion,
                              const PromptTemplate& tmpl, const ScoringConfig& cfg, LlmBackend& backend) {
  if (data.empty()) throw Error(ErrorKind::precondition, "bias report needs a non-empty dataset");
  for (std::size_t i = 0; i < data.size(); ++i) data[i].validate(i);

  std::vector<EvalRecord> records;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::string doc = "pref-" + std::to_string(i);
    records.push_back({doc + "#human", doc, "human", data[i].article, std::nullopt, data[i].human_summary, {}, "preference"});
    records.push_back({doc + "#llm", doc, "llm", data[i].article, std::nullopt, data[i].llm_summary, {}, "preference"});
  }
  const auto scored = score_dataset(records, {criterion}, {{criterion.name, tmpl}}, cfg, backend);

  std::map<std::string, double> score_of;
  for (const auto& r : scored.results) score_of[r.record_id] = r.final_score;

  BiasReport rep;
  rep.failures = scored.failures;
  std::array<std::vector<double>, 3> human, llm;
  std::vector<double> all_human, all_llm;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::string doc = "pref-" + std::to_string(i);
    const auto k = static_cast<std::size_t>(data[i].preference);
    ++rep.categories[k].count;
    if (auto it = score_of.find(doc + "#human"); it != score_of.end()) {
      human[k].push_back(it->second);
      all_human.push_back(it->second);
    }
    if (auto it = score_of.find(doc + "#llm"); it != score_of.end()) {
      llm[k].push_back(it->second);
      all_llm.push_back(it->second);
    }
    // same prompt skeleton for both sides: only the output slot differs
    try {
      AssembledPrompt h = assemble(tmpl, criterion, records[2 * i], cfg.include_cot);
      AssembledPrompt l = assemble(tmpl, criterion, records[2 * i + 1], cfg.include_cot);
      rep.prompt_pairs.emplace_back(h.parts, l.parts);
    } catch (const Error&) {
      // already reported through the failure manifest
    }
  }
  auto mean = [](const std::vector<double>& v) -> std::optional<double> {
    if (v.empty()) return std::nullopt;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  for (std::size_t k = 0; k < 3; ++k) {
    rep.categories[k].preference = kPreferences[k];
    rep.categories[k].human_mean = mean(human[k]);
    rep.categories[k].llm_mean = mean(llm[k]);
  }
  const auto mh = mean(all_human);
  const auto ml = mean(all_llm);
  if (mh && ml) rep.overall_delta = *ml - *mh;
  return rep;
}

namespace detail {

inline std::string fmt_mean(const std::optional<double>& v, bool exact_form) {
  if (!v) return exact_form ? "" : "--";
  if (exact_form) return nlohmann::json(*v).dump();
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", *v);
  return buf;
}

}  // namespace detail

inline std::string render_bias_markdown(const BiasReport& rep) {
  std::ostringstream out;
  out << "| Category | Human-written | LLM-generated | Count |\n|---|---|---|---|\n";
  for (const auto& c : rep.categories) {
    out << "| " << to_string(c.preference) << " | " << detail::fmt_mean(c.human_mean, false) << " | "
        << detail::fmt_mean(c.llm_mean, false) << " | " << c.count << " |\n";
  }
  out << "\nOverall delta (LLM - human): " << detail::fmt_mean(rep.overall_delta, false) << "\n";
  return out.str();
}

/// Bar-chart-ready: category,human_mean,llm_mean,count.
inline std::string render_bias_csv(const BiasReport& rep) {
  std::ostringstream out;
  out << "category,human_mean,llm_mean,count\n";
  for (const auto& c : rep.categories) {
    out << to_string(c.preference) << "," << detail::fmt_mean(c.human_mean, true) << ","
        << detail::fmt_mean(c.llm_mean, true) << "," << c.count << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Ablations

enum class Variant { full, no_probs, no_cot };

inline constexpr std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_probs: return "no_probs";
    case Variant::no_cot: return "no_cot";
  }
  return "full";
}

/// Row label for an ablation variant.
inline std::string variant_row_label(Variant v, const std::string& base) {
  switch (v) {
    case Variant::full: return base;
    case Variant::no_probs: return "- Probs";
    case Variant::no_cot: return "- CoT";
  }
  return base;
}

inline ScoringConfig variant_config(Variant v, ScoringConfig base) {
  switch (v) {
    case Variant::full: break;
    case Variant::no_probs:
      base.regime = Regime::single_greedy;
      base.n_samples = 1;
      base.temperature = 0.0;
      break;
    case Variant::no_cot: base.include_cot = false; break;
  }
  return base;
}

struct PromptDiff {
  std::string record_id;
  std::string criterion;
  std::string full_fingerprint;
  std::string variant_fingerprint;
  std::string removed;  // text present only in the full prompt
  std::string added;    // text present only in the variant prompt
  /// The change is exactly one "Evaluation Steps:" block removed.
  bool confined_to_steps = false;
};

/// Checks whether `variant` equals `full` with one contiguous block removed
/// that starts at the "Evaluation Steps:" header line.
inline PromptDiff diff_prompts(const std::string& full, const std::string& variant) {
  PromptDiff d;
  std::size_t header = full.rfind(std::string("\n") + std::string(kStepsHeader));
  header = header == std::string::npos ? (full.starts_with(kStepsHeader) ? 0 : std::string::npos) : header + 1;
  if (header != std::string::npos && variant.size() < full.size() &&
      variant.compare(0, header, full, 0, header) == 0 &&
      full.compare(full.size() - (variant.size() - header), std::string::npos, variant, header) == 0) {
    d.removed = full.substr(header, full.size() - variant.size());
    d.confined_to_steps = d.removed.find(kFormHeader) == std::string::npos;
    return d;
  }
  std::size_t prefix = 0;
  while (prefix < full.size() && prefix < variant.size() && full[prefix] == variant[prefix]) ++prefix;
  std::size_t suffix = 0;
  while (suffix < full.size() - prefix && suffix < variant.size() - prefix &&
         full[full.size() - 1 - suffix] == variant[variant.size() - 1 - suffix]) {
    ++suffix;
  }
  d.removed = full.substr(prefix, full.size() - prefix - suffix);
  d.added = variant.substr(prefix, variant.size() - prefix - suffix);
  return d;
}

struct AblationOutcome {
  TableSpec table;
  std::vector<Variant> variants;
  std::vector<CorrelationReport> rows;
  std::map<Variant, DatasetScores> scores;
  /// full vs no_cot prompt differences, one per scored pair.
  std::vector<PromptDiff> cot_diffs;
};

/// Runs score_dataset once per variant against one backend (its cache is
/// shared) and correlates each run with the human ratings.
inline AblationOutcome ablation_compare(const std::vector<EvalRecord>& records,
                                        const std::vector<CriterionSpec>& criteria,
                                        const std::map<std::string, PromptTemplate>& templates,
                                        const ScoringConfig& base, LlmBackend& backend,
                                        const std::set<Variant>& variants, const TableSpec& table,
                                        const AggregationSpec& agg, const std::string& base_label = "G-Eval") {
  if (variants.empty()) throw Error(ErrorKind::precondition, "ablation needs at least one variant");
  AblationOutcome out;
  out.table = table;
  for (auto v : {Variant::full, Variant::no_probs, Variant::no_cot}) {
    if (!variants.count(v)) continue;
    out.variants.push_back(v);
    auto scores = score_dataset(records, criteria, templates, variant_config(v, base), backend);
    std::map<std::string, MetaevalInput> inputs{{"", {scores.results, records}}};
    out.rows.push_back(evaluate_table(variant_row_label(v, base_label), table, inputs, agg));
    out.scores.emplace(v, std::move(scores));
  }
  if (out.scores.count(Variant::full) && out.scores.count(Variant::no_cot)) {
    std::map<std::pair<std::string, std::string>, const PromptLogEntry*> full;
    for (const auto& p : out.scores.at(Variant::full).prompts) full[{p.record_id, p.criterion}] = &p;
    for (const auto& p : out.scores.at(Variant::no_cot).prompts) {
      auto it = full.find({p.record_id, p.criterion});
      if (it == full.end()) continue;
      PromptDiff d = diff_prompts(it->second->text, p.text);
      d.record_id = p.record_id;
      d.criterion = p.criterion;
      d.full_fingerprint = it->second->fingerprint;
      d.variant_fingerprint = p.fingerprint;
      out.cot_diffs.push_back(std::move(d));
    }
  }
  return out;
}

}  // namespace geval

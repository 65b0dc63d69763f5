#pragma once

// Judge prompt assembly and automatic evaluation-step (CoT) generation.

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "geval/core.hpp"
#include "geval/error.hpp"
#include "geval/hash.hpp"
#include "geval/llm.hpp"
#include "geval/text.hpp"

namespace geval {

inline constexpr std::array<std::string_view, 7> kPlaceholders = {
    "task_intro", "criteria", "steps", "source", "extra_context", "output", "form"};

inline constexpr std::string_view kStepsHeader = "Evaluation Steps:";
inline constexpr std::string_view kFormHeader = "Evaluation Form (scores ONLY)";
inline constexpr std::string_view kAnswerSlot = "Answer:";

enum class TemplateStyle { cot_form_filling, binary_qa };

inline constexpr std::string_view to_string(TemplateStyle s) {
  return s == TemplateStyle::cot_form_filling ? "cot_form_filling" : "binary_qa";
}

inline TemplateStyle template_style_from_string(std::string_view s) {
  if (s == "cot_form_filling") return TemplateStyle::cot_form_filling;
  if (s == "binary_qa") return TemplateStyle::binary_qa;
  throw Error(ErrorKind::config, "unknown template style '" + std::string(s) + "'");
}

namespace detail {

struct Slot {
  std::size_t begin;  // offset of "{{"
  std::size_t end;    // one past "}}"
  std::string name;
};

inline std::vector<Slot> find_slots(std::string_view body) {
  std::vector<Slot> out;
  std::size_t pos = 0;
  while ((pos = body.find("{{", pos)) != std::string_view::npos) {
    const auto close = body.find("}}", pos + 2);
    if (close == std::string_view::npos) break;
    out.push_back({pos, close + 2, std::string(body.substr(pos + 2, close - pos - 2))});
    pos = close + 2;
  }
  return out;
}

}  // namespace detail

struct PromptTemplate {
  std::string template_id;
  std::string body;
  TemplateStyle style = TemplateStyle::cot_form_filling;

  std::set<std::string> placeholders() const {
    std::set<std::string> out;
    for (const auto& slot : detail::find_slots(body)) out.insert(slot.name);
    return out;
  }

  bool uses(std::string_view name) const { return placeholders().count(std::string(name)) > 0; }

  void validate() const {
    if (template_id.empty()) throw Error(ErrorKind::config, "template with empty template_id");
    for (const auto& name : placeholders()) {
      if (std::find(kPlaceholders.begin(), kPlaceholders.end(), name) == kPlaceholders.end()) {
        throw Error(ErrorKind::config,
                    "template '" + template_id + "' references unknown placeholder {{" + name + "}}");
      }
    }
    const auto tail = detail::rstrip(body);
    if (style == TemplateStyle::cot_form_filling) {
      if (body.find(kFormHeader) == std::string::npos || !tail.ends_with("{{form}}")) {
        throw Error(ErrorKind::config, "cot_form_filling template '" + template_id +
                                           "' must end with the form tail and {{form}} slot");
      }
    } else if (!tail.ends_with(kAnswerSlot)) {
      throw Error(ErrorKind::config,
                  "binary_qa template '" + template_id + "' must end with \"Answer:\"");
    }
  }

  bool operator==(const PromptTemplate&) const = default;
};

/// Loads `<path>` as the template body and `<path stem>.json` as its sidecar
/// ({"template_id", "style", "required_placeholders"}).
inline PromptTemplate load_template_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::config, "cannot open template " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();

  auto sidecar_path = path;
  sidecar_path.replace_extension(".json");
  std::ifstream meta_in(sidecar_path);
  if (!meta_in) throw Error(ErrorKind::config, "missing template sidecar " + sidecar_path.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, "malformed template sidecar " + sidecar_path.string() + ": " + e.what());
  }

  PromptTemplate t;
  t.template_id = meta.value("template_id", path.stem().string());
  t.body = ss.str();
  t.style = template_style_from_string(meta.value("style", "cot_form_filling"));
  t.validate();
  const auto used = t.placeholders();
  for (const auto& name : meta.value("required_placeholders", std::vector<std::string>{})) {
    if (!used.count(name)) {
      throw Error(ErrorKind::config, "template '" + t.template_id + "' declares {{" + name +
                                         "}} as required but never uses it");
    }
  }
  return t;
}

struct PromptParts {
  std::string template_id;
  std::string template_fingerprint;
  std::string criterion;
  std::string record_id;
  /// Fingerprint of the same assembly with the {{output}} slot left unfilled.
  std::string skeleton_fingerprint;

  bool operator==(const PromptParts&) const = default;
};

struct AssembledPrompt {
  std::string text;
  std::string fingerprint;
  PromptParts parts;
  bool includes_cot = false;
};

/// "1. first\n\n2. second"
inline std::string render_steps(const std::vector<std::string>& steps) {
  std::string out;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (i) out += "\n\n";
    out += std::to_string(i + 1) + ". " + steps[i];
  }
  return out;
}

/// Removes the block running from the "Evaluation Steps:" header line through
/// the {{steps}} slot and the blank lines after it.
inline std::string strip_steps_block(const std::string& body) {
  const auto slot = body.find("{{steps}}");
  if (slot == std::string::npos) return body;
  std::size_t begin = body.rfind(kStepsHeader, slot);
  if (begin == std::string::npos) begin = slot;
  begin = body.rfind('\n', begin);
  begin = (begin == std::string::npos) ? 0 : begin + 1;
  const std::size_t slot_end = slot + std::string_view("{{steps}}").size();
  std::size_t end = slot_end;
  while (end < body.size() && std::isspace(static_cast<unsigned char>(body[end]))) ++end;
  // keep the indentation of the next line
  while (end > slot_end && body[end - 1] != '\n') --end;
  return body.substr(0, begin) + body.substr(end);
}

namespace detail {

inline std::string fill(const std::string& body, const std::map<std::string, std::string>& values,
                        const PromptTemplate& tmpl) {
  std::string out;
  std::size_t cursor = 0;
  for (const auto& slot : find_slots(body)) {
    out.append(body, cursor, slot.begin - cursor);
    auto it = values.find(slot.name);
    if (it == values.end()) {
      throw Error(ErrorKind::assembly, "template '" + tmpl.template_id + "': no value for {{" +
                                           slot.name + "}}");
    }
    out += it->second;
    cursor = slot.end;
  }
  out.append(body, cursor, std::string::npos);
  return out;
}

}  // namespace detail

/// Deterministic prompt assembly. With `include_cot == false` the whole
/// evaluation-steps block is dropped from the template.
inline AssembledPrompt assemble(const PromptTemplate& tmpl, const CriterionSpec& criterion,
                                const EvalRecord& record, bool include_cot) {
  const bool has_steps_slot = tmpl.uses("steps");
  const bool cot = include_cot && has_steps_slot;
  const std::string body = (has_steps_slot && !include_cot) ? strip_steps_block(tmpl.body) : tmpl.body;

  std::map<std::string, std::string> values;
  auto missing = [&](std::string_view name, std::string_view why) {
    throw Error(ErrorKind::assembly, "record '" + record.record_id + "', criterion '" +
                                         criterion.name + "': cannot fill {{" + std::string(name) +
                                         "}} (" + std::string(why) + ")");
  };
  for (const auto& slot : detail::find_slots(body)) {
    const std::string& name = slot.name;
    if (values.count(name)) continue;
    if (name == "task_intro") {
      if (criterion.task_intro.empty()) missing(name, "criterion has no task_intro");
      values[name] = criterion.task_intro;
    } else if (name == "criteria") {
      if (criterion.display_definition.empty()) missing(name, "criterion has no definition");
      values[name] = criterion.display_definition;
    } else if (name == "steps") {
      if (!criterion.evaluation_steps) missing(name, "criterion has no evaluation steps");
      values[name] = render_steps(*criterion.evaluation_steps);
    } else if (name == "source") {
      if (record.source.empty()) missing(name, "record has no source");
      values[name] = record.source;
    } else if (name == "extra_context") {
      if (!record.extra_context || record.extra_context->empty()) {
        missing(name, "record has no extra_context");
      }
      values[name] = *record.extra_context;
    } else if (name == "output") {
      if (record.output.empty()) missing(name, "record has no output");
      values[name] = record.output;
    } else if (name == "form") {
      values[name] = criterion.display_name() + ":";
    }
  }

  AssembledPrompt out;
  out.text = detail::fill(body, values, tmpl);
  out.fingerprint = fingerprint(out.text);
  out.includes_cot = cot;
  out.parts.template_id = tmpl.template_id;
  out.parts.template_fingerprint = fingerprint(tmpl.body);
  out.parts.criterion = criterion.name;
  out.parts.record_id = record.record_id;
  values["output"] = "{{output}}";
  out.parts.skeleton_fingerprint = fingerprint(detail::fill(body, values, tmpl));
  return out;
}

// ---------------------------------------------------------------------------
// Auto CoT

/// Prompt used to elicit evaluation steps: intro, criteria, then the cue.
inline std::string cot_prompt(const CriterionSpec& criterion) {
  return criterion.task_intro + "\n\nEvaluation Criteria:\n\n" + criterion.display_definition +
         "\n\n" + std::string(kStepsHeader) + "\n";
}

/// Splits on leading enumerators ("1.", "2)"); text without any becomes one step.
inline std::vector<std::string> parse_cot_steps(const std::string& text) {
  static const std::regex enumerator(R"(^\s*\d+[.)]\s*(.*)$)");
  std::vector<std::string> steps;
  bool any = false;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::smatch m;
    if (std::regex_match(line, m, enumerator)) {
      any = true;
      steps.push_back(detail::trim(m[1].str()));
    } else if (any) {
      const auto t = detail::trim(line);
      if (!t.empty()) steps.back() += (steps.back().empty() ? "" : " ") + t;
    }
  }
  if (!any) {
    auto whole = detail::trim(text);
    if (!whole.empty()) steps.push_back(std::move(whole));
  }
  steps.erase(std::remove(steps.begin(), steps.end(), std::string()), steps.end());
  return steps;
}

struct CotEntry {
  std::string criterion;
  std::string model_id;
  std::string raw;
  std::vector<std::string> steps;
};

struct CotOutcome {
  std::vector<std::string> steps;
  std::string raw;
  bool cached = false;
};

/// Cache key text: task intro, criterion name, definition, scale and model.
inline std::string cot_cache_key(const CriterionSpec& criterion, const std::string& model_id) {
  const std::string sep = "\x1f";
  return sha256_hex(criterion.task_intro + sep + criterion.name + sep + criterion.display_definition +
                    sep + criterion.scale.describe() + sep + model_id);
}

/// Generates evaluation steps once per (task, criterion, model). Concurrent
/// misses on one key share a single backend call. Optionally persisted as a
/// JSON object keyed by the cache-key hash.
class CotGenerator {
 public:
  explicit CotGenerator(std::optional<std::filesystem::path> cache_file = std::nullopt)
      : cache_file_(std::move(cache_file)) {
    if (cache_file_ && std::filesystem::exists(*cache_file_)) load();
  }

  CotOutcome generate(const CriterionSpec& criterion, LlmBackend& backend) {
    if (criterion.evaluation_steps) {
      throw Error(ErrorKind::precondition,
                  "criterion '" + criterion.name + "' already has evaluation steps");
    }
    const std::string key = cot_cache_key(criterion, backend.model_id());

    std::promise<CotEntry> promise;
    std::shared_future<CotEntry> future;
    bool owner = false;
    {
      std::lock_guard lock(mutex_);
      if (auto it = done_.find(key); it != done_.end()) {
        return {it->second.steps, it->second.raw, true};
      }
      if (auto it = pending_.find(key); it != pending_.end()) {
        future = it->second;
      } else {
        future = promise.get_future().share();
        pending_[key] = future;
        owner = true;
      }
    }
    if (!owner) {
      const CotEntry& e = future.get();
      return {e.steps, e.raw, true};
    }

    try {
      GenerationRequest req;
      req.prompt = cot_prompt(criterion);
      req.temperature = 0.0;
      req.n_samples = 1;
      req.max_tokens = 512;
      const auto resp = backend.generate(req);
      CotEntry entry{criterion.name, backend.model_id(), resp.completions.at(0), {}};
      entry.steps = parse_cot_steps(entry.raw);
      if (entry.steps.empty()) {
        throw CotError("empty evaluation-step continuation for criterion '" + criterion.name + "'",
                       entry.raw);
      }
      {
        std::lock_guard lock(mutex_);
        done_[key] = entry;
        pending_.erase(key);
        save_locked();
      }
      promise.set_value(entry);
      return {entry.steps, entry.raw, resp.cached};
    } catch (...) {
      {
        std::lock_guard lock(mutex_);
        pending_.erase(key);
      }
      promise.set_exception(std::current_exception());
      throw;
    }
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return done_.size();
  }

 private:
  void load() {
    std::ifstream in(*cache_file_);
    try {
      const auto j = nlohmann::json::parse(in);
      for (const auto& [key, v] : j.items()) {
        done_[key] = CotEntry{v.value("criterion", ""), v.value("model_id", ""),
                              v.value("raw", ""), v.at("steps").get<std::vector<std::string>>()};
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::config, "malformed CoT cache " + cache_file_->string() + ": " + e.what());
    }
  }

  void save_locked() const {
    if (!cache_file_) return;
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [key, e] : done_) {
      j[key] = {{"criterion", e.criterion}, {"model_id", e.model_id}, {"raw", e.raw}, {"steps", e.steps}};
    }
    if (cache_file_->has_parent_path()) std::filesystem::create_directories(cache_file_->parent_path());
    const auto tmp = cache_file_->string() + ".tmp";
    {
      std::ofstream out(tmp);
      if (!out) throw Error(ErrorKind::io, "cannot write CoT cache " + tmp);
      out << j.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, *cache_file_);
  }

  std::optional<std::filesystem::path> cache_file_;
  mutable std::mutex mutex_;
  std::map<std::string, CotEntry> done_;
  std::map<std::string, std::shared_future<CotEntry>> pending_;
};

/// Returns `criterion` with generated steps filled in (no-op if it has some).
inline CriterionSpec with_generated_steps(CriterionSpec criterion, CotGenerator& cot, LlmBackend& backend) {
  if (!criterion.evaluation_steps) criterion.evaluation_steps = cot.generate(criterion, backend).steps;
  return criterion;
}

}  // namespace geval

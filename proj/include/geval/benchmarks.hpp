#pragma once

// Adapters from benchmark file layouts to normalized EvalRecords.
//
//   summeval          JSONL, one system summary per line:
//                     {"id", "model_id", "text", "decoded", "expert_annotations": [{aspect: n}, ...]}
//   topical_chat_usr  JSON array of {"context", "fact", "responses": [{"model", "response",
//                     "<Aspect>": [annotator ratings], ...}]}
//   qags              JSONL of {"article", "summary_sentences": [{"sentence",
//                     "responses": [{"worker_id", "response": "yes"|"no"}]}]}
//   normalized_jsonl  the normalized schema written by emit_normalized

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geval/core.hpp"
#include "geval/error.hpp"
#include "geval/text.hpp"

namespace geval {

enum class AdapterKind { summeval, topical_chat_usr, qags, normalized_jsonl };
enum class AnnotatorAggregation { mean, median };

inline constexpr std::string_view to_string(AdapterKind k) {
  switch (k) {
    case AdapterKind::summeval: return "summeval";
    case AdapterKind::topical_chat_usr: return "topical_chat_usr";
    case AdapterKind::qags: return "qags";
    case AdapterKind::normalized_jsonl: return "normalized_jsonl";
  }
  return "normalized_jsonl";
}

inline AdapterKind adapter_from_string(std::string_view s) {
  if (s == "summeval") return AdapterKind::summeval;
  if (s == "topical_chat_usr" || s == "topical_chat") return AdapterKind::topical_chat_usr;
  if (s == "qags") return AdapterKind::qags;
  if (s == "normalized_jsonl" || s == "normalized") return AdapterKind::normalized_jsonl;
  throw Error(ErrorKind::config, "unknown adapter kind '" + std::string(s) + "'");
}

struct DatasetDescriptor {
  std::string name;
  AdapterKind kind = AdapterKind::normalized_jsonl;
  std::filesystem::path path;
  /// benchmark aspect name -> canonical criterion name
  std::map<std::string, std::string> aspect_map;
  /// benchmark aspects deliberately dropped (e.g. USR "Overall")
  std::set<std::string> ignored_aspects;
  AnnotatorAggregation aggregation = AnnotatorAggregation::mean;

  /// Descriptor with the adapter's default aspect map.
  static DatasetDescriptor with_defaults(AdapterKind kind, std::filesystem::path path, std::string name = {}) {
    DatasetDescriptor d;
    d.kind = kind;
    d.path = std::move(path);
    d.name = name.empty() ? std::string(to_string(kind)) : std::move(name);
    switch (kind) {
      case AdapterKind::summeval:
        d.aspect_map = {{"coherence", "coherence"},
                        {"consistency", "consistency"},
                        {"fluency", "fluency"},
                        {"relevance", "relevance"}};
        break;
      case AdapterKind::topical_chat_usr:
        d.aspect_map = {{"Natural", "naturalness"},
                        {"Maintains Context", "coherence"},
                        {"Engaging", "engagingness"},
                        {"Uses Knowledge", "groundedness"}};
        d.ignored_aspects = {"Understandable", "Overall"};
        break;
      case AdapterKind::qags:
        d.aspect_map = {{"consistency", "consistency"}};
        break;
      case AdapterKind::normalized_jsonl:
        break;
    }
    return d;
  }

  void validate() const {
    std::set<std::string> seen;
    for (const auto& [from, to] : aspect_map) {
      if (to.empty()) throw Error(ErrorKind::config, "aspect map entry '" + from + "' has an empty target");
      if (!seen.insert(to).second) {
        throw Error(ErrorKind::config, "aspect map target '" + to + "' is used more than once");
      }
    }
  }

  std::vector<std::string> canonical_aspects() const {
    std::vector<std::string> out;
    for (const auto& [from, to] : aspect_map) out.push_back(to);
    return out;
  }
};

namespace detail {

inline double aggregate(std::vector<double> values, AnnotatorAggregation how) {
  if (values.empty()) throw Error(ErrorKind::ingestion, "no annotator ratings to aggregate");
  if (how == AnnotatorAggregation::mean) {
    double sum = 0.0;
    for (double v : values) sum += v;
    return sum / static_cast<double>(values.size());
  }
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

inline std::string aspect_map_listing(const DatasetDescriptor& d) {
  std::string out;
  for (const auto& [from, to] : d.aspect_map) out += (out.empty() ? "" : ", ") + from + " -> " + to;
  return out.empty() ? "(empty)" : out;
}

/// Maps a benchmark aspect name; nullopt for ignored aspects.
inline std::optional<std::string> map_aspect(const DatasetDescriptor& d, const std::string& aspect,
                                             const std::string& where) {
  if (d.ignored_aspects.count(aspect)) return std::nullopt;
  if (d.aspect_map.empty() && d.kind == AdapterKind::normalized_jsonl) return aspect;
  auto it = d.aspect_map.find(aspect);
  if (it == d.aspect_map.end()) {
    throw Error(ErrorKind::ingestion, where + ": unknown aspect '" + aspect +
                                          "' (aspect map: " + aspect_map_listing(d) + ")");
  }
  return it->second;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open dataset file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct JsonlLine {
  std::size_t line_no;
  std::size_t byte_offset;
  nlohmann::json value;
};

inline std::vector<JsonlLine> read_jsonl(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  std::vector<JsonlLine> out;
  std::size_t offset = 0;
  std::size_t line_no = 0;
  while (offset < data.size()) {
    std::size_t nl = data.find('\n', offset);
    if (nl == std::string::npos) nl = data.size();
    ++line_no;
    const std::string line = data.substr(offset, nl - offset);
    if (line.find_first_not_of(" \t\r") != std::string::npos) {
      try {
        out.push_back({line_no, offset, nlohmann::json::parse(line)});
      } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::ingestion, path.string() + ": line " + std::to_string(line_no) +
                                              " (byte offset " + std::to_string(offset) +
                                              "): malformed JSON: " + e.what());
      }
    }
    offset = nl + 1;
  }
  return out;
}

inline std::string where(const std::filesystem::path& path, const JsonlLine& line) {
  return path.string() + ": line " + std::to_string(line.line_no) + " (byte offset " +
         std::to_string(line.byte_offset) + ")";
}

template <typename T>
T require(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) {
    throw Error(ErrorKind::ingestion, where + ": missing required field '" + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ingestion, where + ": field '" + key + "' has the wrong type: " + e.what());
  }
}

inline std::vector<EvalRecord> ingest_summeval(const DatasetDescriptor& d) {
  std::vector<EvalRecord> out;
  for (const auto& line : read_jsonl(d.path)) {
    const std::string at = where(d.path, line);
    const auto& j = line.value;
    EvalRecord rec;
    rec.doc_id = require<std::string>(j, "id", at);
    rec.system_id = require<std::string>(j, "model_id", at);
    rec.record_id = rec.doc_id + "#" + rec.system_id;
    rec.source = require<std::string>(j, "text", at);
    rec.output = require<std::string>(j, "decoded", at);
    rec.provenance = d.name;
    const auto annotations = require<std::vector<nlohmann::json>>(j, "expert_annotations", at);
    std::map<std::string, std::vector<double>> by_aspect;
    for (const auto& ann : annotations) {
      if (!ann.is_object()) throw Error(ErrorKind::ingestion, at + ": annotation is not an object");
      for (const auto& [aspect, value] : ann.items()) {
        if (!value.is_number()) {
          throw Error(ErrorKind::ingestion, at + ": rating for '" + aspect + "' is not a number");
        }
        if (auto mapped = map_aspect(d, aspect, at)) by_aspect[*mapped].push_back(value.get<double>());
      }
    }
    for (auto& [aspect, values] : by_aspect) rec.human_ratings[aspect] = aggregate(values, d.aggregation);
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<EvalRecord> ingest_topical_chat(const DatasetDescriptor& d) {
  const std::string data = read_file(d.path);
  if (data.find_first_not_of(" \t\r\n") == std::string::npos) return {};
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(data);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::ingestion, d.path.string() + ": malformed JSON at byte offset " +
                                          std::to_string(e.byte) + ": " + e.what());
  }
  if (!root.is_array()) throw Error(ErrorKind::ingestion, d.path.string() + ": expected a top-level array");

  std::vector<EvalRecord> out;
  for (std::size_t i = 0; i < root.size(); ++i) {
    const std::string at = d.path.string() + ": element [" + std::to_string(i) + "]";
    const auto& turn = root[i];
    const auto context = require<std::string>(turn, "context", at);
    const auto fact = require<std::string>(turn, "fact", at);
    const auto responses = require<std::vector<nlohmann::json>>(turn, "responses", at);
    for (std::size_t r = 0; r < responses.size(); ++r) {
      const std::string rat = at + ".responses[" + std::to_string(r) + "]";
      const auto& resp = responses[r];
      EvalRecord rec;
      rec.doc_id = d.name + "-" + std::to_string(i);
      rec.system_id = require<std::string>(resp, "model", rat);
      rec.record_id = rec.doc_id + "#" + rec.system_id;
      rec.source = context;
      rec.extra_context = fact;
      rec.output = require<std::string>(resp, "response", rat);
      rec.provenance = d.name;
      for (const auto& [key, value] : resp.items()) {
        if (key == "model" || key == "response") continue;
        if (!value.is_array()) continue;  // unknown non-rating field
        auto mapped = map_aspect(d, key, rat);
        if (!mapped) continue;
        std::vector<double> ratings;
        for (const auto& v : value) {
          if (!v.is_number()) throw Error(ErrorKind::ingestion, rat + ": non-numeric rating for '" + key + "'");
          ratings.push_back(v.get<double>());
        }
        rec.human_ratings[*mapped] = aggregate(ratings, d.aggregation);
      }
      out.push_back(std::move(rec));
    }
  }
  return out;
}

inline std::vector<EvalRecord> ingest_qags(const DatasetDescriptor& d) {
  std::vector<EvalRecord> out;
  const auto aspect = map_aspect(d, "consistency", d.path.string());
  for (const auto& line : read_jsonl(d.path)) {
    const std::string at = where(d.path, line);
    const auto& j = line.value;
    EvalRecord rec;
    rec.record_id = d.name + "-" + std::to_string(out.size());
    rec.doc_id = rec.record_id;
    rec.system_id = d.name;
    rec.source = require<std::string>(j, "article", at);
    rec.provenance = d.name;
    const auto sentences = require<std::vector<nlohmann::json>>(j, "summary_sentences", at);
    if (sentences.empty()) throw Error(ErrorKind::ingestion, at + ": summary has no sentences");
    int consistent = 0;
    for (const auto& s : sentences) {
      const auto text = require<std::string>(s, "sentence", at);
      rec.output += (rec.output.empty() ? "" : " ") + text;
      std::vector<double> votes;
      for (const auto& r : require<std::vector<nlohmann::json>>(s, "responses", at)) {
        const std::string answer = lower(trim(require<std::string>(r, "response", at)));
        if (answer != "yes" && answer != "no") {
          throw Error(ErrorKind::ingestion, at + ": sentence label must be yes/no, got '" + answer + "'");
        }
        votes.push_back(answer == "yes" ? 1.0 : 0.0);
      }
      if (aggregate(votes, d.aggregation) > 0.5) ++consistent;
    }
    if (aspect) rec.human_ratings[*aspect] = static_cast<double>(consistent) / static_cast<double>(sentences.size());
    out.push_back(std::move(rec));
  }
  return out;
}

inline EvalRecord record_from_json(const nlohmann::json& j, const std::string& at) {
  EvalRecord rec;
  rec.record_id = require<std::string>(j, "record_id", at);
  rec.doc_id = require<std::string>(j, "doc_id", at);
  rec.system_id = require<std::string>(j, "system_id", at);
  rec.source = require<std::string>(j, "source", at);
  if (!j.contains("extra_context")) {
    throw Error(ErrorKind::ingestion, at + ": missing required field 'extra_context'");
  }
  if (!j["extra_context"].is_null()) rec.extra_context = require<std::string>(j, "extra_context", at);
  rec.output = require<std::string>(j, "output", at);
  rec.human_ratings = require<std::map<std::string, double>>(j, "human_ratings", at);
  rec.provenance = require<std::string>(j, "provenance", at);
  return rec;
}

inline std::vector<EvalRecord> ingest_normalized(const DatasetDescriptor& d) {
  std::vector<EvalRecord> out;
  for (const auto& line : read_jsonl(d.path)) {
    const std::string at = where(d.path, line);
    EvalRecord rec = record_from_json(line.value, at);
    std::map<std::string, double> mapped;
    for (const auto& [aspect, value] : rec.human_ratings) {
      if (auto m = map_aspect(d, aspect, at)) mapped[*m] = value;
    }
    rec.human_ratings = std::move(mapped);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace detail

/// Reads a benchmark file into validated, order-preserving EvalRecords.
inline std::vector<EvalRecord> ingest(const DatasetDescriptor& desc) {
  desc.validate();
  if (!std::filesystem::exists(desc.path)) {
    throw Error(ErrorKind::io, "dataset file not found: " + desc.path.string());
  }
  std::vector<EvalRecord> records;
  switch (desc.kind) {
    case AdapterKind::summeval: records = detail::ingest_summeval(desc); break;
    case AdapterKind::topical_chat_usr: records = detail::ingest_topical_chat(desc); break;
    case AdapterKind::qags: records = detail::ingest_qags(desc); break;
    case AdapterKind::normalized_jsonl: records = detail::ingest_normalized(desc); break;
  }

  std::vector<std::string> known = desc.canonical_aspects();
  if (known.empty()) {
    for (const auto& r : records) {
      for (const auto& [aspect, v] : r.human_ratings) {
        if (std::find(known.begin(), known.end(), aspect) == known.end()) known.push_back(aspect);
      }
    }
  }
  std::set<std::string> ids;
  const bool grouping = desc.kind == AdapterKind::summeval;
  for (const auto& r : records) {
    try {
      validate_record(r, known, grouping);
    } catch (const Error& e) {
      throw Error(ErrorKind::ingestion, desc.path.string() + ": " + e.what());
    }
    if (!ids.insert(r.record_id).second) {
      throw Error(ErrorKind::ingestion, desc.path.string() + ": duplicate record_id '" + r.record_id + "'");
    }
  }
  return records;
}

inline nlohmann::ordered_json record_to_json(const EvalRecord& r) {
  nlohmann::ordered_json ratings = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.human_ratings) ratings[k] = v;
  nlohmann::ordered_json j;
  j["record_id"] = r.record_id;
  j["doc_id"] = r.doc_id;
  j["system_id"] = r.system_id;
  j["source"] = r.source;
  j["extra_context"] = r.extra_context ? nlohmann::ordered_json(*r.extra_context) : nlohmann::ordered_json();
  j["output"] = r.output;
  j["human_ratings"] = std::move(ratings);
  j["provenance"] = r.provenance;
  return j;
}

/// Writes the normalized JSONL schema; returns the number of lines written.
inline std::size_t emit_normalized(const std::vector<EvalRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  for (const auto& r : records) out << record_to_json(r).dump() << "\n";
  out.flush();
  if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
  return records.size();
}

}  // namespace geval

#pragma once

// Domain types shared by every other part of the library. Nothing in here
// performs I/O or talks to a model.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "geval/error.hpp"

namespace geval {

inline constexpr double kProbTolerance = 1e-9;

struct ScoreScale {
  enum class Kind { integer_range, labeled_binary };

  Kind kind = Kind::integer_range;
  int min = 1;
  int max = 5;
  /// (positive, negative) for labeled_binary; positive maps to 1.
  std::optional<std::pair<std::string, std::string>> labels;

  static ScoreScale integer_range(int lo, int hi) {
    ScoreScale s;
    s.kind = Kind::integer_range;
    s.min = lo;
    s.max = hi;
    s.validate();
    return s;
  }

  static ScoreScale labeled_binary(std::string positive, std::string negative) {
    ScoreScale s;
    s.kind = Kind::labeled_binary;
    s.min = 0;
    s.max = 1;
    s.labels = std::make_pair(std::move(positive), std::move(negative));
    s.validate();
    return s;
  }

  bool is_binary() const { return kind == Kind::labeled_binary; }

  std::vector<int> admissible() const {
    std::vector<int> out;
    for (int v = min; v <= max; ++v) out.push_back(v);
    return out;
  }

  bool contains(int v) const { return v >= min && v <= max; }

  void validate() const {
    if (kind == Kind::integer_range) {
      if (min >= max) {
        throw Error(ErrorKind::validation,
                    "integer_range scale requires min < max, got " + std::to_string(min) +
                        ".." + std::to_string(max));
      }
      return;
    }
    if (min != 0 || max != 1) {
      throw Error(ErrorKind::validation, "labeled_binary scale must span exactly {0, 1}");
    }
    if (!labels || labels->first.empty() || labels->second.empty()) {
      throw Error(ErrorKind::validation, "labeled_binary scale requires two non-empty labels");
    }
  }

  /// Canonical text form, used in cache keys.
  std::string describe() const {
    if (is_binary()) return "binary:" + labels->first + "/" + labels->second;
    return "range:" + std::to_string(min) + "-" + std::to_string(max);
  }

  bool operator==(const ScoreScale&) const = default;
};

struct CriterionSpec {
  std::string name;
  std::string display_definition;
  ScoreScale scale;
  std::optional<std::vector<std::string>> evaluation_steps;
  std::string task_intro;

  /// "coherence" -> "Coherence"; used for the form slot.
  std::string display_name() const {
    std::string out = name;
    if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
    return out;
  }

  void validate() const {
    if (name.empty()) throw Error(ErrorKind::validation, "criterion name must be non-empty");
    scale.validate();
    if (evaluation_steps) {
      if (evaluation_steps->empty()) {
        throw Error(ErrorKind::validation,
                    "criterion '" + name + "' has an empty evaluation_steps list");
      }
      for (const auto& step : *evaluation_steps) {
        if (step.empty()) {
          throw Error(ErrorKind::validation,
                      "criterion '" + name + "' has an empty evaluation step");
        }
      }
    }
  }

  bool operator==(const CriterionSpec&) const = default;
};

/// Checks per-criterion invariants plus name uniqueness within one task.
inline void validate_criteria(const std::vector<CriterionSpec>& criteria) {
  std::vector<std::string> names;
  for (const auto& c : criteria) {
    c.validate();
    if (std::find(names.begin(), names.end(), c.name) != names.end()) {
      throw Error(ErrorKind::validation, "duplicate criterion name '" + c.name + "'");
    }
    names.push_back(c.name);
  }
}

enum class Estimation { logprobs, sampling, degenerate };

inline constexpr std::string_view to_string(Estimation e) {
  switch (e) {
    case Estimation::logprobs: return "logprobs";
    case Estimation::sampling: return "sampling";
    case Estimation::degenerate: return "degenerate";
  }
  return "degenerate";
}

inline Estimation estimation_from_string(std::string_view s) {
  if (s == "logprobs") return Estimation::logprobs;
  if (s == "sampling") return Estimation::sampling;
  if (s == "degenerate") return Estimation::degenerate;
  throw Error(ErrorKind::validation, "unknown estimation kind '" + std::string(s) + "'");
}

struct ScoreDistribution {
  std::vector<int> support;
  std::vector<double> probs;
  Estimation estimation = Estimation::degenerate;
  int sample_count = 0;

  /// All mass on `score`.
  static ScoreDistribution degenerate(const ScoreScale& scale, int score) {
    if (!scale.contains(score)) {
      throw Error(ErrorKind::validation,
                  "score " + std::to_string(score) + " outside scale " + scale.describe());
    }
    ScoreDistribution d;
    d.support = scale.admissible();
    d.probs.assign(d.support.size(), 0.0);
    d.probs[static_cast<std::size_t>(score - scale.min)] = 1.0;
    d.estimation = Estimation::degenerate;
    return d;
  }

  /// Normalizes non-negative weights indexed by score into a distribution.
  static ScoreDistribution from_weights(const ScoreScale& scale,
                                        const std::map<int, double>& weights,
                                        Estimation estimation, int sample_count = 0) {
    double total = 0.0;
    for (const auto& [score, w] : weights) {
      if (!scale.contains(score)) {
        throw Error(ErrorKind::validation, "weight for inadmissible score " + std::to_string(score));
      }
      if (!(w >= 0.0)) throw Error(ErrorKind::validation, "negative or NaN weight");
      total += w;
    }
    if (!(total > 0.0)) throw Error(ErrorKind::distribution, "distribution has zero total mass");
    ScoreDistribution d;
    d.support = scale.admissible();
    d.probs.assign(d.support.size(), 0.0);
    for (const auto& [score, w] : weights) {
      d.probs[static_cast<std::size_t>(score - scale.min)] = w / total;
    }
    d.estimation = estimation;
    d.sample_count = sample_count;
    return d;
  }

  double prob_of(int score) const {
    for (std::size_t i = 0; i < support.size(); ++i) {
      if (support[i] == score) return probs[i];
    }
    return 0.0;
  }

  /// Shape and probability-mass checks; `scale` additionally pins the support.
  void validate(const ScoreScale* scale = nullptr) const {
    if (support.empty()) throw Error(ErrorKind::validation, "distribution has empty support");
    if (support.size() != probs.size()) {
      throw Error(ErrorKind::validation, "distribution support/probs length mismatch");
    }
    double sum = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0)) throw Error(ErrorKind::validation, "distribution has a negative probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > kProbTolerance) {
      throw Error(ErrorKind::validation,
                  "distribution probabilities sum to " + std::to_string(sum) + ", not 1");
    }
    if (scale && support != scale->admissible()) {
      throw Error(ErrorKind::validation,
                  "distribution support does not match scale " + scale->describe());
    }
  }

  bool operator==(const ScoreDistribution&) const = default;
};

/// Probability-weighted score: sum over the support of p(s) * s.
inline double weighted_score(const ScoreDistribution& dist) {
  dist.validate();
  double total = 0.0;
  for (std::size_t i = 0; i < dist.support.size(); ++i) {
    total += dist.probs[i] * static_cast<double>(dist.support[i]);
  }
  const auto [lo, hi] = std::minmax_element(dist.support.begin(), dist.support.end());
  return std::clamp(total, static_cast<double>(*lo), static_cast<double>(*hi));
}

struct JudgeResult {
  std::string record_id;
  std::string criterion;
  ScoreDistribution distribution;
  double final_score = 0.0;
  std::vector<std::string> raw_responses;
  int parse_failures = 0;
  std::string prompt_fingerprint;

  bool operator==(const JudgeResult&) const = default;
};

struct EvalRecord {
  std::string record_id;
  std::string doc_id;
  std::string system_id;
  std::string source;
  std::optional<std::string> extra_context;
  std::string output;
  std::map<std::string, double> human_ratings;
  std::string provenance;

  bool operator==(const EvalRecord&) const = default;
};

/// Returns `rec` unchanged when it is well formed. Rated aspects must be
/// among `known_aspects`; `require_grouping` enforces doc_id/system_id for
/// summary-level datasets.
inline const EvalRecord& validate_record(const EvalRecord& rec,
                                         const std::vector<std::string>& known_aspects,
                                         bool require_grouping = false) {
  const std::string who = "record '" + rec.record_id + "'";
  auto missing = [&](std::string_view field) {
    throw Error(ErrorKind::validation, who + ": missing required field '" + std::string(field) + "'");
  };
  if (rec.record_id.empty()) {
    throw Error(ErrorKind::validation, "record with empty record_id");
  }
  if (rec.source.empty()) missing("source");
  if (rec.output.empty()) missing("output");
  if (rec.provenance.empty()) missing("provenance");
  if (require_grouping) {
    if (rec.doc_id.empty()) missing("doc_id");
    if (rec.system_id.empty()) missing("system_id");
  }
  for (const auto& [aspect, value] : rec.human_ratings) {
    if (std::find(known_aspects.begin(), known_aspects.end(), aspect) == known_aspects.end()) {
      std::string names;
      for (const auto& n : known_aspects) names += (names.empty() ? "" : ", ") + n;
      throw Error(ErrorKind::validation,
                  who + ": unknown aspect '" + aspect + "' (known: " + names + ")");
    }
    if (!std::isfinite(value)) {
      throw Error(ErrorKind::validation, who + ": rating for '" + aspect + "' is not finite");
    }
  }
  return rec;
}

inline const EvalRecord& validate_record(const EvalRecord& rec,
                                         const std::vector<CriterionSpec>& criteria,
                                         bool require_grouping = false) {
  std::vector<std::string> names;
  for (const auto& c : criteria) names.push_back(c.name);
  return validate_record(rec, names, require_grouping);
}

enum class CoefficientKind { spearman, kendall_tau, pearson };
enum class AggregationMode { summary_level, turn_level, pooled };

inline constexpr std::string_view to_string(CoefficientKind k) {
  switch (k) {
    case CoefficientKind::spearman: return "spearman";
    case CoefficientKind::kendall_tau: return "kendall_tau";
    case CoefficientKind::pearson: return "pearson";
  }
  return "spearman";
}

inline constexpr std::string_view to_string(AggregationMode m) {
  switch (m) {
    case AggregationMode::summary_level: return "summary_level";
    case AggregationMode::turn_level: return "turn_level";
    case AggregationMode::pooled: return "pooled";
  }
  return "pooled";
}

inline CoefficientKind coefficient_from_string(std::string_view s) {
  if (s == "spearman" || s == "rho") return CoefficientKind::spearman;
  if (s == "kendall_tau" || s == "kendall" || s == "tau") return CoefficientKind::kendall_tau;
  if (s == "pearson" || s == "r") return CoefficientKind::pearson;
  throw Error(ErrorKind::config, "unknown coefficient '" + std::string(s) + "'");
}

inline AggregationMode aggregation_from_string(std::string_view s) {
  if (s == "summary_level" || s == "summary") return AggregationMode::summary_level;
  if (s == "turn_level" || s == "turn") return AggregationMode::turn_level;
  if (s == "pooled") return AggregationMode::pooled;
  throw Error(ErrorKind::config, "unknown aggregation mode '" + std::string(s) + "'");
}

/// One cell of a correlation table. `value` is empty when undefined.
struct CorrelationEntry {
  std::string aspect;
  CoefficientKind coefficient = CoefficientKind::spearman;
  std::optional<double> value;
  AggregationMode aggregation = AggregationMode::summary_level;
  int n_groups_used = 0;
  int n_groups_skipped = 0;
};

/// One table row: per-aspect entries plus the per-coefficient averages.
struct CorrelationReport {
  std::string label;
  std::vector<std::string> aspects;
  std::vector<CoefficientKind> coefficients;
  std::vector<CorrelationEntry> entries;
  std::map<CoefficientKind, std::optional<double>> averages;
  std::string tau_variant = "tau_b";

  const CorrelationEntry* find(std::string_view aspect, CoefficientKind k) const {
    for (const auto& e : entries) {
      if (e.aspect == aspect && e.coefficient == k) return &e;
    }
    return nullptr;
  }
};

}  // namespace geval

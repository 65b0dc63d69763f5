#pragma once

// Correlation between judge scores and human ratings, grouped aggregation of
// the coefficients, and table reports.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "geval/core.hpp"
#include "geval/error.hpp"

namespace geval {

enum class TauVariant { tau_a, tau_b };

inline constexpr std::string_view to_string(TauVariant v) { return v == TauVariant::tau_a ? "tau_a" : "tau_b"; }

inline TauVariant tau_variant_from_string(std::string_view s) {
  if (s == "a" || s == "tau_a") return TauVariant::tau_a;
  if (s == "b" || s == "tau_b") return TauVariant::tau_b;
  throw Error(ErrorKind::config, "unknown Kendall variant '" + std::string(s) + "'");
}

namespace detail {

inline void check_paired(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw Error(ErrorKind::precondition, "paired series have different lengths (" +
                                             std::to_string(x.size()) + " vs " + std::to_string(y.size()) + ")");
  }
  if (x.size() < 2) throw Error(ErrorKind::precondition, "correlation needs at least two pairs");
}

inline double clamp_unit(double v) { return std::clamp(v, -1.0, 1.0); }

/// 1-based ranks; tied values share the mean of the ranks they span.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

/// Pairs tied within runs of equal values, sum of t(t-1)/2. `v` must be sorted.
template <typename Eq>
long long tied_pairs_sorted(std::size_t n, Eq&& equal) {
  long long total = 0;
  long long run = 1;
  for (std::size_t i = 1; i < n; ++i) {
    if (equal(i - 1, i)) {
      ++run;
    } else {
      total += run * (run - 1) / 2;
      run = 1;
    }
  }
  return total + run * (run - 1) / 2;
}

/// Merge sort counting strict inversions.
inline long long count_inversions(std::vector<double>& v, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  long long inv = count_inversions(v, buf, lo, mid) + count_inversions(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      inv += static_cast<long long>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return inv;
}

}  // namespace detail

/// Product-moment correlation; empty when either series is constant.
inline std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  detail::check_paired(x, y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return detail::clamp_unit(sxy / std::sqrt(sxx * syy));
}

/// Pearson over average ranks.
inline std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  detail::check_paired(x, y);
  const auto rx = detail::average_ranks(x);
  const auto ry = detail::average_ranks(y);
  return pearson(rx, ry);
}

/// Kendall rank correlation in O(n log n). Pairs tied in either series are
/// neither concordant nor discordant; tau_b corrects the denominator for
/// them, tau_a divides by all n(n-1)/2 pairs.
inline std::optional<double> kendall_tau(std::span<const double> x, std::span<const double> y,
                                         TauVariant variant = TauVariant::tau_b) {
  detail::check_paired(x, y);
  const std::size_t n = x.size();
  std::vector<std::pair<double, double>> pairs(n);
  for (std::size_t i = 0; i < n; ++i) pairs[i] = {x[i], y[i]};
  std::sort(pairs.begin(), pairs.end());

  const long long n0 = static_cast<long long>(n) * static_cast<long long>(n - 1) / 2;
  const long long tied_x = detail::tied_pairs_sorted(n, [&](std::size_t a, std::size_t b) {
    return pairs[a].first == pairs[b].first;
  });
  const long long tied_xy = detail::tied_pairs_sorted(n, [&](std::size_t a, std::size_t b) {
    return pairs[a] == pairs[b];
  });

  std::vector<double> ys(n), buf(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = pairs[i].second;
  const long long discordant = detail::count_inversions(ys, buf, 0, n);
  const long long tied_y = detail::tied_pairs_sorted(n, [&](std::size_t a, std::size_t b) { return ys[a] == ys[b]; });

  // C - D = n0 - n1 - n2 + n3 - 2 * swaps
  const double numerator = static_cast<double>(n0 - tied_x - tied_y + tied_xy - 2 * discordant);
  if (variant == TauVariant::tau_a) return detail::clamp_unit(numerator / static_cast<double>(n0));
  const double denom = std::sqrt(static_cast<double>(n0 - tied_x)) * std::sqrt(static_cast<double>(n0 - tied_y));
  if (!(denom > 0.0)) return std::nullopt;
  return detail::clamp_unit(numerator / denom);
}

/// Fraction of unordered pairs with equal values.
inline double tie_fraction(std::span<const double> scores) {
  if (scores.size() < 2) throw Error(ErrorKind::precondition, "tie_fraction needs at least two scores");
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  const long long ties =
      detail::tied_pairs_sorted(sorted.size(), [&](std::size_t a, std::size_t b) { return sorted[a] == sorted[b]; });
  const long long n = static_cast<long long>(sorted.size());
  return static_cast<double>(ties) / static_cast<double>(n * (n - 1) / 2);
}

inline std::optional<double> correlation(std::span<const double> x, std::span<const double> y,
                                         CoefficientKind kind, TauVariant variant = TauVariant::tau_b) {
  switch (kind) {
    case CoefficientKind::spearman: return spearman(x, y);
    case CoefficientKind::kendall_tau: return kendall_tau(x, y, variant);
    case CoefficientKind::pearson: return pearson(x, y);
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Aggregation

enum class UndefinedPolicy { skip, zero };

inline UndefinedPolicy undefined_policy_from_string(std::string_view s) {
  if (s == "skip") return UndefinedPolicy::skip;
  if (s == "zero") return UndefinedPolicy::zero;
  throw Error(ErrorKind::config, "unknown undefined-group policy '" + std::string(s) + "'");
}

struct AggregationSpec {
  AggregationMode mode = AggregationMode::summary_level;
  UndefinedPolicy undefined_policy = UndefinedPolicy::skip;
  TauVariant tau_variant = TauVariant::tau_b;
};

struct AggregateOutcome {
  std::optional<double> value;
  int n_groups_used = 0;
  int n_groups_skipped = 0;
};

/// Which judge criterion feeds a human aspect, and whether to flip its sign
/// (e.g. a hallucination probability against a consistency rating).
struct ColumnSource {
  std::string aspect;
  std::string criterion;  // empty: same as aspect
  bool negate = false;

  const std::string& criterion_name() const { return criterion.empty() ? aspect : criterion; }
};

/// Joins results to records and aggregates the chosen coefficient.
inline AggregateOutcome aggregate_correlation(const std::vector<JudgeResult>& results,
                                              const std::vector<EvalRecord>& records, const ColumnSource& column,
                                              CoefficientKind coefficient, const AggregationSpec& spec) {
  std::map<std::string, const EvalRecord*> by_id;
  for (const auto& r : records) by_id[r.record_id] = &r;

  struct Pair {
    double metric;
    double human;
  };
  std::map<std::string, std::vector<Pair>> groups;  // ordered: deterministic reduction
  std::size_t joined = 0;
  for (const auto& res : results) {
    if (res.criterion != column.criterion_name()) continue;
    auto it = by_id.find(res.record_id);
    if (it == by_id.end()) {
      throw Error(ErrorKind::aggregation, "result for unknown record '" + res.record_id + "'");
    }
    const auto rating = it->second->human_ratings.find(column.aspect);
    if (rating == it->second->human_ratings.end()) {
      throw Error(ErrorKind::aggregation,
                  "record '" + res.record_id + "' has no human rating for aspect '" + column.aspect + "'");
    }
    const std::string key = spec.mode == AggregationMode::summary_level ? it->second->doc_id : std::string();
    if (spec.mode == AggregationMode::summary_level && key.empty()) {
      throw Error(ErrorKind::aggregation, "summary-level aggregation needs doc_id on record '" + res.record_id + "'");
    }
    groups[key].push_back({column.negate ? -res.final_score : res.final_score, rating->second});
    ++joined;
  }
  if (joined == 0) {
    throw Error(ErrorKind::aggregation, "no judge results for criterion '" + column.criterion_name() +
                                            "' (aspect '" + column.aspect + "')");
  }

  AggregateOutcome out;
  double sum = 0.0;
  int defined = 0;
  for (const auto& [doc, pairs] : groups) {
    std::optional<double> v;
    if (pairs.size() >= 2) {
      std::vector<double> xs, ys;
      for (const auto& p : pairs) {
        xs.push_back(p.metric);
        ys.push_back(p.human);
      }
      v = correlation(xs, ys, coefficient, spec.tau_variant);
    }
    if (v) {
      sum += *v;
      ++defined;
      ++out.n_groups_used;
    } else if (spec.undefined_policy == UndefinedPolicy::zero) {
      ++out.n_groups_used;
    } else {
      ++out.n_groups_skipped;
    }
  }
  if (defined == 0) {
    throw Error(ErrorKind::aggregation, "no group yields a defined " + std::string(to_string(coefficient)) +
                                            " for aspect '" + column.aspect + "'");
  }
  out.value = sum / static_cast<double>(out.n_groups_used);
  return out;
}

// ---------------------------------------------------------------------------
// Tables

struct TableColumn {
  std::string label;  // header text, e.g. "Coherence" or "QAGS-CNN"
  ColumnSource source;
  std::string input;  // named input (results + dataset); empty = default
};

struct TableSpec {
  std::string title;
  AggregationMode aggregation = AggregationMode::summary_level;
  std::vector<CoefficientKind> coefficients;
  std::vector<TableColumn> columns;
  std::string average_label = "AVG";
};

inline TableSpec summeval_table() {
  TableSpec t{"Summary-level correlations on SummEval", AggregationMode::summary_level,
              {CoefficientKind::spearman, CoefficientKind::kendall_tau}, {}, "AVG"};
  for (const char* a : {"coherence", "consistency", "fluency", "relevance"}) {
    std::string label = a;
    label[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(label[0])));
    t.columns.push_back({label, {a, "", false}, ""});
  }
  return t;
}

inline TableSpec topical_chat_table() {
  TableSpec t{"Turn-level correlations on Topical-Chat", AggregationMode::turn_level,
              {CoefficientKind::pearson, CoefficientKind::spearman}, {}, "AVG"};
  for (const char* a : {"naturalness", "coherence", "engagingness", "groundedness"}) {
    std::string label = a;
    label[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(label[0])));
    t.columns.push_back({label, {a, "", false}, ""});
  }
  return t;
}

/// Judge answers P(inconsistent); the human value is the consistent fraction.
inline TableSpec qags_table() {
  return {"Correlations on QAGS",
          AggregationMode::pooled,
          {CoefficientKind::pearson, CoefficientKind::spearman, CoefficientKind::kendall_tau},
          {{"QAGS-CNN", {"consistency", "hallucination", true}, "cnn"},
           {"QAGS-XSUM", {"consistency", "hallucination", true}, "xsum"}},
          "Average"};
}

inline TableSpec table_from_json(const nlohmann::json& j) {
  TableSpec t;
  try {
    t.title = j.value("title", "");
    t.aggregation = aggregation_from_string(j.value("aggregation", "summary_level"));
    for (const auto& c : j.at("coefficients")) t.coefficients.push_back(coefficient_from_string(c.get<std::string>()));
    for (const auto& c : j.at("columns")) {
      TableColumn col;
      col.source.aspect = c.at("aspect").get<std::string>();
      col.source.criterion = c.value("criterion", "");
      col.source.negate = c.value("negate", false);
      col.label = c.value("label", col.source.aspect);
      col.input = c.value("input", "");
      t.columns.push_back(std::move(col));
    }
    t.average_label = j.value("average_label", "AVG");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, std::string("malformed table spec: ") + e.what());
  }
  if (t.coefficients.empty() || t.columns.empty()) {
    throw Error(ErrorKind::config, "table spec needs at least one coefficient and one column");
  }
  return t;
}

/// Assembles a report row; every (column, coefficient) cell must be present.
/// Averages are the mean of the column values (undefined if any cell is).
inline CorrelationReport make_report(std::string label, const TableSpec& table,
                                     const std::vector<CorrelationEntry>& entries,
                                     TauVariant variant = TauVariant::tau_b) {
  CorrelationReport rep;
  rep.label = std::move(label);
  rep.coefficients = table.coefficients;
  rep.tau_variant = std::string(to_string(variant));
  for (const auto& col : table.columns) rep.aspects.push_back(col.label);
  for (const auto& col : table.columns) {
    for (auto k : table.coefficients) {
      auto it = std::find_if(entries.begin(), entries.end(), [&](const CorrelationEntry& e) {
        return e.aspect == col.label && e.coefficient == k;
      });
      if (it == entries.end()) {
        throw Error(ErrorKind::report,
                    "missing report cell (" + col.label + ", " + std::string(to_string(k)) + ")");
      }
      rep.entries.push_back(*it);
    }
  }
  for (auto k : table.coefficients) {
    double sum = 0.0;
    bool all = true;
    for (const auto& col : table.columns) {
      const auto* e = rep.find(col.label, k);
      if (!e->value) {
        all = false;
        break;
      }
      sum += *e->value;
    }
    rep.averages[k] = all ? std::optional<double>(sum / static_cast<double>(table.columns.size())) : std::nullopt;
  }
  return rep;
}

namespace detail {

inline std::string symbol(CoefficientKind k) {
  switch (k) {
    case CoefficientKind::spearman: return "ρ";
    case CoefficientKind::kendall_tau: return "τ";
    case CoefficientKind::pearson: return "r";
  }
  return "?";
}

inline std::string fixed3(const std::optional<double>& v) {
  if (!v) return "--";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", *v);
  return buf;
}

/// Shortest round-trip decimal; CSV and JSON share it.
inline std::string exact(const std::optional<double>& v) { return v ? nlohmann::json(*v).dump() : ""; }

}  // namespace detail

/// Markdown table: one column group per aspect plus the average.
inline std::string render_markdown(const TableSpec& table, const std::vector<CorrelationReport>& rows) {
  std::ostringstream out;
  if (!table.title.empty()) out << "**" << table.title << "**\n\n";
  const std::size_t k = table.coefficients.size();
  out << "| Metrics |";
  for (const auto& col : table.columns) {
    out << " " << col.label << " |";
    for (std::size_t i = 1; i < k; ++i) out << " |";
  }
  out << " " << table.average_label << " |";
  for (std::size_t i = 1; i < k; ++i) out << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < (table.columns.size() + 1) * k; ++i) out << "---|";
  out << "\n| |";
  for (std::size_t c = 0; c <= table.columns.size(); ++c) {
    for (auto coef : table.coefficients) out << " " << detail::symbol(coef) << " |";
  }
  out << "\n";
  for (const auto& row : rows) {
    out << "| " << row.label << " |";
    for (const auto& col : table.columns) {
      for (auto coef : table.coefficients) {
        const auto* e = row.find(col.label, coef);
        out << " " << detail::fixed3(e ? e->value : std::nullopt) << " |";
      }
    }
    for (auto coef : table.coefficients) {
      auto it = row.averages.find(coef);
      out << " " << detail::fixed3(it == row.averages.end() ? std::nullopt : it->second) << " |";
    }
    out << "\n";
  }
  return out.str();
}

/// One line per (row, aspect); one column per coefficient.
inline std::string render_csv(const TableSpec& table, const std::vector<CorrelationReport>& rows) {
  std::ostringstream out;
  out << "row,aspect";
  for (auto coef : table.coefficients) out << "," << to_string(coef);
  out << "\n";
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += (c == '"') ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  for (const auto& row : rows) {
    for (const auto& col : table.columns) {
      out << quote(row.label) << "," << quote(col.label);
      for (auto coef : table.coefficients) {
        const auto* e = row.find(col.label, coef);
        out << "," << detail::exact(e ? e->value : std::nullopt);
      }
      out << "\n";
    }
    out << quote(row.label) << "," << quote(table.average_label);
    for (auto coef : table.coefficients) {
      auto it = row.averages.find(coef);
      out << "," << detail::exact(it == row.averages.end() ? std::nullopt : it->second);
    }
    out << "\n";
  }
  return out.str();
}

inline nlohmann::ordered_json report_to_json(const TableSpec& table, const std::vector<CorrelationReport>& rows) {
  nlohmann::ordered_json j;
  j["title"] = table.title;
  j["aggregation"] = std::string(to_string(table.aggregation));
  j["average_label"] = table.average_label;
  auto coefs = nlohmann::ordered_json::array();
  for (auto c : table.coefficients) coefs.push_back(std::string(to_string(c)));
  j["coefficients"] = coefs;
  auto out_rows = nlohmann::ordered_json::array();
  for (const auto& row : rows) {
    nlohmann::ordered_json r;
    r["label"] = row.label;
    r["tau_variant"] = row.tau_variant;
    auto entries = nlohmann::ordered_json::array();
    for (const auto& e : row.entries) {
      nlohmann::ordered_json je;
      je["aspect"] = e.aspect;
      je["coefficient"] = std::string(to_string(e.coefficient));
      je["value"] = e.value ? nlohmann::ordered_json(*e.value) : nlohmann::ordered_json();
      je["aggregation"] = std::string(to_string(e.aggregation));
      je["n_groups_used"] = e.n_groups_used;
      je["n_groups_skipped"] = e.n_groups_skipped;
      entries.push_back(std::move(je));
    }
    r["entries"] = std::move(entries);
    nlohmann::ordered_json avg;
    for (auto c : table.coefficients) {
      auto it = row.averages.find(c);
      avg[std::string(to_string(c))] =
          (it != row.averages.end() && it->second) ? nlohmann::ordered_json(*it->second) : nlohmann::ordered_json();
    }
    r["averages"] = std::move(avg);
    out_rows.push_back(std::move(r));
  }
  j["rows"] = std::move(out_rows);
  return j;
}

/// Named source of (results, records) for table columns.
struct MetaevalInput {
  std::vector<JudgeResult> results;
  std::vector<EvalRecord> records;
};

/// Computes every cell of `table` for one row.
inline CorrelationReport evaluate_table(std::string label, const TableSpec& table,
                                        const std::map<std::string, MetaevalInput>& inputs,
                                        const AggregationSpec& agg) {
  std::vector<CorrelationEntry> entries;
  for (const auto& col : table.columns) {
    auto it = inputs.find(col.input);
    if (it == inputs.end()) {
      throw Error(ErrorKind::config, "table column '" + col.label + "' needs input '" + col.input + "'");
    }
    for (auto coef : table.coefficients) {
      const auto outcome = aggregate_correlation(it->second.results, it->second.records, col.source, coef, agg);
      entries.push_back({col.label, coef, outcome.value, agg.mode, outcome.n_groups_used, outcome.n_groups_skipped});
    }
  }
  return make_report(std::move(label), table, entries, agg.tau_variant);
}

}  // namespace geval

#pragma once

// Shared fixtures for the unit tests.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "geval/builtin.hpp"
#include "geval/core.hpp"
#include "geval/llm.hpp"

namespace testutil {

namespace fs = std::filesystem;

inline fs::path data(const std::string& name) { return fs::path(GEVAL_TEST_DATA) / name; }

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("geval-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  operator const fs::path&() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline const std::vector<std::string>& coherence_steps() {
  static const std::vector<std::string> steps{
      "Read the news article carefully and identify the main topic and key points.",
      "Read the summary and compare it to the news article. Check if the summary covers the main topic and key "
      "points of the news article, and if it presents them in a clear and logical order.",
      "Assign a score for coherence on a scale of 1 to 5, where 1 is the lowest and 5 is the highest based on the "
      "Evaluation Criteria."};
  return steps;
}

/// Builtin coherence criterion with hand-written steps attached.
inline geval::CriterionSpec coherence() {
  auto c = geval::summeval_criteria().front();
  c.evaluation_steps = coherence_steps();
  return c;
}

inline geval::CriterionSpec with_steps(geval::CriterionSpec c, std::vector<std::string> steps) {
  c.evaluation_steps = std::move(steps);
  return c;
}

inline geval::EvalRecord record(std::string id, std::string doc, std::string sys, std::string output,
                                std::map<std::string, double> ratings = {}) {
  geval::EvalRecord r;
  r.record_id = std::move(id);
  r.doc_id = std::move(doc);
  r.system_id = std::move(sys);
  r.source = "The city council approved a new riverside park on Monday.";
  r.output = std::move(output);
  r.human_ratings = std::move(ratings);
  r.provenance = "fixture";
  return r;
}

inline geval::Script rule_script(std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> rules,
                                 std::string model = "mock") {
  geval::Script s;
  s.model_id = std::move(model);
  for (auto& [needles, completions] : rules) s.rules.push_back({needles, geval::ScriptEntry{completions, {}}});
  return s;
}

template <class Fn>
geval::ErrorKind kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const geval::Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected a geval::Error";
  return geval::ErrorKind::validation;
}

template <class Fn>
std::string message_of(Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  ADD_FAILURE() << "expected an exception";
  return {};
}

}  // namespace testutil

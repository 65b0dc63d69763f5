#include <thread>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "geval/analysis.hpp"
#include "geval/builtin.hpp"
#include "geval/prompt.hpp"
#include "support.hpp"

using namespace geval;
using testutil::kind_of;
using testutil::message_of;

namespace {

const PromptTemplate& builtin(const std::string& id) {
  static const auto all = load_builtin_templates();
  return *find_template(all, id);
}

EvalRecord park_record() {
  return testutil::record("doc1#M0", "doc1", "M0", "The council approved a park.");
}

const std::string kCotReply =
    "1. Read the news article carefully and identify the main topic and key points.\n"
    "2. Read the summary and compare it to the news article. Check if the summary covers the main topic\n"
    "   and key points of the news article, and if it presents them in a clear and logical order.\n"
    "3. Assign a score for coherence on a scale of 1 to 5, where 1 is the lowest and 5 is the highest based on "
    "the Evaluation Criteria.";

}  // namespace

TEST(Builtins, ShipsTheThreeLayouts) {
  const auto all = load_builtin_templates();
  ASSERT_GE(all.size(), 3u);
  EXPECT_EQ(all, load_builtin_templates());
  for (const auto& t : all) EXPECT_NO_THROW(t.validate()) << t.template_id;
  EXPECT_NE(builtin("summarization").body.find("Evaluation Form (scores ONLY)"), std::string::npos);
  EXPECT_TRUE(builtin("hallucination").body.ends_with("Answer:"));
  EXPECT_EQ(builtin("hallucination").style, TemplateStyle::binary_qa);
  EXPECT_NE(builtin("dialogue").body.find("Corresponding Fact:"), std::string::npos);
}

TEST(Template, RejectsUnknownPlaceholderAndBadTail) {
  PromptTemplate t{"t", "{{task_intro}} {{Document}}\nEvaluation Form (scores ONLY):\n- {{form}}",
                   TemplateStyle::cot_form_filling};
  EXPECT_EQ(kind_of([&] { t.validate(); }), ErrorKind::config);
  t.body = "{{output}}\nAnswer: maybe";
  t.style = TemplateStyle::binary_qa;
  EXPECT_EQ(kind_of([&] { t.validate(); }), ErrorKind::config);
  t.body = "{{source}}\n{{output}}";
  t.style = TemplateStyle::cot_form_filling;
  EXPECT_EQ(kind_of([&] { t.validate(); }), ErrorKind::config);
}

TEST(Assemble, MatchesAppendixCoherenceLayout) {
  const auto p = assemble(builtin("summarization"), testutil::coherence(), park_record(), true);
  EXPECT_EQ(p.text, testutil::slurp(testutil::data("golden_coherence.txt")));
  EXPECT_TRUE(p.includes_cot);
  EXPECT_EQ(p.fingerprint, fingerprint(p.text));
  EXPECT_EQ(p.parts.template_id, "summarization");
  EXPECT_EQ(p.parts.criterion, "coherence");
  EXPECT_EQ(p.parts.record_id, "doc1#M0");
}

TEST(Assemble, Deterministic) {
  const auto a = assemble(builtin("summarization"), testutil::coherence(), park_record(), true);
  const auto b = assemble(builtin("summarization"), testutil::coherence(), park_record(), true);
  EXPECT_EQ(a.text, b.text);
  EXPECT_EQ(a.fingerprint, b.fingerprint);
}

TEST(Assemble, DialogueNeedsExtraContext) {
  auto engaging = topical_chat_criteria()[2];
  engaging.evaluation_steps = std::vector<std::string>{"Read the conversation.", "Rate engagingness."};
  auto rec = park_record();
  const auto msg = message_of([&] { assemble(builtin("dialogue"), engaging, rec, true); });
  EXPECT_NE(msg.find("{{extra_context}}"), std::string::npos);
  EXPECT_EQ(kind_of([&] { assemble(builtin("dialogue"), engaging, rec, true); }), ErrorKind::assembly);
  rec.extra_context = "Miles Davis released Kind of Blue in 1959.";
  const auto p = assemble(builtin("dialogue"), engaging, rec, true);
  EXPECT_NE(p.text.find("Corresponding Fact:\n\nMiles Davis"), std::string::npos);
  EXPECT_TRUE(p.text.ends_with("- Engagingness:"));
}

TEST(Assemble, CotRequiresSteps) {
  auto c = summeval_criteria().front();
  EXPECT_EQ(kind_of([&] { assemble(builtin("summarization"), c, park_record(), true); }), ErrorKind::assembly);
  EXPECT_NO_THROW(assemble(builtin("summarization"), c, park_record(), false));
}

TEST(Assemble, NoCotRemovesOnlyTheStepsBlock) {
  const auto full = assemble(builtin("summarization"), testutil::coherence(), park_record(), true);
  const auto bare = assemble(builtin("summarization"), testutil::coherence(), park_record(), false);
  EXPECT_FALSE(bare.includes_cot);
  EXPECT_EQ(bare.text.find("Evaluation Steps:"), std::string::npos);
  EXPECT_NE(bare.text.find("about a topic.\"\n\nExample:"), std::string::npos);
  const auto diff = diff_prompts(full.text, bare.text);
  EXPECT_TRUE(diff.confined_to_steps);
  EXPECT_TRUE(diff.removed.starts_with("Evaluation Steps:"));
  EXPECT_TRUE(diff.added.empty());
  // the remainder is byte-identical to the full prompt minus that block
  std::string rebuilt = full.text;
  rebuilt.erase(rebuilt.find(diff.removed), diff.removed.size());
  EXPECT_EQ(rebuilt, bare.text);
}

TEST(Assemble, FillIsSinglePass) {
  auto rec = park_record();
  rec.output = "Summary mentions {{source}} literally.";
  const auto p = assemble(builtin("summarization"), testutil::coherence(), rec, true);
  EXPECT_NE(p.text.find("Summary mentions {{source}} literally."), std::string::npos);
}

TEST(Assemble, SkeletonFingerprintIgnoresOutput) {
  auto a = park_record();
  auto b = park_record();
  b.output = "A different summary.";
  const auto pa = assemble(builtin("summarization"), testutil::coherence(), a, true);
  const auto pb = assemble(builtin("summarization"), testutil::coherence(), b, true);
  EXPECT_NE(pa.fingerprint, pb.fingerprint);
  EXPECT_EQ(pa.parts.skeleton_fingerprint, pb.parts.skeleton_fingerprint);
}

TEST(UserTemplate, LoadsWithSidecar) {
  const auto t = load_template_file(testutil::data("user_template.txt"));
  EXPECT_EQ(t.template_id, "user-summary");
  const auto p = assemble(t, testutil::coherence(), park_record(), true);
  EXPECT_NE(p.text.find("Candidate:\n\nThe council approved a park."), std::string::npos);
  EXPECT_EQ(kind_of([] { load_template_file("/nonexistent/t.txt"); }), ErrorKind::config);
}

TEST(CotParse, Enumerators) {
  const auto steps = parse_cot_steps(kCotReply);
  ASSERT_EQ(steps.size(), 3u);
  EXPECT_EQ(steps[0], testutil::coherence_steps()[0]);
  EXPECT_EQ(steps[1], testutil::coherence_steps()[1]);
  EXPECT_EQ(steps[2], testutil::coherence_steps()[2]);
  EXPECT_EQ(parse_cot_steps("1) first\n2) second"), (std::vector<std::string>{"first", "second"}));
  EXPECT_EQ(parse_cot_steps("  just read it carefully  "), std::vector<std::string>{"just read it carefully"});
  EXPECT_TRUE(parse_cot_steps("  \n ").empty());
}

TEST(Cot, GeneratesThreeSteps) {
  auto backend = mock_from_script(testutil::rule_script({{{"Evaluation Steps:"}, {kCotReply}}}));
  CotGenerator cot;
  const auto out = cot.generate(summeval_criteria().front(), *backend);
  EXPECT_EQ(out.steps, testutil::coherence_steps());
  EXPECT_FALSE(out.cached);
  EXPECT_EQ(out.raw, kCotReply);
}

TEST(Cot, PromptCarriesIntroCriteriaAndCue) {
  const auto p = cot_prompt(summeval_criteria().front());
  EXPECT_TRUE(p.starts_with("You will be given one summary"));
  EXPECT_NE(p.find("Evaluation Criteria:\n\nCoherence (1-5)"), std::string::npos);
  EXPECT_TRUE(p.ends_with("Evaluation Steps:\n"));
}

TEST(Cot, SecondCallIsCachedWithoutBackendCalls) {
  auto backend = mock_from_script(testutil::rule_script({{{"Evaluation Steps:"}, {kCotReply}}}));
  CotGenerator cot;
  cot.generate(summeval_criteria().front(), *backend);
  const auto calls = backend->provider_calls();
  const auto again = cot.generate(summeval_criteria().front(), *backend);
  EXPECT_TRUE(again.cached);
  EXPECT_EQ(backend->provider_calls(), calls);
  EXPECT_EQ(backend->cache_hits(), 0u);
}

TEST(Cot, UsesDeterministicDecoding) {
  auto backend = mock_from_script(testutil::rule_script({{{"Evaluation Steps:"}, {kCotReply}}}));
  CotGenerator cot;
  cot.generate(summeval_criteria().front(), *backend);
  GenerationRequest expected;
  expected.prompt = cot_prompt(summeval_criteria().front());
  expected.temperature = 0.0;
  expected.n_samples = 1;
  expected.max_tokens = 512;
  EXPECT_TRUE(backend->generate(expected).cached);
}

TEST(Cot, PreconditionAndEmptyReply) {
  auto backend = mock_from_script(testutil::rule_script({{{"Evaluation Steps:"}, {"   "}}}));
  CotGenerator cot;
  EXPECT_EQ(kind_of([&] { cot.generate(testutil::coherence(), *backend); }), ErrorKind::precondition);
  try {
    cot.generate(summeval_criteria().front(), *backend);
    FAIL() << "expected CotError";
  } catch (const CotError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::cot_generation);
    EXPECT_EQ(e.raw(), "   ");
  }
  EXPECT_EQ(cot.size(), 0u);
}

TEST(Cot, KeyDependsOnModelAndDefinition) {
  const auto c = summeval_criteria().front();
  auto d = c;
  d.display_definition += " Extra.";
  EXPECT_NE(cot_cache_key(c, "m1"), cot_cache_key(c, "m2"));
  EXPECT_NE(cot_cache_key(c, "m1"), cot_cache_key(d, "m1"));
  EXPECT_EQ(cot_cache_key(c, "m1"), cot_cache_key(summeval_criteria().front(), "m1"));
}

TEST(Cot, SingleFlightUnderConcurrency) {
  BackendConfig cfg;
  cfg.max_concurrency = 8;
  auto backend = mock_from_script(testutil::rule_script({{{"Evaluation Steps:"}, {kCotReply}}}), cfg);
  dynamic_cast<ScriptedProvider&>(backend->provider()).set_latency(std::chrono::milliseconds(50));
  CotGenerator cot;
  std::vector<std::vector<std::string>> seen(8);
  {
    std::vector<std::jthread> threads;
    for (int i = 0; i < 8; ++i) {
      threads.emplace_back([&, i] { seen[i] = cot.generate(summeval_criteria().front(), *backend).steps; });
    }
  }
  EXPECT_EQ(backend->provider_calls(), 1u);
  for (const auto& s : seen) EXPECT_EQ(s, testutil::coherence_steps());
}

TEST(Cot, PersistedCacheFile) {
  testutil::TempDir dir;
  const auto file = dir / "cot.json";
  {
    auto backend = mock_from_script(testutil::rule_script({{{"Evaluation Steps:"}, {kCotReply}}}));
    CotGenerator cot(file);
    cot.generate(summeval_criteria().front(), *backend);
  }
  const auto j = nlohmann::json::parse(testutil::slurp(file));
  ASSERT_EQ(j.size(), 1u);
  const auto& entry = j.begin().value();
  EXPECT_EQ(entry["raw"], kCotReply);
  EXPECT_EQ(entry["steps"].size(), 3u);
  EXPECT_EQ(j.begin().key(), cot_cache_key(summeval_criteria().front(), "mock"));

  auto other = mock_from_script(testutil::rule_script({{{"unused"}, {"x"}}}));
  CotGenerator reloaded(file);
  const auto out = reloaded.generate(summeval_criteria().front(), *other);
  EXPECT_TRUE(out.cached);
  EXPECT_EQ(other->provider_calls(), 0u);
}

#include <fstream>

#include <gtest/gtest.h>

#include "geval/benchmarks.hpp"
#include "support.hpp"

using namespace geval;
using testutil::kind_of;
using testutil::message_of;

namespace {

std::vector<EvalRecord> load(AdapterKind kind, const std::string& file, const std::string& name = {}) {
  return ingest(DatasetDescriptor::with_defaults(kind, testutil::data(file), name));
}

const EvalRecord& by_id(const std::vector<EvalRecord>& records, const std::string& id) {
  for (const auto& r : records) {
    if (r.record_id == id) return r;
  }
  throw std::runtime_error("no record " + id);
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

}  // namespace

TEST(SummEval, AnnotatorMeansMatchHandComputation) {
  const auto records = load(AdapterKind::summeval, "summeval.jsonl", "summeval");
  ASSERT_EQ(records.size(), 4u);
  const std::map<std::string, std::map<std::string, double>> expected{
      {"doc1#M0", {{"coherence", 3.0}, {"consistency", 14.0 / 3}, {"fluency", 3.0}, {"relevance", 5.0 / 3}}},
      {"doc1#M1", {{"coherence", 4.0 / 3}, {"consistency", 3.0}, {"fluency", 7.0 / 3}, {"relevance", 1.0}}},
      {"doc2#M0", {{"coherence", 14.0 / 3}, {"consistency", 5.0}, {"fluency", 3.0}, {"relevance", 13.0 / 3}}},
      {"doc2#M1", {{"coherence", 3.0}, {"consistency", 11.0 / 3}, {"fluency", 8.0 / 3}, {"relevance", 7.0 / 3}}},
  };
  for (const auto& [id, ratings] : expected) {
    const auto& r = by_id(records, id);
    ASSERT_EQ(r.human_ratings.size(), 4u) << id;
    for (const auto& [aspect, v] : ratings) EXPECT_NEAR(r.human_ratings.at(aspect), v, 1e-12) << id << " " << aspect;
  }
  const auto& r = by_id(records, "doc1#M0");
  EXPECT_EQ(r.doc_id, "doc1");
  EXPECT_EQ(r.system_id, "M0");
  EXPECT_EQ(r.output, "The council approved a riverside park; construction starts in May.");
  EXPECT_EQ(r.provenance, "summeval");
  EXPECT_FALSE(r.extra_context.has_value());
}

TEST(SummEval, MedianAggregation) {
  auto d = DatasetDescriptor::with_defaults(AdapterKind::summeval, testutil::data("summeval.jsonl"));
  d.aggregation = AnnotatorAggregation::median;
  const auto records = ingest(d);
  EXPECT_DOUBLE_EQ(by_id(records, "doc1#M0").human_ratings.at("consistency"), 5.0);
  EXPECT_DOUBLE_EQ(by_id(records, "doc1#M0").human_ratings.at("coherence"), 3.0);
}

TEST(TopicalChat, FourCanonicalAspects) {
  const auto records = load(AdapterKind::topical_chat_usr, "topical_chat.json", "topical_chat");
  ASSERT_EQ(records.size(), 4u);
  const std::map<std::string, std::map<std::string, double>> expected{
      {"topical_chat-0#Original Ground Truth",
       {{"naturalness", 8.0 / 3}, {"coherence", 3.0}, {"engagingness", 7.0 / 3}, {"groundedness", 2.0 / 3}}},
      {"topical_chat-0#KV-MemNN",
       {{"naturalness", 5.0 / 3}, {"coherence", 4.0 / 3}, {"engagingness", 1.0}, {"groundedness", 0.0}}},
      {"topical_chat-1#Original Ground Truth",
       {{"naturalness", 8.0 / 3}, {"coherence", 8.0 / 3}, {"engagingness", 3.0}, {"groundedness", 1.0}}},
      {"topical_chat-1#Argmax Decoding",
       {{"naturalness", 4.0 / 3}, {"coherence", 5.0 / 3}, {"engagingness", 4.0 / 3}, {"groundedness", 1.0 / 3}}},
  };
  for (const auto& [id, ratings] : expected) {
    const auto& r = by_id(records, id);
    EXPECT_EQ(r.human_ratings.size(), 4u) << id;
    for (const auto& [aspect, v] : ratings) EXPECT_NEAR(r.human_ratings.at(aspect), v, 1e-12) << id << " " << aspect;
    EXPECT_TRUE(r.extra_context.has_value());
  }
  EXPECT_EQ(*by_id(records, "topical_chat-0#KV-MemNN").extra_context, "Miles Davis released Kind of Blue in 1959.");
}

TEST(Qags, SentenceMajorityFractions) {
  const auto records = load(AdapterKind::qags, "qags.jsonl", "qags-cnn");
  ASSERT_EQ(records.size(), 3u);
  EXPECT_DOUBLE_EQ(records[0].human_ratings.at("consistency"), 0.5);
  EXPECT_DOUBLE_EQ(records[1].human_ratings.at("consistency"), 1.0);
  EXPECT_DOUBLE_EQ(records[2].human_ratings.at("consistency"), 0.0);
  EXPECT_EQ(records[0].output, "The museum reopened on Saturday. Children now pay a reduced fee.");
  EXPECT_EQ(records[0].record_id, "qags-cnn-0");
}

TEST(Ingest, EmptyFileGivesEmptyList) {
  for (auto kind : {AdapterKind::summeval, AdapterKind::qags, AdapterKind::normalized_jsonl,
                    AdapterKind::topical_chat_usr}) {
    EXPECT_TRUE(load(kind, "empty.jsonl").empty()) << to_string(kind);
  }
}

TEST(Ingest, RoundTripThroughNormalizedForm) {
  testutil::TempDir dir;
  const std::vector<std::pair<AdapterKind, std::string>> fixtures{{AdapterKind::summeval, "summeval.jsonl"},
                                                                  {AdapterKind::topical_chat_usr, "topical_chat.json"},
                                                                  {AdapterKind::qags, "qags.jsonl"}};
  for (const auto& [kind, file] : fixtures) {
    const auto original = load(kind, file);
    const auto path = dir / (file + ".norm.jsonl");
    EXPECT_EQ(emit_normalized(original, path), original.size());
    const auto back = ingest(DatasetDescriptor::with_defaults(AdapterKind::normalized_jsonl, path));
    EXPECT_EQ(back, original) << file;
  }
}

TEST(Ingest, MalformedLineReportsOffset) {
  testutil::TempDir dir;
  const auto first = testutil::slurp(testutil::data("summeval.jsonl"));
  const auto line1 = first.substr(0, first.find('\n') + 1);
  write(dir / "bad.jsonl", line1 + "{\"id\": \"doc9\", \n");
  const auto d = DatasetDescriptor::with_defaults(AdapterKind::summeval, dir / "bad.jsonl");
  EXPECT_EQ(kind_of([&] { ingest(d); }), ErrorKind::ingestion);
  const auto msg = message_of([&] { ingest(d); });
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("byte offset " + std::to_string(line1.size())), std::string::npos) << msg;
}

TEST(Ingest, MissingFieldNamed) {
  testutil::TempDir dir;
  write(dir / "bad.jsonl", R"({"id":"d","model_id":"m","text":"t","expert_annotations":[]})" "\n");
  const auto msg = message_of([&] { ingest(DatasetDescriptor::with_defaults(AdapterKind::summeval, dir / "bad.jsonl")); });
  EXPECT_NE(msg.find("decoded"), std::string::npos) << msg;
}

TEST(Ingest, UnknownAspectListsMap) {
  testutil::TempDir dir;
  write(dir / "bad.jsonl",
        R"({"id":"d","model_id":"m","text":"t","decoded":"o","expert_annotations":[{"coherence":3,"style":2}]})" "\n");
  const auto d = DatasetDescriptor::with_defaults(AdapterKind::summeval, dir / "bad.jsonl");
  EXPECT_EQ(kind_of([&] { ingest(d); }), ErrorKind::ingestion);
  const auto msg = message_of([&] { ingest(d); });
  EXPECT_NE(msg.find("'style'"), std::string::npos) << msg;
  EXPECT_NE(msg.find("coherence -> coherence"), std::string::npos) << msg;
}

TEST(Ingest, MissingFileIsIo) {
  const auto d = DatasetDescriptor::with_defaults(AdapterKind::summeval, "/nonexistent/summeval.jsonl");
  EXPECT_EQ(kind_of([&] { ingest(d); }), ErrorKind::io);
  EXPECT_NE(message_of([&] { ingest(d); }).find("/nonexistent/summeval.jsonl"), std::string::npos);
}

TEST(Ingest, DuplicateRecordIdsRejected) {
  testutil::TempDir dir;
  const auto first = testutil::slurp(testutil::data("summeval.jsonl"));
  const auto line1 = first.substr(0, first.find('\n') + 1);
  write(dir / "dup.jsonl", line1 + line1);
  const auto msg = message_of([&] { ingest(DatasetDescriptor::with_defaults(AdapterKind::summeval, dir / "dup.jsonl")); });
  EXPECT_NE(msg.find("duplicate record_id 'doc1#M0'"), std::string::npos) << msg;
}

TEST(Ingest, QagsLabelValidated) {
  testutil::TempDir dir;
  write(dir / "bad.jsonl",
        R"({"article":"a","summary_sentences":[{"sentence":"s","responses":[{"worker_id":1,"response":"maybe"}]}]})" "\n");
  EXPECT_EQ(kind_of([&] { ingest(DatasetDescriptor::with_defaults(AdapterKind::qags, dir / "bad.jsonl")); }),
            ErrorKind::ingestion);
}

TEST(Descriptor, ValidationAndDefaults) {
  auto d = DatasetDescriptor::with_defaults(AdapterKind::topical_chat_usr, "x.json");
  EXPECT_EQ(d.ignored_aspects, (std::set<std::string>{"Understandable", "Overall"}));
  EXPECT_EQ(d.aspect_map.at("Maintains Context"), "coherence");
  d.aspect_map["Overall"] = "coherence";
  EXPECT_EQ(kind_of([&] { d.validate(); }), ErrorKind::config);
  EXPECT_EQ(kind_of([] { adapter_from_string("csv"); }), ErrorKind::config);
  EXPECT_EQ(detail::aggregate({1, 2, 4}, AnnotatorAggregation::median), 2.0);
  EXPECT_EQ(detail::aggregate({1, 2, 4, 5}, AnnotatorAggregation::median), 3.0);
}

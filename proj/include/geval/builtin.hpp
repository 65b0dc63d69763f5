#pragma once

// Templates and criterion definitions shipped with the library.

#include <string>
#include <vector>

#include "geval/core.hpp"
#include "geval/prompt.hpp"

namespace geval {

namespace assets {

inline constexpr const char* kSummarizationTemplate = R"({{task_intro}}

Evaluation Criteria:

{{criteria}}

Evaluation Steps:

{{steps}}

Example:


Source Text:

{{source}}

Summary:

{{output}}


Evaluation Form (scores ONLY):

- {{form}})";

inline constexpr const char* kDialogueTemplate = R"({{task_intro}}

Evaluation Criteria:

{{criteria}}

Evaluation Steps:

{{steps}}

Example:


Conversation History:

{{source}}


Corresponding Fact:

{{extra_context}}


Response:

{{output}}


Evaluation Form (scores ONLY):

- {{form}})";

inline constexpr const char* kHallucinationTemplate = R"(Human Evaluation of Text Summarization Systems:

{{criteria}}

Source Text:

{{source}}

Summary:

{{output}}


Does the summary contain factual inconsistency?

Answer:)";

inline constexpr const char* kSummaryIntro =
    "You will be given one summary written for a news article.\n\n"
    "Your task is to rate the summary on one metric.\n\n"
    "Please make sure you read and understand these instructions carefully. Please keep this "
    "document open while reviewing, and refer to it as needed.";

inline constexpr const char* kDialogueIntro =
    "You will be given a conversation between two individuals. You will then be given one "
    "potential response for the next turn in the conversation. The response concerns an "
    "interesting fact, which will be provided as well.\n\n"
    "Your task is to rate the responses on one metric.\n\n"
    "Please make sure you read and understand these instructions carefully. Please keep this "
    "document open while reviewing, and refer to it as needed.";

}  // namespace assets

inline std::vector<PromptTemplate> load_builtin_templates() {
  return {
      {"summarization", assets::kSummarizationTemplate, TemplateStyle::cot_form_filling},
      {"dialogue", assets::kDialogueTemplate, TemplateStyle::cot_form_filling},
      {"hallucination", assets::kHallucinationTemplate, TemplateStyle::binary_qa},
  };
}

inline const PromptTemplate* find_template(const std::vector<PromptTemplate>& templates,
                                           const std::string& id) {
  for (const auto& t : templates) {
    if (t.template_id == id) return &t;
  }
  return nullptr;
}

/// SummEval aspects; all rated on 1-5.
inline std::vector<CriterionSpec> summeval_criteria() {
  const auto scale = ScoreScale::integer_range(1, 5);
  auto make = [&](std::string name, std::string def) {
    return CriterionSpec{std::move(name), std::move(def), scale, std::nullopt, assets::kSummaryIntro};
  };
  return {
      make("coherence",
           "Coherence (1-5) - the collective quality of all sentences. We align this dimension with "
           "the DUC quality question of structure and coherence whereby \"the summary should be "
           "well-structured and well-organized. The summary should not just be a heap of related "
           "information, but should build from sentence to sentence to a coherent body of "
           "information about a topic.\""),
      make("consistency",
           "Consistency (1-5) - the factual alignment between the summary and the summarized "
           "source. A factually consistent summary contains only statements that are entailed by "
           "the source document. Penalize summaries that contain hallucinated facts."),
      make("fluency",
           "Fluency (1-5) - the quality of the individual sentences: grammar, spelling, "
           "punctuation, word choice and sentence structure. A fluent summary reads naturally and "
           "has no errors that make it hard to understand."),
      make("relevance",
           "Relevance (1-5) - selection of important content from the source. The summary should "
           "include only important information from the source document. Penalize summaries "
           "which contain redundancies and excess information."),
  };
}

/// Topical-Chat (USR) aspects. Groundedness is binary in the human annotation.
inline std::vector<CriterionSpec> topical_chat_criteria() {
  auto make = [&](std::string name, std::string def, ScoreScale scale) {
    return CriterionSpec{std::move(name), std::move(def), scale, std::nullopt, assets::kDialogueIntro};
  };
  const auto three = ScoreScale::integer_range(1, 3);
  return {
      make("naturalness",
           "Naturalness (1-3) Is the response naturally written?\n\n"
           "- A score of 1 (bad) means that the response is unnatural.\n\n"
           "- A score of 2 (ok) means the response is strange, but not entirely unnatural.\n\n"
           "- A score of 3 (good) means that the response is natural.",
           three),
      make("coherence",
           "Coherence (1-3) Does the response serve as a valid continuation of the conversation "
           "history?\n\n"
           "- A score of 1 (no) means that the response drastically changes topic or ignores the "
           "conversation history.\n\n"
           "- A score of 2 (somewhat) means the response refers to the conversation history in a "
           "limited capacity (e.g., in a generic way) and shifts the conversation topic.\n\n"
           "- A score of 3 (yes) means the response is on topic and strongly acknowledges the "
           "conversation history.",
           three),
      make("engagingness",
           "Engagingness (1-3) Is the response dull/interesting?\n\n"
           "- A score of 1 (dull) means that the response is generic and dull.\n\n"
           "- A score of 2 (somewhat interesting) means the response is somewhat interesting and "
           "could engage you in the conversation (e.g., an opinion, thought)\n\n"
           "- A score of 3 (interesting) means the response is very interesting or presents an "
           "interesting fact",
           three),
      make("groundedness",
           "Groundedness (0-1) Given the fact that this response is conditioned on, how well does "
           "the response use that fact?\n\n"
           "- A score of 0 (no) means the response does not mention or refer to the fact at "
           "all.\n\n"
           "- A score of 1 (yes) means the response uses the fact well.",
           ScoreScale::integer_range(0, 1)),
  };
}

/// Binary factual-consistency question; "Yes" (inconsistent) scores 1.
inline std::vector<CriterionSpec> qags_criteria() {
  return {CriterionSpec{
      "hallucination",
      "Factual Consistency: Does the summary contain untruthful or misleading facts that are not "
      "supported by the source text?",
      ScoreScale::labeled_binary("Yes", "No"), std::nullopt,
      "You will be given a news article and a summary of it. Decide whether the summary contains "
      "facts that are not supported by the article."}};
}

/// Criterion set and default template id for a named task.
struct TaskPreset {
  std::string task;
  std::string template_id;
  std::vector<CriterionSpec> criteria;
};

inline std::vector<TaskPreset> builtin_tasks() {
  return {
      {"summeval", "summarization", summeval_criteria()},
      {"topical_chat", "dialogue", topical_chat_criteria()},
      {"qags", "hallucination", qags_criteria()},
  };
}

}  // namespace geval

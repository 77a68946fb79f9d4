#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "rubricforge/backend.hpp"
#include "rubricforge/core.hpp"
#include "rubricforge/digest.hpp"
#include "rubricforge/errors.hpp"
#include "rubricforge/json_extract.hpp"

namespace rforge {

// ---------------------------------------------------------------------------
// Prompt templates
// ---------------------------------------------------------------------------

enum class PromptKind {
  stage1_filter,
  stage2_classify,
  stage3_generate,
  stage4_validate_qa,
  judge_criterion,
  judge_criterion_ref,  // criterion judging with the reference answer shown
  judge_blind,
  judge_reference,
};

inline std::string_view to_string(PromptKind kind) {
  switch (kind) {
    case PromptKind::stage1_filter: return "stage1_filter";
    case PromptKind::stage2_classify: return "stage2_classify";
    case PromptKind::stage3_generate: return "stage3_generate";
    case PromptKind::stage4_validate_qa: return "stage4_validate_qa";
    case PromptKind::judge_criterion: return "judge_criterion";
    case PromptKind::judge_criterion_ref: return "judge_criterion_ref";
    case PromptKind::judge_blind: return "judge_blind";
    case PromptKind::judge_reference: return "judge_reference";
  }
  return "stage1_filter";
}

inline const std::vector<PromptKind>& all_prompt_kinds() {
  static const std::vector<PromptKind> k = {
      PromptKind::stage1_filter,   PromptKind::stage2_classify,
      PromptKind::stage3_generate, PromptKind::stage4_validate_qa,
      PromptKind::judge_criterion, PromptKind::judge_criterion_ref,
      PromptKind::judge_blind,     PromptKind::judge_reference,
  };
  return k;
}

inline const std::vector<std::string>& required_placeholders(PromptKind kind) {
  static const std::map<PromptKind, std::vector<std::string>> k = {
      {PromptKind::stage1_filter, {"document"}},
      {PromptKind::stage2_classify, {"document"}},
      {PromptKind::stage3_generate, {"document", "domain", "persona"}},
      {PromptKind::stage4_validate_qa, {"document", "question", "answer"}},
      {PromptKind::judge_criterion, {"question", "criterion", "response"}},
      {PromptKind::judge_criterion_ref, {"question", "criterion", "reference", "response"}},
      {PromptKind::judge_blind, {"question", "response"}},
      {PromptKind::judge_reference, {"question", "reference", "response"}},
  };
  return k.at(kind);
}

// Immutable prompt text with named {placeholder} slots. The version digest
// identifies the exact text in audit trails and run reports.
class PromptTemplate {
 public:
  PromptTemplate(PromptKind kind, std::string text)
      : kind_(kind), text_(std::move(text)), version_(sha256_hex16(text_)) {
    for (const std::string& name : required_placeholders(kind_)) {
      const std::string token = "{" + name + "}";
      auto first = text_.find(token);
      if (first == std::string::npos)
        throw TemplateError("template " + std::string(to_string(kind_)) +
                            " is missing placeholder " + token);
      if (text_.find(token, first + 1) != std::string::npos)
        throw TemplateError("template " + std::string(to_string(kind_)) +
                            " repeats placeholder " + token);
    }
  }

  PromptKind kind() const noexcept { return kind_; }
  const std::string& text() const noexcept { return text_; }
  const std::string& version() const noexcept { return version_; }

 private:
  PromptKind kind_;
  std::string text_;
  std::string version_;
};

using Bindings = std::map<std::string, std::string>;

struct RequestParams {
  std::string model;
  double temperature = 0.0;
  int max_output_tokens = 2048;
};

// Deterministic single-pass substitution: placeholder positions are located
// in the original template, so binding content is never re-scanned.
inline std::string render_text(const PromptTemplate& tmpl, const Bindings& bindings) {
  struct Slot {
    std::size_t pos;
    std::size_t len;
    const std::string* value;
  };
  std::vector<Slot> slots;
  for (const std::string& name : required_placeholders(tmpl.kind())) {
    auto it = bindings.find(name);
    if (it == bindings.end())
      throw TemplateError("missing binding {" + name + "} for template " +
                          std::string(to_string(tmpl.kind())));
    const std::string token = "{" + name + "}";
    slots.push_back({tmpl.text().find(token), token.size(), &it->second});
  }
  std::sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) { return a.pos < b.pos; });

  std::string out;
  out.reserve(tmpl.text().size());
  std::size_t cursor = 0;
  for (const Slot& slot : slots) {
    out.append(tmpl.text(), cursor, slot.pos - cursor);
    out.append(*slot.value);
    cursor = slot.pos + slot.len;
  }
  out.append(tmpl.text(), cursor, std::string::npos);
  return out;
}

inline ChatRequest render(const PromptTemplate& tmpl, const Bindings& bindings,
                          const RequestParams& params) {
  ChatRequest request;
  request.model = params.model;
  request.temperature = params.temperature;
  request.max_output_tokens = params.max_output_tokens;
  request.messages.push_back({"user", render_text(tmpl, bindings)});
  return request;
}

// ---------------------------------------------------------------------------
// Built-in prompt texts
// ---------------------------------------------------------------------------

namespace prompt_text {

inline constexpr std::string_view kStage1Filter = R"(You are a data quality analyst. You will be given material from diverse sources. Our goal is to generate question-answer pairs WITH evaluation rubrics from the material.

Identify whether the material is qualified for BOTH Q&A generation AND rubric creation based on these criteria:

Content Quality:
- The material is informative and factually accurate.
- It contains specific, verifiable information.
- It is self-contained enough to formulate clear questions.

Suitable for Rubric Generation:
- It contains concrete facts or concepts that can be evaluated objectively.
- It allows distinguishing between correct and incorrect answers.
- It has sufficient detail to create meaningful evaluation criteria.
- It provides clear standards such as numbers, dates, definitions, or procedures.

Unsuitable Materials: Pure opinion pieces without factual basis; overly vague or ambiguous content; lists without context; promotional content without informative value; content with unclear or disputed facts.

Output JSON: {"thought": "...", "qualified": "Y or N"}

Material:
{document}
)";

inline constexpr std::string_view kStage2Classify = R"(You are a helpful data analyst. You will be given material from a website which can come from very diverse sources and may not be well structured. Our final goal is to generate a question-answer pair from the material. In this stage, identify the domain and persona of the material.

Instructions:
- Choose one domain from: Math, Technology & Engineering, Coding, Social Science, Natural Science, Travel & Lifestyle, Commerce & Economics, Medicine & Health, Education, Other.
- If multiple domains apply, choose the most relevant primary domain.
- The persona is the intended audience of the material.
- If multiple personas apply, list up to three personas separated by ";".

Output JSON: {"thought": "...", "domain": "...", "persona": "..."}

Material:
{document}
)";

inline constexpr std::string_view kStage3Generate = R"(You will be given material from diverse sources. Your task is to: (1) Generate a question-answer pair from the material. (2) Generate evaluation rubrics based on question complexity.

Question & Answer Generation:
- Generate from the persona's perspective.
- Base the question and answer ONLY on the material content.
- The question must be clear and verifiable.
- The answer should be comprehensive based on the material depth.
- Add necessary background context because the material will not be provided during training.
- Never leak the answer in the question.

Evaluation Rubrics:
- Simple questions: 4-6 criteria for a single fact or concept.
- Medium questions: 6-10 criteria for multiple related points.
- Complex questions: 10-15 criteria for multifaceted answers with conditions, exceptions, or failure modes.

Scoring:
- Positive weights reward desirable answer properties.
- Negative weights penalize critical omissions, factual errors, or misleading statements.
- Each criterion should check one specific aspect.
- Scores should reflect the importance of that aspect in context.

Semantic Rubric Guidelines: Reference concrete concepts, facts, numbers, terms, or constraints from the material. Do not rely on exact string matching unless the task itself requires exact wording. Use negative criteria for common errors or important missing information.

Output JSON: {"thought": "...", "question": "...", "answer": "...", "rubrics": [{"criterion": "...", "points": 9}, {"criterion": "...", "points": 7}, {"criterion": "...", "points": -8}]}

Domain: {domain}
Persona: {persona}

Material:
{document}
)";

inline constexpr std::string_view kStage4ValidateQa = R"(You are a data quality checker for Q&A pairs that will be used to generate evaluation rubrics. Check the Q&A pair quality and assess its suitability for rubric generation.

Basic Q&A Checks:
- Context sufficiency: the question should be self-contained and should not require seeing the original material.
- Answer correctness: the answer must be factually correct according to the material and must not add unsupported information.
- Information leakage: the question should not explicitly reveal the answer.

Rubric Suitability:
- Determine whether the answer contains concrete, verifiable facts.
- Determine whether multiple aspects can be objectively evaluated.
- Determine whether clear standards exist for good and bad responses.
- Reject examples that are too short, purely subjective, vague, yes/no only, or lack specific details.

Output JSON: {"thought": "...", "has_context": "Y/N", "answer_correctness": "Y/N", "info_leakage": "Y/N", "question_complexity": "simple/medium/complex", "answer_detail_level": "low/medium/high", "rubric_suitable": "Y/N"}

Material:
{document}

Question: {question}
Answer: {answer}
)";

inline constexpr std::string_view kJudgeCriterion = R"(You are a strict grader. Given a question and one evaluation criterion, decide the degree to which the candidate response satisfies the criterion. Judge only the stated criterion, not overall quality. Reply with a score of 1 when the criterion is satisfied, 0 when it is not; fractional scores in between are allowed only for genuinely partial satisfaction.

Output JSON: {"thought": "...", "score": 0 or 1}

Question: {question}
Criterion: {criterion}
Candidate response:
{response}
)";

inline constexpr std::string_view kJudgeCriterionRef = R"(You are a strict grader. Given a question, its reference answer, and one evaluation criterion, decide the degree to which the candidate response satisfies the criterion. The reference answer is context for your judgment; grade the candidate response, not the reference. Reply with a score of 1 when the criterion is satisfied, 0 when it is not; fractional scores in between are allowed only for genuinely partial satisfaction.

Output JSON: {"thought": "...", "score": 0 or 1}

Question: {question}
Reference answer:
{reference}
Criterion: {criterion}
Candidate response:
{response}
)";

inline constexpr std::string_view kJudgeBlind = R"(You are an answer quality grader. Rate the overall quality of the candidate response to the question, considering correctness, completeness, and clarity. Reply with a single integer score from 0 (unusable) to 10 (excellent).

Output JSON: {"thought": "...", "score": 7}

Question: {question}
Candidate response:
{response}
)";

inline constexpr std::string_view kJudgeReference = R"(You are an answer similarity grader. Compare the candidate response with the reference answer and rate how well the response covers the reference content. Reply with a single integer score from 0 (no overlap) to 10 (full coverage).

Output JSON: {"thought": "...", "score": 7}

Question: {question}
Reference answer:
{reference}
Candidate response:
{response}
)";

}  // namespace prompt_text

// All templates for one run. Defaults are compiled in; a prompt directory
// (one .txt per kind) overrides them, which changes the version digests.
class TemplateSet {
 public:
  TemplateSet() {
    add(PromptKind::stage1_filter, std::string(prompt_text::kStage1Filter));
    add(PromptKind::stage2_classify, std::string(prompt_text::kStage2Classify));
    add(PromptKind::stage3_generate, std::string(prompt_text::kStage3Generate));
    add(PromptKind::stage4_validate_qa, std::string(prompt_text::kStage4ValidateQa));
    add(PromptKind::judge_criterion, std::string(prompt_text::kJudgeCriterion));
    add(PromptKind::judge_criterion_ref, std::string(prompt_text::kJudgeCriterionRef));
    add(PromptKind::judge_blind, std::string(prompt_text::kJudgeBlind));
    add(PromptKind::judge_reference, std::string(prompt_text::kJudgeReference));
  }

  // Loads <dir>/<kind>.txt for every kind; all files must exist.
  static TemplateSet from_directory(const std::string& dir) {
    TemplateSet set;
    for (PromptKind kind : all_prompt_kinds()) {
      std::filesystem::path path =
          std::filesystem::path(dir) / (std::string(to_string(kind)) + ".txt");
      std::ifstream in(path, std::ios::binary);
      if (!in) throw ConfigError("prompt asset missing: " + path.string());
      std::ostringstream buffer;
      buffer << in.rdbuf();
      set.add(kind, buffer.str());
    }
    return set;
  }

  const PromptTemplate& get(PromptKind kind) const { return templates_.at(kind); }

  // kind name -> version digest, embedded in run reports.
  std::map<std::string, std::string> digests() const {
    std::map<std::string, std::string> out;
    for (const auto& [kind, tmpl] : templates_) out[std::string(to_string(kind))] = tmpl.version();
    return out;
  }

 private:
  void add(PromptKind kind, std::string text) {
    templates_.insert_or_assign(kind, PromptTemplate(kind, std::move(text)));
  }

  std::map<PromptKind, PromptTemplate> templates_;
};

// ---------------------------------------------------------------------------
// Verdict parsing
// ---------------------------------------------------------------------------

struct FilterVerdict {
  bool qualified = false;
  std::string thought;
  std::vector<std::string> audit_notes;
};

struct ClassifyVerdict {
  DomainLabel domain = DomainLabel::must("Other");
  std::vector<std::string> personas;  // as replied; callers cap at 3
  std::string thought;
  std::vector<std::string> audit_notes;
};

enum class DetailLevel { low, medium, high };

inline std::optional<DetailLevel> parse_detail_level(std::string_view raw) {
  std::string v = to_lower(trim(raw));
  if (v == "low") return DetailLevel::low;
  if (v == "medium") return DetailLevel::medium;
  if (v == "high") return DetailLevel::high;
  return std::nullopt;
}

struct QaVerdict {
  bool has_context = false;
  bool answer_correctness = false;
  bool info_leakage = false;
  bool rubric_suitable = false;
  Complexity question_complexity = Complexity::simple;
  DetailLevel answer_detail_level = DetailLevel::medium;
  std::string thought;
  std::vector<std::string> audit_notes;
};

namespace detail {

inline const json& require_field(const json& obj, const char* field) {
  if (!obj.contains(field))
    throw SchemaError(std::string("missing required field: ") + field, field);
  return obj.at(field);
}

inline std::string field_as_string(const json& obj, const char* field) {
  const json& value = require_field(obj, field);
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number_integer()) return std::to_string(value.get<long long>());
  throw SchemaError(std::string("field has wrong type: ") + field, field);
}

// Closed set {Y, N}, case-insensitive after trimming.
inline bool parse_yes_no(const json& obj, const char* field) {
  std::string v = to_lower(trim(field_as_string(obj, field)));
  if (v == "y") return true;
  if (v == "n") return false;
  throw SchemaError(std::string("field ") + field + " must be Y or N, got: " + v, field);
}

inline void note_extra_fields(const json& obj, const std::vector<std::string>& known,
                              std::vector<std::string>& notes) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      notes.push_back("ignored extra field: " + it.key());
  }
}

}  // namespace detail

inline FilterVerdict parse_filter_verdict(const std::string& reply) {
  json obj = extract_json_object(reply);
  FilterVerdict verdict;
  verdict.qualified = detail::parse_yes_no(obj, "qualified");
  verdict.thought = obj.value("thought", "");
  detail::note_extra_fields(obj, {"qualified", "thought"}, verdict.audit_notes);
  return verdict;
}

inline ClassifyVerdict parse_classify_verdict(const std::string& reply) {
  json obj = extract_json_object(reply);
  ClassifyVerdict verdict;
  verdict.domain = DomainLabel::must(detail::field_as_string(obj, "domain"));

  const json& persona = detail::require_field(obj, "persona");
  if (persona.is_array()) {
    for (const json& p : persona)
      if (p.is_string() && !trim(p.get<std::string>()).empty())
        verdict.personas.push_back(trim(p.get<std::string>()));
  } else if (persona.is_string()) {
    for (const std::string& part : split(persona.get<std::string>(), ';'))
      if (!trim(part).empty()) verdict.personas.push_back(trim(part));
  } else {
    throw SchemaError("persona must be a string or list", "persona");
  }
  if (verdict.personas.empty()) throw SchemaError("no persona provided", "persona");

  verdict.thought = obj.value("thought", "");
  detail::note_extra_fields(obj, {"domain", "persona", "thought"}, verdict.audit_notes);
  return verdict;
}

inline QaVerdict parse_qa_verdict(const std::string& reply) {
  json obj = extract_json_object(reply);
  QaVerdict verdict;
  verdict.has_context = detail::parse_yes_no(obj, "has_context");
  verdict.answer_correctness = detail::parse_yes_no(obj, "answer_correctness");
  verdict.info_leakage = detail::parse_yes_no(obj, "info_leakage");
  verdict.rubric_suitable = detail::parse_yes_no(obj, "rubric_suitable");

  auto complexity = parse_complexity(detail::field_as_string(obj, "question_complexity"));
  if (!complexity)
    throw SchemaError("question_complexity must be simple/medium/complex", "question_complexity");
  verdict.question_complexity = *complexity;

  auto level = parse_detail_level(detail::field_as_string(obj, "answer_detail_level"));
  if (!level) throw SchemaError("answer_detail_level must be low/medium/high", "answer_detail_level");
  verdict.answer_detail_level = *level;

  verdict.thought = obj.value("thought", "");
  detail::note_extra_fields(obj,
                            {"has_context", "answer_correctness", "info_leakage",
                             "rubric_suitable", "question_complexity", "answer_detail_level",
                             "thought"},
                            verdict.audit_notes);
  return verdict;
}

}  // namespace rforge

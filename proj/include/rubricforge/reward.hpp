#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rubricforge/backend.hpp"
#include "rubricforge/core.hpp"
#include "rubricforge/errors.hpp"
#include "rubricforge/json_extract.hpp"
#include "rubricforge/prompts.hpp"

namespace rforge {

// ---------------------------------------------------------------------------
// Strategies
// ---------------------------------------------------------------------------

enum class RewardKind { rubric, blind_judge, general_rubric, reference_answer };

inline std::string_view to_string(RewardKind kind) {
  switch (kind) {
    case RewardKind::rubric: return "rubric";
    case RewardKind::blind_judge: return "blind";
    case RewardKind::general_rubric: return "general";
    case RewardKind::reference_answer: return "reference";
  }
  return "rubric";
}

inline std::optional<RewardKind> parse_reward_kind(std::string_view raw) {
  std::string v = to_lower(trim(raw));
  if (v == "rubric") return RewardKind::rubric;
  if (v == "blind" || v == "blind_judge") return RewardKind::blind_judge;
  if (v == "general" || v == "general_rubric") return RewardKind::general_rubric;
  if (v == "reference" || v == "reference_answer") return RewardKind::reference_answer;
  return std::nullopt;
}

// Generic criteria applied uniformly when no question-specific rubric is used.
inline std::vector<Criterion> default_general_criteria() {
  return {
      Criterion("The response is factually accurate.", 5),
      Criterion("The response addresses the question completely.", 5),
      Criterion("The response is clear and well organized.", 5),
  };
}

struct RewardStrategy {
  RewardKind kind = RewardKind::rubric;
  std::vector<Criterion> general_criteria;  // used only by general_rubric
  bool binary_mode = true;                  // round judge scores to {0,1}

  void validate() const {
    if (kind == RewardKind::general_rubric && general_criteria.empty())
      throw ConfigError("general_rubric strategy requires a non-empty criteria list");
  }
};

struct ScoredResponse {
  std::string instance_id;
  std::string response_text;
  std::vector<Judgment> judgments;  // empty for blind/reference
  double raw_reward = 0.0;
  double normalized_reward = 0.0;
};

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

// Binds the judge backend and prompt set used for scoring. All scoring calls
// are pure given a deterministic judge; nothing here mutates instances.
struct RewardEngine {
  BackendClient* client = nullptr;
  std::string judge_profile;
  const TemplateSet* templates = nullptr;
  RequestParams params;
  // Show the reference answer to the criterion judge (off by default).
  bool include_reference = false;

  void validate() const {
    if (client == nullptr || templates == nullptr)
      throw ConfigError("reward engine is missing a backend client or template set");
  }
};

namespace detail {

// One criterion-level judge call; reply must carry score in [0,1].
inline double judge_criterion_score(const RewardEngine& engine, const std::string& question,
                                    const std::string& response, const std::string& criterion,
                                    bool binary_mode, const std::string* reference) {
  Bindings bindings{{"question", question}, {"criterion", criterion}, {"response", response}};
  PromptKind kind = PromptKind::judge_criterion;
  if (engine.include_reference && reference != nullptr) {
    kind = PromptKind::judge_criterion_ref;
    bindings.emplace("reference", *reference);
  }
  ChatRequest request = render(engine.templates->get(kind), bindings, engine.params);
  ChatResponse reply;
  try {
    reply = engine.client->complete(engine.judge_profile, request);
  } catch (const Error& e) {
    throw ScoringError(std::string("judge call failed: ") + e.what());
  }
  json obj;
  try {
    obj = extract_json_object(reply.content);
  } catch (const DecodeError& e) {
    throw ScoringError(std::string("judge reply unparseable: ") + e.what());
  }
  if (!obj.contains("score") || !obj["score"].is_number())
    throw ScoringError("judge reply has no numeric score");
  double score = obj["score"].get<double>();
  if (!(score >= 0.0 && score <= 1.0))
    throw ScoringError("judge score outside [0,1]: " + std::to_string(score));
  if (binary_mode) score = score >= 0.5 ? 1.0 : 0.0;
  return score;
}

// Scalar 0-10 integer reply for blind/reference judging. Accepts a JSON
// object with an integer "score" or a bare integer; anything else errors.
inline int parse_scalar_score(const std::string& content) {
  json obj;
  bool have_object = true;
  try {
    obj = extract_json_object(content);
  } catch (const DecodeError&) {
    have_object = false;
  }
  long long value = 0;
  if (have_object) {
    if (!obj.contains("score")) throw ScoringError("judge reply has no score field");
    const json& score = obj["score"];
    if (!score.is_number_integer())
      throw ScoringError("judge score must be an integer, got: " + score.dump());
    value = score.get<long long>();
  } else {
    const std::string text = trim(content);
    if (text.empty()) throw ScoringError("judge reply is empty");
    std::size_t i = (text[0] == '+' || text[0] == '-') ? 1 : 0;
    if (i == text.size()) throw ScoringError("judge reply is not an integer: " + text);
    for (std::size_t k = i; k < text.size(); ++k)
      if (text[k] < '0' || text[k] > '9')
        throw ScoringError("judge reply is not an integer: " + text);
    value = std::stoll(text);
  }
  if (value < 0 || value > 10)
    throw ScoringError("judge score outside 0..10: " + std::to_string(value));
  return static_cast<int>(value);
}

inline ScoredResponse score_against_criteria(const RewardEngine& engine,
                                             const std::string& instance_id,
                                             const std::string& question,
                                             const std::string& response,
                                             const std::vector<Criterion>& criteria,
                                             bool binary_mode,
                                             const std::string* reference = nullptr) {
  ScoredResponse out;
  out.instance_id = instance_id;
  out.response_text = response;
  long long positive_sum = 0;
  long long negative_sum = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const Criterion& c = criteria[k];
    if (c.weight() > 0)
      positive_sum += c.weight();
    else
      negative_sum += c.weight();
    const double score =
        judge_criterion_score(engine, question, response, c.text(), binary_mode, reference);
    out.judgments.emplace_back(k, score);
    out.raw_reward += static_cast<double>(c.weight()) * score;
  }
  out.normalized_reward = (out.raw_reward - static_cast<double>(negative_sum)) /
                          static_cast<double>(positive_sum - negative_sum);
  return out;
}

}  // namespace detail

// Question-specific rubric reward: one judge call per criterion,
// raw = sum(w_k * score_k), normalized onto [0,1] by the attainable range.
inline ScoredResponse score_rubric(const RewardEngine& engine, const Instance& instance,
                                   const std::string& response, bool binary_mode = true) {
  engine.validate();
  return detail::score_against_criteria(engine, instance.id, instance.question, response,
                                        instance.rubric.criteria(), binary_mode,
                                        &instance.reference_answer);
}

// Holistic 0-10 integer judgment without a rubric; normalized = raw / 10.
inline ScoredResponse score_blind(const RewardEngine& engine, const std::string& instance_id,
                                  const std::string& question, const std::string& response) {
  engine.validate();
  ChatRequest request = render(engine.templates->get(PromptKind::judge_blind),
                               {{"question", question}, {"response", response}}, engine.params);
  ChatResponse reply;
  try {
    reply = engine.client->complete(engine.judge_profile, request);
  } catch (const Error& e) {
    throw ScoringError(std::string("judge call failed: ") + e.what());
  }
  ScoredResponse out;
  out.instance_id = instance_id;
  out.response_text = response;
  out.raw_reward = detail::parse_scalar_score(reply.content);
  out.normalized_reward = out.raw_reward / 10.0;
  return out;
}

// Fixed generic criteria applied uniformly to all questions.
inline ScoredResponse score_general_rubric(const RewardEngine& engine,
                                           const std::string& instance_id,
                                           const std::string& question,
                                           const std::string& response,
                                           const RewardStrategy& strategy) {
  engine.validate();
  strategy.validate();
  if (strategy.kind != RewardKind::general_rubric)
    throw ConfigError("score_general_rubric requires a general_rubric strategy");
  return detail::score_against_criteria(engine, instance_id, question, response,
                                        strategy.general_criteria, strategy.binary_mode);
}

// Similarity/coverage 0-10 integer against the reference answer.
inline ScoredResponse score_reference(const RewardEngine& engine, const std::string& instance_id,
                                      const std::string& question, const std::string& response,
                                      const std::string& reference_answer) {
  engine.validate();
  ChatRequest request = render(engine.templates->get(PromptKind::judge_reference),
                               {{"question", question}, {"reference", reference_answer},
                                {"response", response}},
                               engine.params);
  ChatResponse reply;
  try {
    reply = engine.client->complete(engine.judge_profile, request);
  } catch (const Error& e) {
    throw ScoringError(std::string("judge call failed: ") + e.what());
  }
  ScoredResponse out;
  out.instance_id = instance_id;
  out.response_text = response;
  out.raw_reward = detail::parse_scalar_score(reply.content);
  out.normalized_reward = out.raw_reward / 10.0;
  return out;
}

// Dispatch by strategy kind over a full instance.
inline ScoredResponse score_response(const RewardEngine& engine, const RewardStrategy& strategy,
                                     const Instance& instance, const std::string& response) {
  switch (strategy.kind) {
    case RewardKind::rubric:
      return score_rubric(engine, instance, response, strategy.binary_mode);
    case RewardKind::blind_judge:
      return score_blind(engine, instance.id, instance.question, response);
    case RewardKind::general_rubric:
      return score_general_rubric(engine, instance.id, instance.question, response, strategy);
    case RewardKind::reference_answer:
      return score_reference(engine, instance.id, instance.question, response,
                             instance.reference_answer);
  }
  throw ConfigError("unknown reward strategy");
}

inline json scored_to_json(const ScoredResponse& scored) {
  json judgments = json::array();
  for (const Judgment& j : scored.judgments)
    judgments.push_back({{"criterion_index", j.criterion_index}, {"score", j.score}});
  return json{
      {"instance_id", scored.instance_id},
      {"response_text", scored.response_text},
      {"judgments", std::move(judgments)},
      {"raw_reward", scored.raw_reward},
      {"normalized_reward", scored.normalized_reward},
  };
}

}  // namespace rforge

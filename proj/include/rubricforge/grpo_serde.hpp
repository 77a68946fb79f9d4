#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rubricforge/core.hpp"
#include "rubricforge/errors.hpp"
#include "rubricforge/grpo.hpp"
#include "rubricforge/json_extract.hpp"

namespace rforge {

inline RolloutGroup rollout_group_from_json(const json& obj) {
  RolloutGroup group;
  if (!obj.contains("question_id") || !obj.contains("responses"))
    throw ValidationError("rollout group needs question_id and responses");
  group.question_id = obj["question_id"].get<std::string>();
  if (!obj["responses"].is_array())
    throw ValidationError("responses must be a list: " + group.question_id);
  for (const json& entry : obj["responses"]) {
    RolloutResponse response;
    response.text = entry.value("text", "");
    if (!entry.contains("reward") || !entry["reward"].is_number())
      throw ValidationError("response needs a numeric reward: " + group.question_id);
    response.reward = entry["reward"].get<double>();
    for (const char* key : {"logprobs_current", "logprobs_behavior", "logprobs_reference"})
      if (!entry.contains(key) || !entry[key].is_array())
        throw ValidationError(std::string("response needs list ") + key + ": " +
                              group.question_id);
    response.logprobs_current = entry["logprobs_current"].get<std::vector<double>>();
    response.logprobs_behavior = entry["logprobs_behavior"].get<std::vector<double>>();
    response.logprobs_reference = entry["logprobs_reference"].get<std::vector<double>>();
    group.responses.push_back(std::move(response));
  }
  return group;
}

inline json rollout_group_to_json(const RolloutGroup& group) {
  json responses = json::array();
  for (const RolloutResponse& r : group.responses)
    responses.push_back({{"text", r.text},
                         {"reward", r.reward},
                         {"logprobs_current", r.logprobs_current},
                         {"logprobs_behavior", r.logprobs_behavior},
                         {"logprobs_reference", r.logprobs_reference}});
  return json{{"question_id", group.question_id}, {"responses", std::move(responses)}};
}

inline json breakdown_to_json(const ObjectiveBreakdown& breakdown,
                              const std::string& question_id) {
  json per_response = json::array();
  for (const ResponseBreakdown& rb : breakdown.per_response) {
    json entry{{"rho", rb.rho},
               {"advantage", rb.advantage},
               {"clipped_term", rb.clipped},
               {"kl", rb.kl}};
    if (rb.rho_clamped) entry["rho_clamped"] = true;
    per_response.push_back(std::move(entry));
  }
  return json{
      {"question_id", question_id},
      {"surrogate_mean", breakdown.surrogate_mean},
      {"kl_mean", breakdown.kl_mean},
      {"objective", breakdown.objective},
      {"per_response", std::move(per_response)},
  };
}

}  // namespace rforge

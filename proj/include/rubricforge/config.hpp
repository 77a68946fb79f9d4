#pragma once

#include <cstdint>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rubricforge/backend.hpp"
#include "rubricforge/core.hpp"
#include "rubricforge/dataops.hpp"
#include "rubricforge/errors.hpp"
#include "rubricforge/mock_backend.hpp"
#include "rubricforge/pipeline.hpp"
#include "rubricforge/prompts.hpp"

namespace rforge {

// One structured config file drives every command. Environment variables
// override credentials only (via each profile's api_key_env).
struct RunConfig {
  std::uint64_t seed = 42;
  std::string out_dir = "out";
  std::vector<std::string> inputs;
  int workers = 1;
  int persona_fanout = 1;
  bool binary_mode = true;
  bool include_reference_in_judge = false;
  std::string prompts_dir;          // empty: built-in templates
  std::string eval_questions_path;  // empty: no eval-overlap screening
  std::string cache_file;           // empty: in-memory cache only

  bool mock = true;
  MockScript mock_script;

  BackendProfile generator_profile;
  BackendProfile classifier_profile;
  BackendProfile judge_profile;
  RequestParams generator_params{"generator", 0.7, 4096};
  RequestParams classifier_params{"classifier", 0.0, 2048};
  RequestParams judge_params{"judge", 0.0, 1024};

  DedupPolicy dedup;
  GrpoConfig grpo;

  RunConfig() {
    generator_profile.name = "generator";
    generator_profile.role = BackendRole::generator;
    classifier_profile.name = "classifier";
    classifier_profile.role = BackendRole::classifier;
    judge_profile.name = "judge";
    judge_profile.role = BackendRole::judge;
  }
};

namespace detail {

inline void reject_unknown_keys(const json& obj, const std::vector<std::string>& known,
                                const std::string& section) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const std::string& key : known) ok = ok || it.key() == key;
    if (!ok) throw ConfigError("unknown config key: " + section + it.key());
  }
}

inline void parse_profile(const json& obj, const std::string& section, BackendProfile& profile,
                          RequestParams& params) {
  reject_unknown_keys(obj,
                      {"endpoint_url", "api_key_env", "model", "temperature",
                       "max_output_tokens", "max_concurrency", "retry"},
                      section);
  profile.endpoint_url = obj.value("endpoint_url", profile.endpoint_url);
  profile.api_key_env = obj.value("api_key_env", profile.api_key_env);
  profile.max_concurrency = obj.value("max_concurrency", profile.max_concurrency);
  if (obj.contains("retry")) {
    reject_unknown_keys(obj["retry"], {"max_attempts", "base_backoff_ms"}, section + "retry.");
    profile.retry.max_attempts = obj["retry"].value("max_attempts", profile.retry.max_attempts);
    profile.retry.base_backoff_ms =
        obj["retry"].value("base_backoff_ms", profile.retry.base_backoff_ms);
  }
  params.model = obj.value("model", params.model);
  params.temperature = obj.value("temperature", params.temperature);
  params.max_output_tokens = obj.value("max_output_tokens", params.max_output_tokens);
}

inline void parse_mock_script(const json& obj, MockScript& script) {
  reject_unknown_keys(obj,
                      {"enabled", "filter_reject_rate", "qa_no_context_rate",
                       "qa_wrong_answer_rate", "qa_info_leakage_rate",
                       "qa_rubric_unsuitable_rate", "rubric_shape", "negative_fraction",
                       "persona_count", "judge_mode", "judge_constant", "blind_score",
                       "reference_mid_score"},
                      "mock.");
  script.filter_reject_rate = obj.value("filter_reject_rate", script.filter_reject_rate);
  script.qa_no_context_rate = obj.value("qa_no_context_rate", script.qa_no_context_rate);
  script.qa_wrong_answer_rate = obj.value("qa_wrong_answer_rate", script.qa_wrong_answer_rate);
  script.qa_info_leakage_rate = obj.value("qa_info_leakage_rate", script.qa_info_leakage_rate);
  script.qa_rubric_unsuitable_rate =
      obj.value("qa_rubric_unsuitable_rate", script.qa_rubric_unsuitable_rate);
  if (obj.contains("rubric_shape")) {
    const std::string shape = obj["rubric_shape"].get<std::string>();
    if (shape == "banded")
      script.rubric_shape = MockScript::RubricShape::banded;
    else if (shape == "table3")
      script.rubric_shape = MockScript::RubricShape::table3;
    else
      throw ConfigError("mock.rubric_shape must be banded or table3");
  }
  script.negative_fraction = obj.value("negative_fraction", script.negative_fraction);
  script.persona_count = obj.value("persona_count", script.persona_count);
  if (obj.contains("judge_mode")) {
    const std::string mode = obj["judge_mode"].get<std::string>();
    if (mode == "substring")
      script.judge_mode = MockScript::JudgeMode::substring;
    else if (mode == "constant")
      script.judge_mode = MockScript::JudgeMode::constant;
    else
      throw ConfigError("mock.judge_mode must be substring or constant");
  }
  script.judge_constant = obj.value("judge_constant", script.judge_constant);
  script.blind_score = obj.value("blind_score", script.blind_score);
  script.reference_mid_score = obj.value("reference_mid_score", script.reference_mid_score);
}

}  // namespace detail

inline RunConfig config_from_json(const json& obj) {
  RunConfig config;
  detail::reject_unknown_keys(
      obj,
      {"seed", "out_dir", "inputs", "workers", "persona_fanout", "binary_mode",
       "include_reference_in_judge", "prompts_dir", "eval_questions", "cache_file", "mock",
       "backends", "dedup", "grpo"},
      "");
  config.seed = obj.value("seed", config.seed);
  config.out_dir = obj.value("out_dir", config.out_dir);
  if (obj.contains("inputs")) config.inputs = obj["inputs"].get<std::vector<std::string>>();
  config.workers = obj.value("workers", config.workers);
  config.persona_fanout = obj.value("persona_fanout", config.persona_fanout);
  config.binary_mode = obj.value("binary_mode", config.binary_mode);
  config.include_reference_in_judge =
      obj.value("include_reference_in_judge", config.include_reference_in_judge);
  config.prompts_dir = obj.value("prompts_dir", config.prompts_dir);
  config.eval_questions_path = obj.value("eval_questions", config.eval_questions_path);
  config.cache_file = obj.value("cache_file", config.cache_file);

  if (obj.contains("mock")) {
    config.mock = obj["mock"].value("enabled", true);
    detail::parse_mock_script(obj["mock"], config.mock_script);
  }
  if (obj.contains("backends")) {
    detail::reject_unknown_keys(obj["backends"], {"generator", "classifier", "judge"},
                                "backends.");
    if (obj["backends"].contains("generator"))
      detail::parse_profile(obj["backends"]["generator"], "backends.generator.",
                            config.generator_profile, config.generator_params);
    if (obj["backends"].contains("classifier"))
      detail::parse_profile(obj["backends"]["classifier"], "backends.classifier.",
                            config.classifier_profile, config.classifier_params);
    if (obj["backends"].contains("judge"))
      detail::parse_profile(obj["backends"]["judge"], "backends.judge.",
                            config.judge_profile, config.judge_params);
  }
  if (obj.contains("dedup")) {
    detail::reject_unknown_keys(obj["dedup"], {"ngram_size", "jaccard_threshold"}, "dedup.");
    config.dedup.ngram_size = obj["dedup"].value("ngram_size", config.dedup.ngram_size);
    config.dedup.jaccard_threshold =
        obj["dedup"].value("jaccard_threshold", config.dedup.jaccard_threshold);
  }
  if (obj.contains("grpo")) {
    detail::reject_unknown_keys(
        obj["grpo"], {"group_size", "clip_epsilon", "kl_beta", "advantage_epsilon"}, "grpo.");
    config.grpo.group_size = obj["grpo"].value("group_size", config.grpo.group_size);
    config.grpo.clip_epsilon = obj["grpo"].value("clip_epsilon", config.grpo.clip_epsilon);
    config.grpo.kl_beta = obj["grpo"].value("kl_beta", config.grpo.kl_beta);
    config.grpo.advantage_epsilon =
        obj["grpo"].value("advantage_epsilon", config.grpo.advantage_epsilon);
  }

  if (config.workers < 1) throw ConfigError("workers must be >= 1");
  if (config.persona_fanout < 1 || config.persona_fanout > 3)
    throw ConfigError("persona_fanout must lie in 1..3");
  config.dedup.validate();
  config.grpo.validate();
  return config;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config: " + path);
  json obj = json::parse(in, nullptr, false);
  if (obj.is_discarded()) throw ConfigError("config is not valid JSON: " + path);
  if (!obj.is_object()) throw ConfigError("config root must be a JSON object: " + path);
  return config_from_json(obj);
}

// Fully-resolved echo embedded in run reports; reproduces the run together
// with the input files and prompt digests.
inline json config_to_json(const RunConfig& config) {
  auto profile_json = [](const BackendProfile& profile, const RequestParams& params) {
    return json{
        {"endpoint_url", profile.endpoint_url},
        {"api_key_env", profile.api_key_env},
        {"model", params.model},
        {"temperature", params.temperature},
        {"max_output_tokens", params.max_output_tokens},
        {"max_concurrency", profile.max_concurrency},
        {"retry",
         {{"max_attempts", profile.retry.max_attempts},
          {"base_backoff_ms", profile.retry.base_backoff_ms}}},
    };
  };
  return json{
      {"seed", config.seed},
      {"out_dir", config.out_dir},
      {"inputs", config.inputs},
      {"workers", config.workers},
      {"persona_fanout", config.persona_fanout},
      {"binary_mode", config.binary_mode},
      {"include_reference_in_judge", config.include_reference_in_judge},
      {"prompts_dir", config.prompts_dir},
      {"eval_questions", config.eval_questions_path},
      {"cache_file", config.cache_file},
      {"mock",
       {{"enabled", config.mock},
        {"filter_reject_rate", config.mock_script.filter_reject_rate},
        {"qa_no_context_rate", config.mock_script.qa_no_context_rate},
        {"qa_wrong_answer_rate", config.mock_script.qa_wrong_answer_rate},
        {"qa_info_leakage_rate", config.mock_script.qa_info_leakage_rate},
        {"qa_rubric_unsuitable_rate", config.mock_script.qa_rubric_unsuitable_rate},
        {"rubric_shape",
         config.mock_script.rubric_shape == MockScript::RubricShape::table3 ? "table3"
                                                                            : "banded"},
        {"negative_fraction", config.mock_script.negative_fraction},
        {"persona_count", config.mock_script.persona_count},
        {"judge_mode",
         config.mock_script.judge_mode == MockScript::JudgeMode::constant ? "constant"
                                                                          : "substring"},
        {"judge_constant", config.mock_script.judge_constant},
        {"blind_score", config.mock_script.blind_score},
        {"reference_mid_score", config.mock_script.reference_mid_score}}},
      {"backends",
       {{"generator", profile_json(config.generator_profile, config.generator_params)},
        {"classifier", profile_json(config.classifier_profile, config.classifier_params)},
        {"judge", profile_json(config.judge_profile, config.judge_params)}}},
      {"dedup",
       {{"ngram_size", config.dedup.ngram_size},
        {"jaccard_threshold", config.dedup.jaccard_threshold}}},
      {"grpo",
       {{"group_size", config.grpo.group_size},
        {"clip_epsilon", config.grpo.clip_epsilon},
        {"kl_beta", config.grpo.kl_beta},
        {"advantage_epsilon", config.grpo.advantage_epsilon}}},
  };
}

inline std::vector<std::string> parse_eval_questions(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::vector<std::string> questions;
  std::string line;
  while (std::getline(in, line))
    if (!trim_view(line).empty()) questions.push_back(trim(line));
  return questions;
}

}  // namespace rforge

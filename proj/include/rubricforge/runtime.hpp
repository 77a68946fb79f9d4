#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <utility>

#include "rubricforge/backend.hpp"
#include "rubricforge/config.hpp"
#include "rubricforge/errors.hpp"
#include "rubricforge/http_backend.hpp"
#include "rubricforge/mock_backend.hpp"
#include "rubricforge/pipeline.hpp"
#include "rubricforge/prompts.hpp"
#include "rubricforge/reward.hpp"

namespace rforge {

// Everything a command needs wired from one RunConfig: templates, transports
// behind a caching client, and pre-bound stage/reward contexts.
class Runtime {
 public:
  explicit Runtime(RunConfig config) : config_(std::move(config)) {
    templates_ = config_.prompts_dir.empty() ? TemplateSet()
                                             : TemplateSet::from_directory(config_.prompts_dir);
    client_ = std::make_unique<BackendClient>(config_.cache_file);
    if (config_.mock) {
      mock_ = std::make_shared<MockBackend>(config_.seed, config_.mock_script);
      client_->register_backend(config_.generator_profile, mock_);
      client_->register_backend(config_.classifier_profile, mock_);
      client_->register_backend(config_.judge_profile, mock_);
    } else {
      for (const BackendProfile* profile :
           {&config_.generator_profile, &config_.classifier_profile, &config_.judge_profile}) {
        if (profile->endpoint_url.empty())
          throw ConfigError("backend " + profile->name +
                            " has no endpoint_url; configure backends or enable mock");
        client_->register_backend(*profile, std::make_shared<HttpBackend>(*profile));
      }
    }
  }

  const RunConfig& config() const noexcept { return config_; }
  const TemplateSet& templates() const noexcept { return templates_; }
  BackendClient& client() noexcept { return *client_; }
  const std::shared_ptr<MockBackend>& mock() const noexcept { return mock_; }

  StageContext stage_context() const {
    StageContext ctx;
    ctx.client = client_.get();
    ctx.templates = &templates_;
    ctx.generator_profile = config_.generator_profile.name;
    ctx.classifier_profile = config_.classifier_profile.name;
    ctx.generator_params = config_.generator_params;
    ctx.classifier_params = config_.classifier_params;
    return ctx;
  }

  RewardEngine reward_engine() const {
    RewardEngine engine;
    engine.client = client_.get();
    engine.judge_profile = config_.judge_profile.name;
    engine.templates = &templates_;
    engine.params = config_.judge_params;
    engine.include_reference = config_.include_reference_in_judge;
    return engine;
  }

  PipelineOptions pipeline_options() const {
    PipelineOptions options;
    options.persona_fanout = config_.persona_fanout;
    options.workers = config_.workers;
    options.dedup = config_.dedup;
    if (!config_.eval_questions_path.empty())
      options.eval_questions = parse_eval_questions(config_.eval_questions_path);
    return options;
  }

 private:
  RunConfig config_;
  TemplateSet templates_;
  std::shared_ptr<MockBackend> mock_;
  std::unique_ptr<BackendClient> client_;
};

inline void write_report(const RunReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << report_to_json(report).dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

// Audit files, rejection ledger view, training file, and report for one run.
inline void write_run_outputs(const PipelineResult& result, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  write_stage_records(result.stage1, (dir / stage_file_name(Stage::filter)).string());
  write_stage_records(result.stage2, (dir / stage_file_name(Stage::classify)).string());
  write_stage_records(result.stage3, (dir / stage_file_name(Stage::generate)).string());
  write_stage_records(result.stage4, (dir / stage_file_name(Stage::validate_qa)).string());
  write_stage_records(result.stage5, (dir / stage_file_name(Stage::validate_rubric)).string());
  write_stage_records(result.stage6, (dir / stage_file_name(Stage::finalize)).string());
  serialize_training(result.instances, (dir / "training.jsonl").string());
  write_report(result.report, (dir / "report.json").string());
}

}  // namespace rforge

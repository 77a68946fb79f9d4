// Operator entry point: per-stage commands, end-to-end runs, reward scoring,
// objective batch checks, and dataset utilities. Logs go to stderr; data goes
// to files or stdout so commands compose in shells.
//
// Exit codes: 0 success, 2 config error, 3 I/O error, 4 backend exhaustion.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "rubricforge/rubricforge.hpp"
#include "rubricforge/score_server.hpp"

namespace fs = std::filesystem;
using namespace rforge;

namespace {

struct CliState {
  std::string config_path;
  std::string input;
  std::string out;
  std::string instances_path;
  std::string strategy = "rubric";
  std::string eval_path;
  long long seed = -1;
  int workers = 0;
  int port = 8080;
  bool mock = false;
};

RunConfig resolve_config(const CliState& state) {
  RunConfig config = state.config_path.empty() ? RunConfig{} : load_config(state.config_path);
  if (state.seed >= 0) config.seed = static_cast<std::uint64_t>(state.seed);
  if (!state.out.empty()) config.out_dir = state.out;
  if (state.workers > 0) config.workers = state.workers;
  if (state.mock) config.mock = true;
  if (!state.input.empty()) config.inputs = {state.input};
  if (!state.eval_path.empty()) config.eval_questions_path = state.eval_path;
  return config;
}

std::vector<Document> load_documents(const RunConfig& config) {
  if (config.inputs.empty())
    throw ConfigError("no input documents; pass --input or set inputs in the config");
  std::vector<Document> docs;
  for (const std::string& path : config.inputs) {
    std::vector<Document> part = parse_documents(path);
    docs.insert(docs.end(), std::make_move_iterator(part.begin()),
                std::make_move_iterator(part.end()));
  }
  // Re-check uniqueness across files.
  std::set<std::string> ids;
  for (const Document& doc : docs)
    if (!ids.insert(doc.id).second) throw ValidationError("duplicate document id: " + doc.id);
  return docs;
}

std::string default_stage_input(const RunConfig& config, Stage upstream) {
  return (fs::path(config.out_dir) / stage_file_name(upstream)).string();
}

void log_counts(const std::string& name, const std::vector<StageRecord>& records) {
  StageCounts counts = tally(records);
  std::cerr << name << ": entered=" << counts.entered << " accepted=" << counts.accepted
            << " rejected=" << counts.rejected << " errored=" << counts.errored << '\n';
}

void write_stage_output(const RunConfig& config, Stage stage,
                        const std::vector<StageRecord>& records) {
  fs::create_directories(config.out_dir);
  const std::string path = (fs::path(config.out_dir) / stage_file_name(stage)).string();
  write_stage_records(records, path);
  log_counts(std::string(to_string(stage)), records);
  std::cerr << "wrote " << path << '\n';
}

std::vector<StageRecord> read_stage_input(const CliState& state, const RunConfig& config,
                                          Stage upstream) {
  const std::string path =
      state.input.empty() ? default_stage_input(config, upstream) : state.input;
  return parse_stage_records(path);
}

std::vector<StageRecord> read_stage_if_present(const RunConfig& config, Stage stage) {
  const std::string path = default_stage_input(config, stage);
  if (!fs::exists(path)) return {};
  return parse_stage_records(path);
}

RewardStrategy make_strategy(const CliState& state, const RunConfig& config) {
  auto kind = parse_reward_kind(state.strategy);
  if (!kind) throw ConfigError("unknown strategy: " + state.strategy);
  RewardStrategy strategy;
  strategy.kind = *kind;
  strategy.binary_mode = config.binary_mode;
  if (strategy.kind == RewardKind::general_rubric)
    strategy.general_criteria = default_general_criteria();
  return strategy;
}

int run_command(const std::string& command, const CliState& state) {
  RunConfig config = resolve_config(state);

  if (command == "filter") {
    Runtime runtime(config);
    StageContext ctx = runtime.stage_context();
    write_stage_output(config, Stage::filter,
                       run_stage1(load_documents(config), ctx, config.workers));
    return 0;
  }
  if (command == "classify") {
    Runtime runtime(config);
    StageContext ctx = runtime.stage_context();
    auto upstream = read_stage_input(state, config, Stage::filter);
    write_stage_output(config, Stage::classify, run_stage2(upstream, ctx, config.workers));
    return 0;
  }
  if (command == "generate") {
    Runtime runtime(config);
    StageContext ctx = runtime.stage_context();
    auto upstream = read_stage_input(state, config, Stage::classify);
    write_stage_output(config, Stage::generate,
                       run_stage3(upstream, ctx, config.persona_fanout, config.workers));
    return 0;
  }
  if (command == "validate-qa") {
    Runtime runtime(config);
    StageContext ctx = runtime.stage_context();
    auto upstream = read_stage_input(state, config, Stage::generate);
    write_stage_output(config, Stage::validate_qa, run_stage4(upstream, ctx, config.workers));
    return 0;
  }
  if (command == "validate-rubric") {
    auto upstream = read_stage_input(state, config, Stage::validate_qa);
    write_stage_output(config, Stage::validate_rubric, run_stage5(upstream));
    return 0;
  }
  if (command == "finalize") {
    Runtime runtime(config);
    PipelineResult result;
    result.stage1 = read_stage_if_present(config, Stage::filter);
    result.stage2 = read_stage_if_present(config, Stage::classify);
    result.stage3 = read_stage_if_present(config, Stage::generate);
    result.stage4 = read_stage_if_present(config, Stage::validate_qa);
    result.stage5 = state.input.empty()
                        ? read_stage_if_present(config, Stage::validate_rubric)
                        : parse_stage_records(state.input);
    FinalizeResult finalized = stage6_finalize(result.stage5, runtime.pipeline_options());
    result.stage6 = std::move(finalized.records);
    result.instances = std::move(finalized.instances);
    result.report = assemble_report(result, runtime.templates());
    result.report.config_echo = config_to_json(config);

    fs::create_directories(config.out_dir);
    write_stage_records(result.stage6,
                        (fs::path(config.out_dir) / stage_file_name(Stage::finalize)).string());
    serialize_training(result.instances,
                       (fs::path(config.out_dir) / "training.jsonl").string());
    write_report(result.report, (fs::path(config.out_dir) / "report.json").string());
    std::cerr << "wrote " << config.out_dir << "/training.jsonl, report.json\n";
    std::cout << render_report_summary(result.report);
    return 0;
  }
  if (command == "run") {
    Runtime runtime(config);
    StageContext ctx = runtime.stage_context();
    PipelineResult result =
        run_pipeline(load_documents(config), ctx, runtime.pipeline_options());
    result.report.config_echo = config_to_json(config);
    write_run_outputs(result, config.out_dir);
    std::cerr << "wrote " << config.out_dir << "/training.jsonl, report.json\n";
    std::cout << render_report_summary(result.report);
    return 0;
  }
  if (command == "score") {
    if (state.instances_path.empty())
      throw ConfigError("score requires --instances <training.jsonl>");
    if (state.input.empty()) throw ConfigError("score requires --input <responses.jsonl>");
    Runtime runtime(config);
    RewardEngine engine = runtime.reward_engine();
    RewardStrategy strategy = make_strategy(state, config);

    std::vector<Instance> instances = parse_training(state.instances_path);
    std::map<std::string, const Instance*> index;
    for (const Instance& inst : instances) index.emplace(inst.id, &inst);

    std::ifstream in(state.input, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + state.input);
    std::vector<json> requests;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim_view(line).empty()) continue;
      json rec = json::parse(line, nullptr, false);
      if (rec.is_discarded() || !rec.contains("instance_id") || !rec.contains("response"))
        throw ParseError(state.input + ": bad record on line " + std::to_string(line_no),
                         line_no);
      requests.push_back(std::move(rec));
    }

    auto lines = rforge::detail::parallel_map(requests, config.workers, [&](const json& rec) {
      const std::string id = rec["instance_id"].get<std::string>();
      auto it = index.find(id);
      if (it == index.end())
        return json{{"instance_id", id}, {"error", "unknown instance"}}.dump();
      try {
        return scored_to_json(score_response(engine, strategy, *it->second,
                                             rec["response"].get<std::string>()))
            .dump();
      } catch (const Error& e) {
        return json{{"instance_id", id}, {"error", e.what()}}.dump();
      }
    });
    for (const std::string& out_line : lines) std::cout << out_line << '\n';
    return 0;
  }
  if (command == "score-serve") {
    if (state.instances_path.empty())
      throw ConfigError("score-serve requires --instances <training.jsonl>");
    Runtime runtime(config);
    ScoreServer server(parse_training(state.instances_path), runtime.reward_engine(),
                       make_strategy(state, config));
    const int port = server.start("0.0.0.0", state.port);
    std::cerr << "score server listening on port " << port << '\n';
    server.listen_after_bind();
    return 0;
  }
  if (command == "grpo-check") {
    if (state.input.empty()) throw ConfigError("grpo-check requires --input <groups.jsonl>");
    std::ifstream in(state.input, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + state.input);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim_view(line).empty()) continue;
      json rec = json::parse(line, nullptr, false);
      if (rec.is_discarded())
        throw ParseError(state.input + ": malformed JSON on line " + std::to_string(line_no),
                         line_no);
      std::string question_id = rec.is_object() ? rec.value("question_id", "") : "";
      try {
        RolloutGroup group = rollout_group_from_json(rec);
        std::cout << breakdown_to_json(grpo_objective(group, config.grpo), group.question_id)
                         .dump()
                  << '\n';
      } catch (const Error& e) {
        std::cout << json{{"question_id", question_id}, {"error", e.what()}}.dump() << '\n';
      }
    }
    return 0;
  }
  if (command == "stats") {
    if (state.input.empty()) throw ConfigError("stats requires --input <training.jsonl>");
    DatasetStats stats = compute_stats(parse_training(state.input));
    std::cout << stats_to_json(stats).dump(2) << '\n';
    std::cerr << render_stats_table(stats);
    return 0;
  }
  if (command == "dedup") {
    if (state.input.empty()) throw ConfigError("dedup requires --input <training.jsonl>");
    DedupResult result = dedup(parse_training(state.input), config.dedup);
    fs::create_directories(config.out_dir);
    serialize_training(result.kept, (fs::path(config.out_dir) / "deduped.jsonl").string());
    std::ofstream removed((fs::path(config.out_dir) / "removed.jsonl").string(),
                          std::ios::binary);
    if (!removed) throw IoError("cannot open for writing: removed.jsonl");
    for (const RemovalRecord& record : result.removed)
      removed << json{{"id", record.id}, {"reason", record.reason}, {"matched", record.matched}}
                     .dump()
              << '\n';
    std::cerr << "kept " << result.kept.size() << ", removed " << result.removed.size() << '\n';
    return 0;
  }
  throw ConfigError("unknown command: " + command);
}

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::config:
    case ErrorKind::template_render:
      return 2;
    case ErrorKind::io:
    case ErrorKind::parse:
    case ErrorKind::validation:
      return 3;
    case ErrorKind::transport:
      return 4;
    default:
      return 1;
  }
}

const char* error_code_name(const Error& e) {
  switch (exit_code_for(e)) {
    case 2: return "config";
    case 3: return "io";
    case 4: return "backend";
    default: return "internal";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rubricforge: documents -> rubric-annotated RL instances, "
               "rubric reward scoring, and GRPO objective checks"};
  app.require_subcommand(1);

  CliState state;
  std::string command;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", state.config_path, "config file (JSON)");
    sub->add_option("--input", state.input, "input file");
    sub->add_option("--out", state.out, "output directory");
    sub->add_option("--seed", state.seed, "deterministic run seed");
    sub->add_option("--workers", state.workers, "worker thread count");
    sub->add_flag("--mock", state.mock, "force the deterministic mock backend");
    sub->callback([&, sub] { command = sub->get_name(); });
    return sub;
  };

  add_common(app.add_subcommand("filter", "stage 1: document filtering"));
  add_common(app.add_subcommand("classify", "stage 2: domain and persona conditioning"));
  add_common(app.add_subcommand("generate", "stage 3: rubric-augmented QA co-generation"));
  add_common(app.add_subcommand("validate-qa", "stage 4: QA quality verification"));
  add_common(app.add_subcommand("validate-rubric", "stage 5: deterministic rubric validation"));
  auto* finalize = add_common(
      app.add_subcommand("finalize", "stage 6: dedup, eval-overlap removal, emission"));
  finalize->add_option("--eval-questions", state.eval_path, "eval questions file (one per line)");
  auto* run = add_common(app.add_subcommand("run", "full six-stage pipeline"));
  run->add_option("--eval-questions", state.eval_path, "eval questions file (one per line)");

  auto* score = add_common(app.add_subcommand("score", "batch reward scoring"));
  score->add_option("--strategy", state.strategy, "rubric|blind|general|reference");
  score->add_option("--instances", state.instances_path, "training file with instances");

  auto* serve = add_common(app.add_subcommand("score-serve", "HTTP reward service (POST /score)"));
  serve->add_option("--strategy", state.strategy, "rubric|blind|general|reference");
  serve->add_option("--instances", state.instances_path, "training file with instances");
  serve->add_option("--port", state.port, "listen port");

  add_common(app.add_subcommand("grpo-check", "batch objective evaluation"));
  add_common(app.add_subcommand("stats", "dataset statistics over a training file"));
  add_common(app.add_subcommand("dedup", "deduplicate a training file"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error code=config message=\"" << e.what() << "\"\n";
    return 2;
  }

  try {
    return run_command(command, state);
  } catch (const Error& e) {
    std::cerr << "error code=" << error_code_name(e) << " message=\"" << e.what() << "\"\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error code=internal message=\"" << e.what() << "\"\n";
    return 1;
  }
}

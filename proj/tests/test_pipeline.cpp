#include "catch_amalgamated.hpp"

#include <set>
#include <sstream>

#include "rubricforge/mock_backend.hpp"
#include "rubricforge/pipeline.hpp"

#include "support/fixtures.hpp"

using namespace rforge;

namespace {

// Stage harness over an arbitrary transport.
struct Harness {
  BackendClient client;
  TemplateSet templates;
  StageContext ctx;

  explicit Harness(std::shared_ptr<Backend> transport) {
    for (const char* name : {"generator", "classifier"}) {
      BackendProfile profile;
      profile.name = name;
      profile.retry.base_backoff_ms = 0;
      client.register_backend(profile, transport);
    }
    ctx.client = &client;
    ctx.templates = &templates;
  }
};

std::shared_ptr<CallbackBackend> fixed_reply(std::string reply) {
  return std::make_shared<CallbackBackend>([reply = std::move(reply)](const ChatRequest&) {
    ChatResponse response;
    response.content = reply;
    return response;
  });
}

Document doc(const std::string& id = "doc-1") {
  return Document(id, "A rich source text about " + id + " with dates and procedures.",
                  "corpus");
}

GenerationDraft example_draft(int positives = 8, int negatives = 3) {
  GenerationDraft draft;
  draft.question = "What does the source establish?";
  draft.answer = "It establishes the findings in detail.";
  for (int k = 0; k < positives; ++k)
    draft.rubrics.push_back({"covers point-" + std::to_string(k), json(3 + k % 7)});
  for (int k = 0; k < negatives; ++k)
    draft.rubrics.push_back({"omits pitfall-" + std::to_string(k), json(-(2 + k))});
  return draft;
}

std::string serialize_result(const PipelineResult& result) {
  std::ostringstream out;
  for (const auto* records :
       {&result.stage1, &result.stage2, &result.stage3, &result.stage4, &result.stage5,
        &result.stage6})
    for (const StageRecord& record : *records) out << stage_record_to_json(record).dump() << '\n';
  serialize_training(result.instances, out);
  out << report_to_json(result.report).dump();
  return out.str();
}

}  // namespace

TEST_CASE("stage 1: scripted accept, reject, and schema error") {
  {
    Harness harness(fixed_reply(R"({"qualified": "Y"})"));
    StageRecord record = stage1_filter(doc(), harness.ctx);
    CHECK(record.outcome == Outcome::accepted);
    CHECK(record.payload["document"]["id"] == "doc-1");
    CHECK(record.raw_model_reply.find("qualified") != std::string::npos);
  }
  {
    Harness harness(fixed_reply(R"({"qualified": "N"})"));
    StageRecord record = stage1_filter(doc(), harness.ctx);
    CHECK(record.outcome == Outcome::rejected);
    CHECK(record.reason == "unqualified-source");
  }
  {
    Harness harness(fixed_reply(R"({"qualified": "maybe"})"));
    StageRecord record = stage1_filter(doc(), harness.ctx);
    CHECK(record.outcome == Outcome::errored);
    CHECK(record.reason == "bad-schema");
  }
  {
    Harness harness(fixed_reply("not json"));
    StageRecord record = stage1_filter(doc(), harness.ctx);
    CHECK(record.outcome == Outcome::errored);
    CHECK(record.reason == "decode-error");
  }
  {
    auto failing = std::make_shared<ScriptedBackend>(
        std::vector<ScriptedBackend::Step>{500, 500, 500});
    Harness harness(failing);
    StageRecord record = stage1_filter(doc(), harness.ctx);
    CHECK(record.outcome == Outcome::errored);
    CHECK(record.reason == "transport-error");
  }
}

TEST_CASE("stage 2: domain set, persona parsing and truncation") {
  {
    Harness harness(fixed_reply(
        R"({"domain": "Medicine & Health",
            "persona": "medical professional; psychology student; family caregiver"})"));
    StageRecord record = stage2_classify(doc(), harness.ctx);
    CHECK(record.outcome == Outcome::accepted);
    CHECK(record.payload["domain"] == "Medicine & Health");
    CHECK(record.payload["personas"].size() == 3);
  }
  {
    Harness harness(fixed_reply(R"({"domain": "Astrology", "persona": "stargazer"})"));
    StageRecord record = stage2_classify(doc(), harness.ctx);
    CHECK(record.outcome == Outcome::errored);
    CHECK(record.reason == "unknown-domain");
  }
  {
    Harness harness(fixed_reply(R"({"domain": "Math", "persona": "a; b; c; d"})"));
    StageRecord record = stage2_classify(doc(), harness.ctx);
    CHECK(record.outcome == Outcome::accepted);
    CHECK(record.payload["personas"].size() == 3);
    REQUIRE_FALSE(record.audit_notes.empty());
    CHECK(record.audit_notes.back().find("truncated") != std::string::npos);
  }
}

TEST_CASE("stage 3: draft structure checks") {
  auto draft_reply = [](json rubrics, const std::string& question = "What is shown?") {
    return json{{"thought", "t"},
                {"question", question},
                {"answer", "A full answer."},
                {"rubrics", std::move(rubrics)}}
        .dump();
  };
  const DomainLabel domain = DomainLabel::must("Math");
  const Persona persona("teacher");

  {
    json rubrics = json::array();
    for (int k = 0; k < 8; ++k)
      rubrics.push_back({{"criterion", "covers p" + std::to_string(k)}, {"points", 5}});
    for (int k = 0; k < 3; ++k)
      rubrics.push_back({{"criterion", "omits n" + std::to_string(k)}, {"points", -4}});
    Harness harness(fixed_reply(draft_reply(rubrics)));
    StageRecord record = stage3_generate(doc(), domain, persona, 0, harness.ctx);
    CHECK(record.outcome == Outcome::accepted);
    CHECK(record.input_id == "doc-1#p0");
    CHECK(record.payload["draft"]["rubrics"].size() == 11);
  }
  {
    Harness harness(fixed_reply(draft_reply(
        json::array({{{"criterion", "c"}, {"points", 5}}}), "   ")));
    StageRecord record = stage3_generate(doc(), domain, persona, 0, harness.ctx);
    CHECK(record.outcome == Outcome::errored);
    CHECK(record.reason == "bad-schema");
  }
  {
    // The weight key must be "points".
    Harness harness(fixed_reply(
        draft_reply(json::array({{{"criterion", "c"}, {"weight", 5}}}))));
    StageRecord record = stage3_generate(doc(), domain, persona, 0, harness.ctx);
    CHECK(record.outcome == Outcome::errored);
    CHECK(record.reason == "bad-schema");
  }
}

TEST_CASE("stage 4: conjunction with fixed failure precedence") {
  auto verdict_reply = [](const char* ctx, const char* correct, const char* leak,
                          const char* suitable, const char* complexity = "complex") {
    return json{{"thought", "t"},          {"has_context", ctx},
                {"answer_correctness", correct}, {"info_leakage", leak},
                {"question_complexity", complexity}, {"answer_detail_level", "high"},
                {"rubric_suitable", suitable}}
        .dump();
  };
  GenerationDraft draft = example_draft();

  {
    Harness harness(fixed_reply(verdict_reply("Y", "Y", "N", "Y")));
    StageRecord record = stage4_validate_qa(draft, doc(), harness.ctx);
    CHECK(record.outcome == Outcome::accepted);
    CHECK(record.payload["complexity"] == "complex");
  }
  {
    Harness harness(fixed_reply(verdict_reply("Y", "Y", "Y", "Y")));
    StageRecord record = stage4_validate_qa(draft, doc(), harness.ctx);
    CHECK(record.outcome == Outcome::rejected);
    CHECK(record.reason == "info-leakage");
  }
  {
    Harness harness(fixed_reply(verdict_reply("Y", "Y", "N", "N")));
    StageRecord record = stage4_validate_qa(draft, doc(), harness.ctx);
    CHECK(record.outcome == Outcome::rejected);
    CHECK(record.reason == "rubric-unsuitable");
  }
  {
    // Context failure outranks every later check.
    Harness harness(fixed_reply(verdict_reply("N", "N", "Y", "N")));
    StageRecord record = stage4_validate_qa(draft, doc(), harness.ctx);
    CHECK(record.outcome == Outcome::rejected);
    CHECK(record.reason == "no-context");
  }
  {
    Harness harness(fixed_reply(verdict_reply("Y", "N", "Y", "N")));
    StageRecord record = stage4_validate_qa(draft, doc(), harness.ctx);
    CHECK(record.reason == "answer-incorrect");
  }
}

TEST_CASE("stage 5: rule table with repairs") {
  SECTION("the eleven-criterion complex example is accepted") {
    GenerationDraft draft;
    draft.question = "q";
    draft.answer = "a";
    for (int w : {10, 8, 7, 9, 6, 5, 4, 3})
      draft.rubrics.push_back({"covers w" + std::to_string(w), json(w)});
    for (int w : {-10, -8, -6})
      draft.rubrics.push_back({"omits w" + std::to_string(-w), json(w)});
    RubricValidation validation = validate_draft_rubric(draft, Complexity::complex_);
    REQUIRE(validation.rubric.has_value());
    CHECK(validation.rubric->size() == 11);
    CHECK(validation.repairs.empty());
  }

  SECTION("seven criteria under simple complexity") {
    GenerationDraft draft = example_draft(5, 2);
    RubricValidation validation = validate_draft_rubric(draft, Complexity::simple);
    CHECK_FALSE(validation.rubric.has_value());
    CHECK(validation.reason == "count-out-of-band");
  }

  SECTION("zero weight") {
    GenerationDraft draft = example_draft(3, 1);
    draft.rubrics[1].points = json(0);
    RubricValidation validation = validate_draft_rubric(draft, Complexity::simple);
    CHECK(validation.reason == "zero-weight");
  }

  SECTION("out-of-range weight") {
    GenerationDraft draft = example_draft(3, 1);
    draft.rubrics[2].points = json(11);
    CHECK(validate_draft_rubric(draft, Complexity::simple).reason == "weight-out-of-range");
    draft.rubrics[2].points = json(-11);
    CHECK(validate_draft_rubric(draft, Complexity::simple).reason == "weight-out-of-range");
  }

  SECTION("numeric-string weights are repaired") {
    GenerationDraft draft = example_draft(3, 0);
    draft.rubrics.push_back({"  omits the caveat  ", json(" -9 ")});
    RubricValidation validation = validate_draft_rubric(draft, Complexity::simple);
    REQUIRE(validation.rubric.has_value());
    CHECK(validation.rubric->criteria().back().weight() == -9);
    CHECK(validation.rubric->criteria().back().text() == "omits the caveat");
    CHECK(validation.repairs.size() == 2);  // trim + numeric string
  }

  SECTION("fractional weights are not repairable") {
    GenerationDraft draft = example_draft(3, 1);
    draft.rubrics[0].points = json(9.5);
    CHECK(validate_draft_rubric(draft, Complexity::simple).reason == "non-integer-weight");
    draft.rubrics[0].points = json("9.5");
    CHECK(validate_draft_rubric(draft, Complexity::simple).reason == "non-integer-weight");
  }

  SECTION("empty criterion text") {
    GenerationDraft draft = example_draft(3, 1);
    draft.rubrics[2].criterion = "   ";
    CHECK(validate_draft_rubric(draft, Complexity::simple).reason == "empty-criterion");
  }

  SECTION("sign presence") {
    GenerationDraft draft = example_draft(4, 0);
    CHECK(validate_draft_rubric(draft, Complexity::simple).reason == "missing-negative");
    GenerationDraft negatives = example_draft(0, 4);
    CHECK(validate_draft_rubric(negatives, Complexity::simple).reason == "missing-positive");
  }

  SECTION("first failing rule wins: per-criterion before count") {
    GenerationDraft draft = example_draft(6, 1);  // 7 entries, simple: out of band
    draft.rubrics[0].points = json(0);            // but index 0 fails first
    CHECK(validate_draft_rubric(draft, Complexity::simple).reason == "zero-weight");
  }
}

TEST_CASE("full pipeline: accept-all mock keeps every document") {
  Harness harness(std::make_shared<MockBackend>(42));
  PipelineOptions options;
  options.workers = 2;
  std::vector<Document> docs = fixtures::synthetic_documents(200);
  PipelineResult result = run_pipeline(docs, harness.ctx, options);

  CHECK(result.instances.size() == 200);
  for (const auto& [stage, counts] : result.report.per_stage) {
    CHECK(counts.entered == 200);
    CHECK(counts.accepted == 200);
  }
  CHECK(result.report.retention_from_documents == 1.0);
  CHECK(result.report.retention_from_drafts == 1.0);

  // Output is sorted by instance id.
  for (std::size_t i = 1; i < result.instances.size(); ++i)
    CHECK(result.instances[i - 1].id < result.instances[i].id);
}

TEST_CASE("scripted rejection rates reproduce the target retention") {
  MockScript script;
  script.filter_reject_rate = 0.284;
  Harness harness(std::make_shared<MockBackend>(42, script));
  PipelineOptions options;
  options.workers = 4;
  std::vector<Document> docs = fixtures::synthetic_documents(2000);
  PipelineResult result = run_pipeline(docs, harness.ctx, options);

  CHECK(result.report.retention_from_documents == Catch::Approx(0.716).margin(0.01));

  // Conservation holds exactly at every stage.
  for (const auto& [stage, counts] : result.report.per_stage)
    CHECK(counts.entered == counts.accepted + counts.rejected + counts.errored);

  // Monotonicity: only accepted stage-1 documents enter stage 2.
  std::set<std::string> accepted_stage1;
  for (const StageRecord& record : result.stage1)
    if (record.accepted()) accepted_stage1.insert(record.input_id);
  CHECK(result.stage2.size() == accepted_stage1.size());
  for (const StageRecord& record : result.stage2)
    CHECK(accepted_stage1.count(record.input_id) == 1);
}

TEST_CASE("mixed-stage rejections still conserve records") {
  MockScript script;
  script.filter_reject_rate = 0.15;
  script.qa_info_leakage_rate = 0.1;
  script.qa_rubric_unsuitable_rate = 0.1;
  Harness harness(std::make_shared<MockBackend>(9, script));
  PipelineOptions options;
  PipelineResult result = run_pipeline(fixtures::synthetic_documents(300), harness.ctx, options);

  for (const auto& [stage, counts] : result.report.per_stage)
    CHECK(counts.entered == counts.accepted + counts.rejected + counts.errored);
  CHECK(result.report.rejection_reasons.count("filter/unqualified-source") == 1);
  CHECK(result.report.rejection_reasons.count("validate_qa/info-leakage") == 1);
  CHECK(result.instances.size() < 300);
  CHECK(result.instances.size() > 100);
}

TEST_CASE("determinism across runs and worker counts") {
  MockScript script;
  script.filter_reject_rate = 0.2;
  script.qa_info_leakage_rate = 0.05;
  std::vector<Document> docs = fixtures::synthetic_documents(150);

  auto run_once = [&](int workers) {
    Harness harness(std::make_shared<MockBackend>(42, script));
    PipelineOptions options;
    options.workers = workers;
    return serialize_result(run_pipeline(docs, harness.ctx, options));
  };

  const std::string single = run_once(1);
  CHECK(run_once(1) == single);
  CHECK(run_once(8) == single);

  // A different seed changes decisions.
  Harness other(std::make_shared<MockBackend>(43, script));
  PipelineOptions options;
  CHECK(serialize_result(run_pipeline(docs, other.ctx, options)) != single);
}

TEST_CASE("empty document list produces an all-zero report") {
  Harness harness(std::make_shared<MockBackend>(42));
  PipelineOptions options;
  PipelineResult result = run_pipeline({}, harness.ctx, options);
  CHECK(result.instances.empty());
  for (const auto& [stage, counts] : result.report.per_stage) CHECK(counts.entered == 0);
  CHECK(result.report.retention_from_documents == 0.0);
  CHECK(result.report.stats.empty_input);
}

TEST_CASE("table3-shaped mock yields the paper-scale criteria statistics") {
  MockScript script;
  script.rubric_shape = MockScript::RubricShape::table3;
  Harness harness(std::make_shared<MockBackend>(42, script));
  PipelineOptions options;
  PipelineResult result = run_pipeline(fixtures::synthetic_documents(100), harness.ctx, options);

  CHECK(result.report.stats.avg_criteria == Catch::Approx(10.88).margin(0.5));
  CHECK(result.report.stats.median_criteria == 11.0);
  CHECK(result.report.stats.positive_criteria + result.report.stats.negative_criteria ==
        result.report.stats.total_criteria);
}

TEST_CASE("duplicate questions collapse at finalize") {
  // Two documents with identical text produce identical drafts.
  std::vector<Document> docs = fixtures::synthetic_documents(5);
  docs.push_back(Document("doc-99999", docs[0].text, "corpus-b"));
  Harness harness(std::make_shared<MockBackend>(42));
  PipelineOptions options;
  PipelineResult result = run_pipeline(docs, harness.ctx, options);

  CHECK(result.instances.size() == 5);
  bool found_duplicate = false;
  for (const StageRecord& record : result.stage6)
    found_duplicate = found_duplicate || record.reason == "duplicate";
  CHECK(found_duplicate);
}

TEST_CASE("eval overlap removal drops matching questions") {
  Harness harness(std::make_shared<MockBackend>(42));
  PipelineOptions options;
  PipelineResult first = run_pipeline(fixtures::synthetic_documents(5), harness.ctx, options);
  REQUIRE(first.instances.size() == 5);

  options.eval_questions.push_back(first.instances[2].question);
  Harness again(std::make_shared<MockBackend>(42));
  PipelineResult screened =
      run_pipeline(fixtures::synthetic_documents(5), again.ctx, options);
  CHECK(screened.instances.size() == 4);
  CHECK(screened.report.rejection_reasons.at("finalize/eval-overlap") == 1);
}

TEST_CASE("persona fanout spawns one generation per selected persona") {
  MockScript script;
  script.persona_count = 3;
  Harness harness(std::make_shared<MockBackend>(42, script));
  PipelineOptions options;
  options.persona_fanout = 3;
  PipelineResult result = run_pipeline(fixtures::synthetic_documents(10), harness.ctx, options);

  CHECK(result.stage3.size() == 30);
  std::set<std::string> suffixes;
  for (const StageRecord& record : result.stage3)
    suffixes.insert(record.input_id.substr(record.input_id.find('#')));
  CHECK(suffixes == std::set<std::string>{"#p0", "#p1", "#p2"});
  CHECK(result.instances.size() == 30);
}

TEST_CASE("emitted instances re-pass stage-5 validation and stage-4 structure") {
  MockScript script;
  script.rubric_shape = MockScript::RubricShape::table3;
  Harness harness(std::make_shared<MockBackend>(42, script));
  PipelineOptions options;
  PipelineResult result = run_pipeline(fixtures::synthetic_documents(50), harness.ctx, options);

  std::ostringstream buffer;
  serialize_training(result.instances, buffer);
  std::istringstream in(buffer.str());
  std::vector<Instance> reloaded = parse_training(in);
  REQUIRE(reloaded.size() == result.instances.size());

  for (const Instance& inst : reloaded) {
    GenerationDraft draft;
    draft.question = inst.question;
    draft.answer = inst.reference_answer;
    for (const Criterion& c : inst.rubric.criteria())
      draft.rubrics.push_back({c.text(), json(c.weight())});
    RubricValidation validation =
        validate_draft_rubric(draft, inst.rubric.complexity());
    CHECK(validation.rubric.has_value());
    CHECK(validation.repairs.empty());
    CHECK_FALSE(trim(inst.question).empty());
    CHECK_FALSE(trim(inst.reference_answer).empty());
  }
}

TEST_CASE("stage records round-trip through JSONL") {
  MockScript script;
  script.filter_reject_rate = 0.3;
  Harness harness(std::make_shared<MockBackend>(42, script));
  std::vector<Document> docs = fixtures::synthetic_documents(30);
  std::vector<StageRecord> records = run_stage1(docs, harness.ctx, 1);

  fixtures::TempDir tmp("records");
  write_stage_records(records, tmp.str("stage1.jsonl"));
  std::vector<StageRecord> reloaded = parse_stage_records(tmp.str("stage1.jsonl"));
  REQUIRE(reloaded.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(stage_record_to_json(reloaded[i]) == stage_record_to_json(records[i]));
  }
}

TEST_CASE("duplicate document ids abort the run") {
  Harness harness(std::make_shared<MockBackend>(42));
  std::vector<Document> docs = fixtures::synthetic_documents(2);
  docs.push_back(Document("doc-00000", "different text entirely", "corpus"));
  PipelineOptions options;
  CHECK_THROWS_AS(run_pipeline(docs, harness.ctx, options), ValidationError);
}

#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rubricforge/backend.hpp"
#include "rubricforge/core.hpp"
#include "rubricforge/dataops.hpp"
#include "rubricforge/digest.hpp"
#include "rubricforge/errors.hpp"
#include "rubricforge/prompts.hpp"

namespace rforge {

// ---------------------------------------------------------------------------
// Stage records
// ---------------------------------------------------------------------------

enum class Stage { filter, classify, generate, validate_qa, validate_rubric, finalize };

inline std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::filter: return "filter";
    case Stage::classify: return "classify";
    case Stage::generate: return "generate";
    case Stage::validate_qa: return "validate_qa";
    case Stage::validate_rubric: return "validate_rubric";
    case Stage::finalize: return "finalize";
  }
  return "filter";
}

enum class Outcome { accepted, rejected, errored };

inline std::string_view to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::accepted: return "accepted";
    case Outcome::rejected: return "rejected";
    case Outcome::errored: return "errored";
  }
  return "accepted";
}

// Reason codes form a closed set so downstream analytics stay stable:
//   unqualified-source bad-schema unknown-domain transport-error
//   protocol-error decode-error no-context answer-incorrect info-leakage
//   rubric-unsuitable empty-criterion non-integer-weight zero-weight
//   weight-out-of-range count-out-of-band missing-positive missing-negative
//   duplicate eval-overlap assembly-error

struct StageRecord {
  Stage stage = Stage::filter;
  std::string input_id;
  Outcome outcome = Outcome::accepted;
  std::string reason;  // non-empty iff rejected or errored
  json payload;
  std::string raw_model_reply;
  std::vector<std::string> audit_notes;

  bool accepted() const noexcept { return outcome == Outcome::accepted; }
};

inline json stage_record_to_json(const StageRecord& record) {
  json out{
      {"stage", std::string(to_string(record.stage))},
      {"input_id", record.input_id},
      {"outcome", std::string(to_string(record.outcome))},
      {"payload", record.payload},
      {"raw_model_reply", record.raw_model_reply},
  };
  if (!record.reason.empty()) out["reason"] = record.reason;
  if (!record.audit_notes.empty()) out["audit_notes"] = record.audit_notes;
  return out;
}

inline StageRecord stage_record_from_json(const json& rec) {
  StageRecord record;
  const std::string stage = rec.value("stage", "");
  bool found = false;
  for (Stage s : {Stage::filter, Stage::classify, Stage::generate, Stage::validate_qa,
                  Stage::validate_rubric, Stage::finalize}) {
    if (stage == to_string(s)) {
      record.stage = s;
      found = true;
      break;
    }
  }
  if (!found) throw ValidationError("unknown stage: " + stage);
  record.input_id = rec.value("input_id", "");
  const std::string outcome = rec.value("outcome", "");
  if (outcome == "accepted")
    record.outcome = Outcome::accepted;
  else if (outcome == "rejected")
    record.outcome = Outcome::rejected;
  else if (outcome == "errored")
    record.outcome = Outcome::errored;
  else
    throw ValidationError("unknown outcome: " + outcome);
  record.reason = rec.value("reason", "");
  if (record.outcome != Outcome::accepted && record.reason.empty())
    throw ValidationError("non-accepted record lacks a reason: " + record.input_id);
  record.payload = rec.value("payload", json());
  record.raw_model_reply = rec.value("raw_model_reply", "");
  if (rec.contains("audit_notes"))
    record.audit_notes = rec["audit_notes"].get<std::vector<std::string>>();
  return record;
}

// ---------------------------------------------------------------------------
// Drafts
// ---------------------------------------------------------------------------

// Stage-3 output, schema-faithful: the weight key is "points" and values stay
// raw (number or numeric string) until stage 5 validates or repairs them.
struct GenerationDraft {
  struct Entry {
    std::string criterion;
    json points;
  };
  std::string question;
  std::string answer;
  std::vector<Entry> rubrics;
  std::string thought;
};

inline json draft_to_json(const GenerationDraft& draft) {
  json rubrics = json::array();
  for (const auto& entry : draft.rubrics)
    rubrics.push_back({{"criterion", entry.criterion}, {"points", entry.points}});
  return json{{"question", draft.question},
              {"answer", draft.answer},
              {"rubrics", std::move(rubrics)},
              {"thought", draft.thought}};
}

inline GenerationDraft draft_from_json(const json& obj) {
  GenerationDraft draft;
  for (const char* key : {"question", "answer", "rubrics"})
    if (!obj.contains(key)) throw SchemaError(std::string("missing field: ") + key, key);
  if (!obj["question"].is_string() || !obj["answer"].is_string())
    throw SchemaError("question and answer must be strings", "question");
  draft.question = obj["question"].get<std::string>();
  draft.answer = obj["answer"].get<std::string>();
  if (trim_view(draft.question).empty()) throw SchemaError("question is empty", "question");
  if (trim_view(draft.answer).empty()) throw SchemaError("answer is empty", "answer");
  if (!obj["rubrics"].is_array() || obj["rubrics"].empty())
    throw SchemaError("rubrics must be a non-empty list", "rubrics");
  for (const json& entry : obj["rubrics"]) {
    if (!entry.is_object() || !entry.contains("criterion") || !entry.contains("points"))
      throw SchemaError("rubric entries need criterion and points", "rubrics");
    if (!entry["criterion"].is_string())
      throw SchemaError("criterion must be a string", "rubrics");
    draft.rubrics.push_back({entry["criterion"].get<std::string>(), entry["points"]});
  }
  draft.thought = obj.value("thought", "");
  return draft;
}

// ---------------------------------------------------------------------------
// Stage context
// ---------------------------------------------------------------------------

// Backend wiring for the semantic stages. Filtering and generation go to the
// generator profile; classification and QA checking go to the classifier.
struct StageContext {
  BackendClient* client = nullptr;
  const TemplateSet* templates = nullptr;
  std::string generator_profile = "generator";
  std::string classifier_profile = "classifier";
  RequestParams generator_params{"generator", 0.7, 4096};
  RequestParams classifier_params{"classifier", 0.0, 2048};

  void validate() const {
    if (client == nullptr || templates == nullptr)
      throw ConfigError("stage context is missing a backend client or template set");
  }
};

namespace detail {

inline json document_to_json(const Document& doc) {
  return json{{"id", doc.id},
              {"text", doc.text},
              {"source", doc.source},
              {"token_estimate", doc.token_estimate}};
}

inline Document document_from_json(const json& obj) {
  for (const char* key : {"id", "text"})
    if (!obj.contains(key)) throw ValidationError(std::string("document missing field: ") + key);
  return Document(obj["id"].get<std::string>(), obj["text"].get<std::string>(),
                  obj.value("source", ""));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stages 1-2: filtering and classification
// ---------------------------------------------------------------------------

inline StageRecord stage1_filter(const Document& doc, const StageContext& ctx) {
  ctx.validate();
  StageRecord record;
  record.stage = Stage::filter;
  record.input_id = doc.id;
  try {
    ChatRequest request = render(ctx.templates->get(PromptKind::stage1_filter),
                                 {{"document", doc.text}}, ctx.generator_params);
    ChatResponse reply = ctx.client->complete(ctx.generator_profile, request);
    record.raw_model_reply = reply.content;
    FilterVerdict verdict = parse_filter_verdict(reply.content);
    record.audit_notes = verdict.audit_notes;
    if (verdict.qualified) {
      record.outcome = Outcome::accepted;
      record.payload = json{{"document", detail::document_to_json(doc)}};
    } else {
      record.outcome = Outcome::rejected;
      record.reason = "unqualified-source";
    }
  } catch (const SchemaError&) {
    record.outcome = Outcome::errored;
    record.reason = "bad-schema";
  } catch (const DecodeError&) {
    record.outcome = Outcome::errored;
    record.reason = "decode-error";
  } catch (const TransportError&) {
    record.outcome = Outcome::errored;
    record.reason = "transport-error";
  } catch (const ProtocolError&) {
    record.outcome = Outcome::errored;
    record.reason = "protocol-error";
  }
  return record;
}

inline StageRecord stage2_classify(const Document& doc, const StageContext& ctx) {
  ctx.validate();
  StageRecord record;
  record.stage = Stage::classify;
  record.input_id = doc.id;
  try {
    ChatRequest request = render(ctx.templates->get(PromptKind::stage2_classify),
                                 {{"document", doc.text}}, ctx.classifier_params);
    ChatResponse reply = ctx.client->complete(ctx.classifier_profile, request);
    record.raw_model_reply = reply.content;
    ClassifyVerdict verdict = parse_classify_verdict(reply.content);
    record.audit_notes = verdict.audit_notes;

    std::vector<std::string> personas = verdict.personas;
    if (personas.size() > kMaxPersonasPerDocument) {
      personas.resize(kMaxPersonasPerDocument);
      record.audit_notes.push_back("persona list truncated to 3");
    }
    record.outcome = Outcome::accepted;
    record.payload = json{{"document", detail::document_to_json(doc)},
                          {"domain", verdict.domain.value()},
                          {"personas", personas}};
  } catch (const UnknownDomainError&) {
    record.outcome = Outcome::errored;
    record.reason = "unknown-domain";
  } catch (const SchemaError&) {
    record.outcome = Outcome::errored;
    record.reason = "bad-schema";
  } catch (const DecodeError&) {
    record.outcome = Outcome::errored;
    record.reason = "decode-error";
  } catch (const TransportError&) {
    record.outcome = Outcome::errored;
    record.reason = "transport-error";
  } catch (const ProtocolError&) {
    record.outcome = Outcome::errored;
    record.reason = "protocol-error";
  }
  return record;
}

// ---------------------------------------------------------------------------
// Stage 3: rubric-augmented QA co-generation
// ---------------------------------------------------------------------------

inline StageRecord stage3_generate(const Document& doc, const DomainLabel& domain,
                                   const Persona& persona, std::size_t persona_index,
                                   const StageContext& ctx) {
  ctx.validate();
  StageRecord record;
  record.stage = Stage::generate;
  record.input_id = doc.id + "#p" + std::to_string(persona_index);
  try {
    ChatRequest request = render(ctx.templates->get(PromptKind::stage3_generate),
                                 {{"document", doc.text},
                                  {"domain", domain.value()},
                                  {"persona", persona.description}},
                                 ctx.generator_params);
    ChatResponse reply = ctx.client->complete(ctx.generator_profile, request);
    record.raw_model_reply = reply.content;
    GenerationDraft draft = draft_from_json(extract_json_object(reply.content));
    record.outcome = Outcome::accepted;
    record.payload = json{{"document", detail::document_to_json(doc)},
                          {"domain", domain.value()},
                          {"persona", persona.description},
                          {"draft", draft_to_json(draft)}};
  } catch (const SchemaError&) {
    record.outcome = Outcome::errored;
    record.reason = "bad-schema";
  } catch (const DecodeError&) {
    record.outcome = Outcome::errored;
    record.reason = "decode-error";
  } catch (const TransportError&) {
    record.outcome = Outcome::errored;
    record.reason = "transport-error";
  } catch (const ProtocolError&) {
    record.outcome = Outcome::errored;
    record.reason = "protocol-error";
  }
  return record;
}

// ---------------------------------------------------------------------------
// Stage 4: QA quality verification
// ---------------------------------------------------------------------------

// Acceptance is the conjunction of the four checks, evaluated in fixed order
// (context, correctness, leakage, suitability); the first failure names the
// rejection reason. The checker's complexity verdict is carried forward.
inline StageRecord stage4_validate_qa(const GenerationDraft& draft, const Document& doc,
                                      const StageContext& ctx) {
  ctx.validate();
  StageRecord record;
  record.stage = Stage::validate_qa;
  record.input_id = doc.id;
  try {
    ChatRequest request = render(ctx.templates->get(PromptKind::stage4_validate_qa),
                                 {{"document", doc.text},
                                  {"question", draft.question},
                                  {"answer", draft.answer}},
                                 ctx.classifier_params);
    ChatResponse reply = ctx.client->complete(ctx.classifier_profile, request);
    record.raw_model_reply = reply.content;
    QaVerdict verdict = parse_qa_verdict(reply.content);
    record.audit_notes = verdict.audit_notes;

    std::string reason;
    if (!verdict.has_context)
      reason = "no-context";
    else if (!verdict.answer_correctness)
      reason = "answer-incorrect";
    else if (verdict.info_leakage)
      reason = "info-leakage";
    else if (!verdict.rubric_suitable)
      reason = "rubric-unsuitable";

    if (reason.empty()) {
      record.outcome = Outcome::accepted;
      record.payload =
          json{{"complexity", std::string(to_string(verdict.question_complexity))}};
    } else {
      record.outcome = Outcome::rejected;
      record.reason = reason;
    }
  } catch (const SchemaError&) {
    record.outcome = Outcome::errored;
    record.reason = "bad-schema";
  } catch (const DecodeError&) {
    record.outcome = Outcome::errored;
    record.reason = "decode-error";
  } catch (const TransportError&) {
    record.outcome = Outcome::errored;
    record.reason = "transport-error";
  } catch (const ProtocolError&) {
    record.outcome = Outcome::errored;
    record.reason = "protocol-error";
  }
  return record;
}

// ---------------------------------------------------------------------------
// Stage 5: deterministic rubric validation
// ---------------------------------------------------------------------------

struct RubricValidation {
  std::optional<Rubric> rubric;
  std::string reason;                // first failing rule when rejected
  std::vector<std::string> repairs;  // unambiguous repairs applied
};

// Rule order: per-criterion checks in index order (empty text, weight shape,
// zero, range), then count band, then sign presence. Repairs are limited to
// whitespace trimming and parsing numeric-string weights.
inline RubricValidation validate_draft_rubric(const GenerationDraft& draft,
                                              Complexity complexity) {
  RubricValidation result;
  std::vector<Criterion> criteria;
  criteria.reserve(draft.rubrics.size());

  for (std::size_t k = 0; k < draft.rubrics.size(); ++k) {
    const auto& entry = draft.rubrics[k];
    std::string text = trim(entry.criterion);
    if (text.empty()) {
      result.reason = "empty-criterion";
      return result;
    }
    if (text.size() != entry.criterion.size())
      result.repairs.push_back("trimmed criterion " + std::to_string(k));

    long long weight = 0;
    const json& points = entry.points;
    if (points.is_number_integer()) {
      weight = points.get<long long>();
    } else if (points.is_string()) {
      const std::string raw = points.get<std::string>();
      const std::string trimmed = trim(raw);
      std::size_t i = (!trimmed.empty() && (trimmed[0] == '+' || trimmed[0] == '-')) ? 1 : 0;
      bool numeric = i < trimmed.size() && trimmed.size() - i <= 9;
      for (std::size_t j = i; numeric && j < trimmed.size(); ++j)
        numeric = trimmed[j] >= '0' && trimmed[j] <= '9';
      if (!numeric) {
        result.reason = "non-integer-weight";
        return result;
      }
      weight = std::stoll(trimmed);
      result.repairs.push_back("parsed numeric-string weight " + std::to_string(k));
    } else {
      result.reason = "non-integer-weight";
      return result;
    }

    if (weight == 0) {
      result.reason = "zero-weight";
      return result;
    }
    if (weight < -kMaxCriterionWeight || weight > kMaxCriterionWeight) {
      result.reason = "weight-out-of-range";
      return result;
    }
    criteria.emplace_back(std::move(text), static_cast<int>(weight));
  }

  const ComplexityBand band = complexity_band(complexity);
  if (criteria.size() < band.min_criteria || criteria.size() > band.max_criteria) {
    result.reason = "count-out-of-band";
    return result;
  }

  bool has_positive = false;
  bool has_negative = false;
  for (const Criterion& c : criteria) {
    has_positive = has_positive || c.weight() > 0;
    has_negative = has_negative || c.weight() < 0;
  }
  if (!has_positive) {
    result.reason = "missing-positive";
    return result;
  }
  if (!has_negative) {
    result.reason = "missing-negative";
    return result;
  }

  result.rubric = Rubric(std::move(criteria), complexity);
  return result;
}

inline StageRecord stage5_validate_rubric(const GenerationDraft& draft, Complexity complexity,
                                          const std::string& input_id, const json& upstream) {
  StageRecord record;
  record.stage = Stage::validate_rubric;
  record.input_id = input_id;
  RubricValidation validation = validate_draft_rubric(draft, complexity);
  record.audit_notes = validation.repairs;
  if (!validation.rubric) {
    record.outcome = Outcome::rejected;
    record.reason = validation.reason;
    return record;
  }

  json criteria = json::array();
  for (const Criterion& c : validation.rubric->criteria())
    criteria.push_back({{"criterion", c.text()}, {"weight", c.weight()}});
  record.outcome = Outcome::accepted;
  record.payload = json{
      {"document_id", upstream.at("document").at("id")},
      {"source", upstream.at("document").value("source", "")},
      {"domain", upstream.at("domain")},
      {"persona", upstream.at("persona")},
      {"question", draft.question},
      {"answer", draft.answer},
      {"rubric", json{{"complexity", std::string(to_string(complexity))},
                      {"criteria", std::move(criteria)}}},
  };
  return record;
}

// ---------------------------------------------------------------------------
// Parallel per-record driving
// ---------------------------------------------------------------------------

namespace detail {

// Index-aligned parallel map: results land in input order, so downstream
// output is identical for any worker count. The first escaping exception is
// rethrown after all workers join.
template <typename In, typename Fn>
auto parallel_map(const std::vector<In>& items, int workers, Fn&& fn) {
  using Out = std::invoke_result_t<Fn&, const In&>;
  std::vector<std::optional<Out>> slots(items.size());
  if (items.empty()) return std::vector<Out>{};

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= items.size()) break;
      try {
        slots[i].emplace(fn(items[i]));
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };

  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    const int n = std::min<int>(workers, static_cast<int>(items.size()));
    pool.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  std::vector<Out> out;
  out.reserve(items.size());
  for (auto& slot : slots) out.push_back(std::move(*slot));
  return out;
}

}  // namespace detail

// Pipeline-scoped knobs; backend wiring lives in StageContext.
struct PipelineOptions {
  int persona_fanout = 1;  // 1..3 personas spawn generations per document
  int workers = 1;
  DedupPolicy dedup;
  std::vector<std::string> eval_questions;

  void validate() const {
    if (persona_fanout < 1 || persona_fanout > 3)
      throw ConfigError("persona_fanout must lie in 1..3");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    dedup.validate();
  }
};

inline std::vector<StageRecord> run_stage1(const std::vector<Document>& docs,
                                           const StageContext& ctx, int workers) {
  return detail::parallel_map(docs, workers,
                              [&](const Document& doc) { return stage1_filter(doc, ctx); });
}

inline std::vector<StageRecord> run_stage2(const std::vector<StageRecord>& stage1_records,
                                           const StageContext& ctx, int workers) {
  std::vector<Document> docs;
  for (const StageRecord& record : stage1_records)
    if (record.accepted())
      docs.push_back(detail::document_from_json(record.payload.at("document")));
  return detail::parallel_map(docs, workers,
                              [&](const Document& doc) { return stage2_classify(doc, ctx); });
}

inline std::vector<StageRecord> run_stage3(const std::vector<StageRecord>& stage2_records,
                                           const StageContext& ctx, int persona_fanout,
                                           int workers) {
  struct Item {
    Document doc;
    DomainLabel domain;
    Persona persona;
    std::size_t persona_index;
  };
  std::vector<Item> items;
  for (const StageRecord& record : stage2_records) {
    if (!record.accepted()) continue;
    Document doc = detail::document_from_json(record.payload.at("document"));
    DomainLabel domain = DomainLabel::must(record.payload.at("domain").get<std::string>());
    const auto personas = record.payload.at("personas").get<std::vector<std::string>>();
    const std::size_t fanout =
        std::min<std::size_t>(static_cast<std::size_t>(persona_fanout), personas.size());
    for (std::size_t i = 0; i < fanout; ++i)
      items.push_back({doc, domain, Persona(personas[i]), i});
  }
  return detail::parallel_map(items, workers, [&](const Item& item) {
    return stage3_generate(item.doc, item.domain, item.persona, item.persona_index, ctx);
  });
}

inline std::vector<StageRecord> run_stage4(const std::vector<StageRecord>& stage3_records,
                                           const StageContext& ctx, int workers) {
  std::vector<const StageRecord*> accepted;
  for (const StageRecord& record : stage3_records)
    if (record.accepted()) accepted.push_back(&record);
  return detail::parallel_map(accepted, workers, [&](const StageRecord* upstream) {
    Document doc = detail::document_from_json(upstream->payload.at("document"));
    GenerationDraft draft = draft_from_json(upstream->payload.at("draft"));
    StageRecord record = stage4_validate_qa(draft, doc, ctx);
    record.input_id = upstream->input_id;
    if (record.accepted()) {
      // Carry the upstream payload so later stages need no cross-file joins.
      json payload = upstream->payload;
      payload["complexity"] = record.payload.at("complexity");
      record.payload = std::move(payload);
    }
    return record;
  });
}

inline std::vector<StageRecord> run_stage5(const std::vector<StageRecord>& stage4_records) {
  std::vector<StageRecord> out;
  for (const StageRecord& upstream : stage4_records) {
    if (!upstream.accepted()) continue;
    GenerationDraft draft = draft_from_json(upstream.payload.at("draft"));
    auto complexity = parse_complexity(upstream.payload.at("complexity").get<std::string>());
    if (!complexity) throw ValidationError("stage4 record carries unknown complexity");
    out.push_back(stage5_validate_rubric(draft, *complexity, upstream.input_id,
                                         upstream.payload));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage 6: finalize
// ---------------------------------------------------------------------------

struct FinalizeResult {
  std::vector<Instance> instances;  // sorted by id
  std::vector<StageRecord> records;
  std::size_t entered = 0;
};

inline std::string instance_id_for(const std::string& source_id, const std::string& persona,
                                   const std::string& question) {
  return "inst-" + sha256_hex16(source_id + "\x1f" + persona + "\x1f" + question);
}

inline FinalizeResult stage6_finalize(const std::vector<StageRecord>& stage5_records,
                                      const PipelineOptions& options) {
  options.validate();
  FinalizeResult result;
  std::vector<Instance> candidates;
  for (const StageRecord& upstream : stage5_records) {
    if (!upstream.accepted()) continue;
    ++result.entered;
    const json& p = upstream.payload;
    try {
      std::vector<Criterion> criteria;
      for (const json& entry : p.at("rubric").at("criteria"))
        criteria.emplace_back(entry.at("criterion").get<std::string>(),
                              entry.at("weight").get<int>());
      auto complexity = parse_complexity(p.at("rubric").at("complexity").get<std::string>());
      if (!complexity) throw ValidationError("unknown complexity");
      const std::string question = p.at("question").get<std::string>();
      const std::string persona = p.at("persona").get<std::string>();
      const std::string source_id = p.at("document_id").get<std::string>();
      candidates.emplace_back(instance_id_for(source_id, persona, question), question,
                              p.at("answer").get<std::string>(),
                              Rubric(std::move(criteria), *complexity),
                              DomainLabel::must(p.at("domain").get<std::string>()),
                              Persona(persona), source_id);
    } catch (const Error&) {
      StageRecord record;
      record.stage = Stage::finalize;
      record.input_id = upstream.input_id;
      record.outcome = Outcome::errored;
      record.reason = "assembly-error";
      result.records.push_back(std::move(record));
    }
  }

  DedupResult deduped = dedup(candidates, options.dedup);
  for (const RemovalRecord& removal : deduped.removed) {
    StageRecord record;
    record.stage = Stage::finalize;
    record.input_id = removal.id;
    record.outcome = Outcome::rejected;
    record.reason = "duplicate";
    record.audit_notes.push_back(removal.reason + " of " + removal.matched);
    result.records.push_back(std::move(record));
  }

  DedupResult screened =
      remove_eval_overlap(deduped.kept, options.eval_questions, options.dedup);
  for (const RemovalRecord& removal : screened.removed) {
    StageRecord record;
    record.stage = Stage::finalize;
    record.input_id = removal.id;
    record.outcome = Outcome::rejected;
    record.reason = "eval-overlap";
    record.audit_notes.push_back("matches eval question: " + removal.matched);
    result.records.push_back(std::move(record));
  }

  result.instances = std::move(screened.kept);
  for (const Instance& inst : result.instances) {
    StageRecord record;
    record.stage = Stage::finalize;
    record.input_id = inst.id;
    record.outcome = Outcome::accepted;
    result.records.push_back(std::move(record));
  }
  std::sort(result.records.begin(), result.records.end(),
            [](const StageRecord& a, const StageRecord& b) { return a.input_id < b.input_id; });
  return result;
}

// ---------------------------------------------------------------------------
// Run report
// ---------------------------------------------------------------------------

struct StageCounts {
  std::size_t entered = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t errored = 0;
};

struct RunReport {
  std::map<std::string, StageCounts> per_stage;
  std::map<std::string, std::size_t> rejection_reasons;  // "<stage>/<reason>" -> count
  DatasetStats stats;
  std::size_t documents_in = 0;
  std::size_t drafts = 0;
  std::size_t instances_out = 0;
  double retention_from_documents = 0.0;
  double retention_from_drafts = 0.0;
  json config_echo;
  std::map<std::string, std::string> prompt_digests;
};

inline StageCounts tally(const std::vector<StageRecord>& records) {
  StageCounts counts;
  counts.entered = records.size();
  for (const StageRecord& record : records) {
    switch (record.outcome) {
      case Outcome::accepted: ++counts.accepted; break;
      case Outcome::rejected: ++counts.rejected; break;
      case Outcome::errored: ++counts.errored; break;
    }
  }
  return counts;
}

inline json report_to_json(const RunReport& report) {
  json per_stage = json::object();
  for (const auto& [stage, counts] : report.per_stage)
    per_stage[stage] = {{"entered", counts.entered},
                        {"accepted", counts.accepted},
                        {"rejected", counts.rejected},
                        {"errored", counts.errored}};
  json reasons = json::object();
  for (const auto& [reason, count] : report.rejection_reasons) reasons[reason] = count;
  json digests = json::object();
  for (const auto& [kind, digest] : report.prompt_digests) digests[kind] = digest;
  return json{
      {"per_stage", std::move(per_stage)},
      {"rejection_reasons", std::move(reasons)},
      {"stats", stats_to_json(report.stats)},
      {"documents_in", report.documents_in},
      {"drafts", report.drafts},
      {"instances_out", report.instances_out},
      {"retention_from_documents", report.retention_from_documents},
      {"retention_from_drafts", report.retention_from_drafts},
      {"config", report.config_echo},
      {"prompt_digests", std::move(digests)},
  };
}

inline std::string render_report_summary(const RunReport& report) {
  std::ostringstream out;
  out << "documents in:   " << report.documents_in << '\n';
  out << "instances out:  " << report.instances_out << '\n';
  out << "retention:      " << report.retention_from_documents * 100.0 << "% of documents, "
      << report.retention_from_drafts * 100.0 << "% of drafts\n";
  out << "per stage (entered/accepted/rejected/errored):\n";
  for (const auto& [stage, c] : report.per_stage)
    out << "  " << stage << ": " << c.entered << '/' << c.accepted << '/' << c.rejected << '/'
        << c.errored << '\n';
  if (!report.rejection_reasons.empty()) {
    out << "rejections:\n";
    for (const auto& [reason, count] : report.rejection_reasons)
      out << "  " << reason << ": " << count << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Full run
// ---------------------------------------------------------------------------

struct PipelineResult {
  std::vector<StageRecord> stage1, stage2, stage3, stage4, stage5, stage6;
  std::vector<Instance> instances;
  RunReport report;
};

namespace detail {

inline void count_reasons(const std::vector<StageRecord>& records,
                          std::map<std::string, std::size_t>& reasons) {
  for (const StageRecord& record : records)
    if (!record.reason.empty())
      reasons[std::string(to_string(record.stage)) + "/" + record.reason] += 1;
}

}  // namespace detail

// Builds the report purely from stage records, so a run assembled from audit
// files reports identically to an in-memory run over the same inputs.
inline RunReport assemble_report(const PipelineResult& result, const TemplateSet& templates) {
  RunReport report;
  report.per_stage["1-filter"] = tally(result.stage1);
  report.per_stage["2-classify"] = tally(result.stage2);
  report.per_stage["3-generate"] = tally(result.stage3);
  report.per_stage["4-validate_qa"] = tally(result.stage4);
  report.per_stage["5-validate_rubric"] = tally(result.stage5);
  report.per_stage["6-finalize"] = tally(result.stage6);
  detail::count_reasons(result.stage1, report.rejection_reasons);
  detail::count_reasons(result.stage2, report.rejection_reasons);
  detail::count_reasons(result.stage3, report.rejection_reasons);
  detail::count_reasons(result.stage4, report.rejection_reasons);
  detail::count_reasons(result.stage5, report.rejection_reasons);
  detail::count_reasons(result.stage6, report.rejection_reasons);

  report.stats = compute_stats(result.instances);
  report.documents_in = result.stage1.size();
  report.drafts = report.per_stage["3-generate"].accepted;
  report.instances_out = result.instances.size();
  if (report.documents_in > 0)
    report.retention_from_documents =
        static_cast<double>(report.instances_out) / static_cast<double>(report.documents_in);
  if (report.drafts > 0)
    report.retention_from_drafts =
        static_cast<double>(report.instances_out) / static_cast<double>(report.drafts);
  report.prompt_digests = templates.digests();
  return report;
}

// Streams documents through stages 1-6. Output ordering is id-sorted, never
// arrival-ordered, so runs are byte-identical across worker counts.
inline PipelineResult run_pipeline(const std::vector<Document>& documents,
                                   const StageContext& ctx, const PipelineOptions& options) {
  ctx.validate();
  options.validate();
  {
    std::set<std::string> ids;
    for (const Document& doc : documents)
      if (!ids.insert(doc.id).second)
        throw ValidationError("duplicate document id: " + doc.id);
  }

  PipelineResult result;
  result.stage1 = run_stage1(documents, ctx, options.workers);
  result.stage2 = run_stage2(result.stage1, ctx, options.workers);
  result.stage3 = run_stage3(result.stage2, ctx, options.persona_fanout, options.workers);
  result.stage4 = run_stage4(result.stage3, ctx, options.workers);
  result.stage5 = run_stage5(result.stage4);
  FinalizeResult finalized = stage6_finalize(result.stage5, options);
  result.stage6 = std::move(finalized.records);
  result.instances = std::move(finalized.instances);
  result.report = assemble_report(result, *ctx.templates);
  return result;
}

// ---------------------------------------------------------------------------
// File I/O
// ---------------------------------------------------------------------------

inline std::vector<Document> parse_documents(std::istream& in) {
  std::vector<Document> docs;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim_view(line).empty()) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded())
      throw ParseError("malformed JSON on line " + std::to_string(line_no), line_no);
    try {
      docs.push_back(detail::document_from_json(rec));
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!ids.insert(docs.back().id).second)
      throw ValidationError("line " + std::to_string(line_no) +
                            ": duplicate document id: " + docs.back().id);
  }
  return docs;
}

inline std::vector<Document> parse_documents(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  return parse_documents(in);
}

inline void write_stage_records(const std::vector<StageRecord>& records,
                                const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const StageRecord& record : records) out << stage_record_to_json(record).dump() << '\n';
  if (!out) throw IoError("write failed: " + path);
}

inline std::vector<StageRecord> parse_stage_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::vector<StageRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim_view(line).empty()) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded())
      throw ParseError(path + ": malformed JSON on line " + std::to_string(line_no), line_no);
    try {
      records.push_back(stage_record_from_json(rec));
    } catch (const ValidationError& e) {
      throw ValidationError(path + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

inline std::string stage_file_name(Stage stage) {
  switch (stage) {
    case Stage::filter: return "stage1_filter.jsonl";
    case Stage::classify: return "stage2_classify.jsonl";
    case Stage::generate: return "stage3_generate.jsonl";
    case Stage::validate_qa: return "stage4_validate_qa.jsonl";
    case Stage::validate_rubric: return "stage5_validate_rubric.jsonl";
    case Stage::finalize: return "stage6_finalize.jsonl";
  }
  return "stage1_filter.jsonl";
}

}  // namespace rforge

#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rubricforge/backend.hpp"
#include "rubricforge/core.hpp"
#include "rubricforge/digest.hpp"
#include "rubricforge/errors.hpp"
#include "rubricforge/strings.hpp"

namespace rforge {

// Behavior script for the deterministic mock backend. Rates are decided per
// record by hashing prompt content with the seed, so decisions are stable
// across runs, worker counts, and call order.
struct MockScript {
  // Stage 1: fraction of documents rejected as unqualified.
  double filter_reject_rate = 0.0;

  // Stage 4: independent firing rates per failure field.
  double qa_no_context_rate = 0.0;
  double qa_wrong_answer_rate = 0.0;
  double qa_info_leakage_rate = 0.0;
  double qa_rubric_unsuitable_rate = 0.0;

  // Stage 3 rubric shape.
  enum class RubricShape {
    banded,  // complexity uniform over {simple,medium,complex}, count within band
    table3,  // counts in {10,11,12}: mean 11, median 11
  };
  RubricShape rubric_shape = RubricShape::banded;
  double negative_fraction = 0.27;

  // Stage 2 persona fan-out (1..3).
  int persona_count = 3;

  // Judge behavior. substring: score 1 iff the criterion text occurs in the
  // response (an oracle for synthetic responses built from criterion texts).
  enum class JudgeMode { substring, constant };
  JudgeMode judge_mode = JudgeMode::substring;
  double judge_constant = 1.0;

  int blind_score = 7;          // blind judge integer reply
  int reference_mid_score = 5;  // reference judge reply when neither identical nor empty

  // HTTP-style statuses thrown for the first N transport calls, for retry tests.
  std::vector<int> initial_failures;
};

// Deterministic generator/judge/classifier stand-in. Classifies each request
// by the distinctive markers of the built-in templates and derives every
// decision from fnv1a64(seed, content), so the same seed and request always
// produce byte-identical replies.
class MockBackend : public Backend {
 public:
  explicit MockBackend(std::uint64_t seed, MockScript script = {})
      : seed_(seed), script_(std::move(script)) {}

  ChatResponse complete(const ChatRequest& request) override {
    const std::size_t call = calls_.fetch_add(1);
    if (call < script_.initial_failures.size()) {
      const int status = script_.initial_failures[call];
      if (status == 429 || status >= 500)
        throw TransportError("mock scripted failure " + std::to_string(status), status, 1);
      throw ProtocolError("mock scripted failure " + std::to_string(status), status);
    }

    const std::string& content = request.messages.back().content;
    std::string reply;
    if (content.find("You are a data quality analyst") != std::string::npos) {
      reply = stage1_reply(content);
    } else if (content.find("identify the domain and persona") != std::string::npos) {
      reply = stage2_reply(content);
    } else if (content.find("Generate a question-answer pair from the material") !=
               std::string::npos) {
      reply = stage3_reply(content);
    } else if (content.find("You are a data quality checker") != std::string::npos) {
      reply = stage4_reply(content);
    } else if (content.find("decide the degree to which the candidate response") !=
               std::string::npos) {
      reply = judge_criterion_reply(content);
    } else if (content.find("Rate the overall quality") != std::string::npos) {
      reply = json{{"thought", "holistic"}, {"score", script_.blind_score}}.dump();
    } else if (content.find("Compare the candidate response with the reference answer") !=
               std::string::npos) {
      reply = judge_reference_reply(content);
    } else {
      throw ContractError("mock backend cannot classify request");
    }

    ChatResponse response;
    // Occasionally fence the JSON to keep reply extraction honest downstream.
    if (hash("fence", reply) % 3 == 0)
      response.content = "Here is the result:\n```json\n" + reply + "\n```";
    else
      response.content = reply;
    response.usage.prompt_tokens = static_cast<long>(content.size() / 4);
    response.usage.completion_tokens = static_cast<long>(reply.size() / 4);
    return response;
  }

  std::size_t calls() const { return calls_.load(); }

 private:
  std::uint64_t hash(std::string_view tag, std::string_view text) const {
    return fnv1a64(text, fnv1a64(tag, seed_));
  }

  // Uniform in [0,1) from the top 53 bits.
  double unit(std::string_view tag, std::string_view text) const {
    return static_cast<double>(hash(tag, text) >> 11) * 0x1.0p-53;
  }

  static std::string_view section_after(std::string_view content, std::string_view marker) {
    auto pos = content.find(marker);
    if (pos == std::string_view::npos)
      throw ContractError("mock expected marker: " + std::string(marker));
    return trim_view(content.substr(pos + marker.size()));
  }

  static std::string_view line_after(std::string_view content, std::string_view marker) {
    std::string_view rest = section_after(content, marker);
    auto eol = rest.find('\n');
    return trim_view(eol == std::string_view::npos ? rest : rest.substr(0, eol));
  }

  static std::string hex16(std::uint64_t value) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
      out[i] = digits[value & 0xF];
      value >>= 4;
    }
    return out;
  }

  std::string doc_slug(std::string_view material) const {
    return "src-" + hex16(fnv1a64(material, seed_));
  }

  // Stage 3 embeds the slug in the question; stage 4 recovers it here so both
  // derive the same complexity for one document.
  static std::string_view find_slug(std::string_view text) {
    auto is_hex = [](char c) {
      return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
    };
    for (std::size_t pos = text.find("src-"); pos != std::string_view::npos;
         pos = text.find("src-", pos + 1)) {
      if (pos + 20 > text.size()) break;
      bool ok = true;
      for (std::size_t i = pos + 4; i < pos + 20; ++i) ok = ok && is_hex(text[i]);
      if (ok) return text.substr(pos, 20);
    }
    throw ContractError("mock found no source slug in prompt");
  }

  Complexity pick_complexity(std::string_view slug) const {
    if (script_.rubric_shape == MockScript::RubricShape::table3) {
      // counts {10,11,12}; 10 sits in the medium band, 11..12 in complex
      return criteria_count(slug) == 10 ? Complexity::medium : Complexity::complex_;
    }
    switch (hash("cx", slug) % 3) {
      case 0: return Complexity::simple;
      case 1: return Complexity::medium;
      default: return Complexity::complex_;
    }
  }

  std::size_t criteria_count(std::string_view slug) const {
    if (script_.rubric_shape == MockScript::RubricShape::table3)
      return 10 + hash("count", slug) % 3;
    auto band = complexity_band(pick_complexity(slug));
    return band.min_criteria + hash("count", slug) % (band.max_criteria - band.min_criteria + 1);
  }

  std::string stage1_reply(std::string_view content) const {
    std::string_view material = section_after(content, "Material:");
    const bool qualified = unit("filter", material) >= script_.filter_reject_rate;
    return json{{"thought", "screened"}, {"qualified", qualified ? "Y" : "N"}}.dump();
  }

  std::string stage2_reply(std::string_view content) const {
    std::string_view material = section_after(content, "Material:");
    const auto& names = DomainLabel::names();
    std::string domain(names[hash("domain", material) % names.size()]);
    static constexpr std::string_view kPersonaPool[] = {
        "subject-matter professional", "undergraduate student", "industry practitioner",
        "curious generalist",          "policy analyst",        "family caregiver",
    };
    std::string personas;
    const int count = std::max(1, std::min(script_.persona_count, 3));
    const std::uint64_t base = hash("persona", material);
    for (int i = 0; i < count; ++i) {
      if (i > 0) personas += "; ";
      personas += kPersonaPool[(base + static_cast<std::uint64_t>(i) * 7) % 6];
    }
    return json{{"thought", "classified"}, {"domain", domain}, {"persona", personas}}.dump();
  }

  std::string stage3_reply(std::string_view content) const {
    std::string_view material = section_after(content, "Material:");
    std::string_view persona = line_after(content, "Persona:");
    const std::string slug = doc_slug(material);

    const std::string question =
        "For the subject covered in " + slug + ", explain the central findings, their context, " +
        "and the practical implications a " + std::string(persona) + " should know.";
    const std::string answer =
        "The material behind " + slug + " establishes its central findings, walks through the " +
        "supporting evidence, and highlights the caveats practitioners routinely miss.";

    const std::size_t count = criteria_count(slug);
    std::size_t negatives = static_cast<std::size_t>(
        static_cast<double>(count) * script_.negative_fraction + 0.5);
    negatives = std::min(std::max<std::size_t>(negatives, 1), count - 1);

    json rubrics = json::array();
    for (std::size_t k = 0; k < count; ++k) {
      const bool negative = k >= count - negatives;
      const int magnitude = 1 + static_cast<int>(hash("w" + std::to_string(k), slug) % 10);
      // "fact-7 of <slug>" is never a substring of "fact-12 of <slug>".
      rubrics.push_back(
          {{"criterion", (negative ? "omits caveat-" : "covers key fact-") +
                             std::to_string(k) + " of " + slug},
           {"points", negative ? -magnitude : magnitude}});
    }
    return json{{"thought", "generated"},
                {"question", question},
                {"answer", answer},
                {"rubrics", std::move(rubrics)}}
        .dump();
  }

  std::string stage4_reply(std::string_view content) const {
    std::string_view question = line_after(content, "Question:");
    std::string_view slug = find_slug(question);

    const bool no_context = unit("ctx", slug) < script_.qa_no_context_rate;
    const bool wrong = unit("ans", slug) < script_.qa_wrong_answer_rate;
    const bool leak = unit("leak", slug) < script_.qa_info_leakage_rate;
    const bool unsuitable = unit("suit", slug) < script_.qa_rubric_unsuitable_rate;
    static constexpr std::string_view kLevels[] = {"low", "medium", "high"};
    return json{{"thought", "checked"},
                {"has_context", no_context ? "N" : "Y"},
                {"answer_correctness", wrong ? "N" : "Y"},
                {"info_leakage", leak ? "Y" : "N"},
                {"question_complexity", std::string(to_string(pick_complexity(slug)))},
                {"answer_detail_level", std::string(kLevels[hash("detail", slug) % 3])},
                {"rubric_suitable", unsuitable ? "N" : "Y"}}
        .dump();
  }

  std::string judge_criterion_reply(std::string_view content) const {
    if (script_.judge_mode == MockScript::JudgeMode::constant)
      return json{{"thought", "judged"}, {"score", script_.judge_constant}}.dump();
    std::string criterion(line_after(content, "Criterion:"));
    std::string_view response = section_after(content, "Candidate response:");
    const bool satisfied = response.find(criterion) != std::string_view::npos;
    return json{{"thought", "judged"}, {"score", satisfied ? 1 : 0}}.dump();
  }

  std::string judge_reference_reply(std::string_view content) const {
    std::string_view tail = section_after(content, "Reference answer:");
    auto split_pos = tail.find("Candidate response:");
    if (split_pos == std::string_view::npos)
      throw ContractError("mock expected candidate response section");
    std::string reference = normalize_text(tail.substr(0, split_pos));
    std::string response = normalize_text(tail.substr(split_pos + 19));
    int score = script_.reference_mid_score;
    if (response.empty())
      score = 0;
    else if (response == reference)
      score = 10;
    return json{{"thought", "compared"}, {"score", score}}.dump();
  }

  std::uint64_t seed_;
  MockScript script_;
  std::atomic<std::size_t> calls_{0};
};

}  // namespace rforge

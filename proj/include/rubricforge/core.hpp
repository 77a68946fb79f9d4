#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rubricforge/errors.hpp"
#include "rubricforge/strings.hpp"

namespace rforge {

// ---------------------------------------------------------------------------
// Documents and classification labels
// ---------------------------------------------------------------------------

// A raw source text, the pipeline's input unit. Ids must be unique per run;
// uniqueness is enforced where batches are assembled, not per value.
struct Document {
  std::string id;
  std::string text;
  std::string source;
  std::size_t token_estimate = 0;

  Document() = default;
  Document(std::string id_, std::string text_, std::string source_)
      : id(std::move(id_)), text(std::move(text_)), source(std::move(source_)) {
    if (id.empty()) throw ValidationError("document id is empty");
    if (trim_view(text).empty())
      throw ValidationError("document text is empty: " + id);
    token_estimate = whitespace_tokens(text).size();
  }
};

// An in-set field was present but its value is outside the closed set;
// distinct from a missing/mistyped field so stages can report it precisely.
class UnknownDomainError : public SchemaError {
 public:
  explicit UnknownDomainError(std::string raw)
      : SchemaError("unknown domain: " + std::move(raw), "domain") {}
};

// Closed set of ten domain names.
class DomainLabel {
 public:
  static const std::array<std::string_view, 10>& names() {
    static const std::array<std::string_view, 10> k = {
        "Math",
        "Coding",
        "Medicine & Health",
        "Technology & Engineering",
        "Social Science",
        "Natural Science",
        "Travel & Lifestyle",
        "Commerce & Economics",
        "Education",
        "Other",
    };
    return k;
  }

  // Case-insensitive, whitespace-collapsing match against the closed set.
  static std::optional<DomainLabel> canonicalize(std::string_view raw) {
    std::string needle = to_lower(collapse_ws(raw));
    for (std::string_view name : names()) {
      if (needle == to_lower(std::string(name))) return DomainLabel(name);
    }
    return std::nullopt;
  }

  static DomainLabel must(std::string_view raw) {
    auto label = canonicalize(raw);
    if (!label) throw UnknownDomainError(std::string(raw));
    return *label;
  }

  const std::string& value() const noexcept { return value_; }
  bool operator==(const DomainLabel& other) const = default;

 private:
  explicit DomainLabel(std::string_view value) : value_(value) {}
  std::string value_;
};

struct Persona {
  std::string description;

  Persona() = default;
  explicit Persona(std::string description_) : description(std::move(description_)) {
    if (trim_view(description).empty()) throw ValidationError("persona description is empty");
  }

  bool operator==(const Persona&) const = default;
};

// A document carries at most this many personas.
inline constexpr std::size_t kMaxPersonasPerDocument = 3;

// ---------------------------------------------------------------------------
// Rubrics
// ---------------------------------------------------------------------------

inline constexpr int kMaxCriterionWeight = 10;

// One weighted evaluation criterion. Weight is a non-zero integer in
// [-10, +10]; positive rewards desired properties, negative penalizes
// failure modes.
class Criterion {
 public:
  Criterion(std::string text, int weight) : text_(trim(text)), weight_(weight) {
    if (text_.empty()) throw ValidationError("criterion text is empty");
    if (weight_ == 0) throw ValidationError("criterion weight is zero");
    if (weight_ < -kMaxCriterionWeight || weight_ > kMaxCriterionWeight)
      throw ValidationError("criterion weight out of range: " + std::to_string(weight_));
  }

  const std::string& text() const noexcept { return text_; }
  int weight() const noexcept { return weight_; }
  bool operator==(const Criterion&) const = default;

 private:
  std::string text_;
  int weight_;
};

enum class Complexity { simple, medium, complex_ };

inline std::string_view to_string(Complexity c) {
  switch (c) {
    case Complexity::simple: return "simple";
    case Complexity::medium: return "medium";
    case Complexity::complex_: return "complex";
  }
  return "simple";
}

inline std::optional<Complexity> parse_complexity(std::string_view raw) {
  std::string v = to_lower(trim(raw));
  if (v == "simple") return Complexity::simple;
  if (v == "medium") return Complexity::medium;
  if (v == "complex") return Complexity::complex_;
  return std::nullopt;
}

struct ComplexityBand {
  std::size_t min_criteria;
  std::size_t max_criteria;
};

// Allowed criterion-count band per declared complexity.
inline ComplexityBand complexity_band(Complexity c) {
  switch (c) {
    case Complexity::simple: return {4, 6};
    case Complexity::medium: return {6, 10};
    case Complexity::complex_: return {10, 15};
  }
  throw SchemaError("unknown complexity label", "question_complexity");
}

// Ordered list of weighted criteria with a declared complexity. Construction
// enforces: count within the complexity band, at least one positive and one
// negative weight.
class Rubric {
 public:
  Rubric(std::vector<Criterion> criteria, Complexity complexity)
      : criteria_(std::move(criteria)), complexity_(complexity) {
    auto band = complexity_band(complexity_);
    if (criteria_.size() < band.min_criteria || criteria_.size() > band.max_criteria)
      throw ValidationError("criterion count " + std::to_string(criteria_.size()) +
                            " outside band for complexity " +
                            std::string(to_string(complexity_)));
    bool has_positive = false;
    bool has_negative = false;
    for (const Criterion& c : criteria_) {
      if (c.weight() > 0) has_positive = true;
      if (c.weight() < 0) has_negative = true;
    }
    if (!has_positive) throw ValidationError("rubric has no positive-weight criterion");
    if (!has_negative) throw ValidationError("rubric has no negative-weight criterion");
  }

  const std::vector<Criterion>& criteria() const noexcept { return criteria_; }
  Complexity complexity() const noexcept { return complexity_; }
  std::size_t size() const noexcept { return criteria_.size(); }
  bool operator==(const Rubric&) const = default;

 private:
  std::vector<Criterion> criteria_;
  Complexity complexity_;
};

struct RubricTotals {
  long long positive_sum = 0;
  long long negative_sum = 0;
  std::size_t count = 0;
};

// Totals over any criterion list (rubric fragments, general criteria).
inline RubricTotals rubric_totals(const std::vector<Criterion>& criteria) {
  RubricTotals t;
  t.count = criteria.size();
  for (const Criterion& c : criteria) {
    if (c.weight() > 0)
      t.positive_sum += c.weight();
    else
      t.negative_sum += c.weight();
  }
  return t;
}

inline RubricTotals rubric_totals(const Rubric& rubric) {
  return rubric_totals(rubric.criteria());
}

// ---------------------------------------------------------------------------
// Training instances
// ---------------------------------------------------------------------------

// The pipeline's output tuple: question, reference answer, rubric, metadata.
struct Instance {
  std::string id;
  std::string question;
  std::string reference_answer;
  Rubric rubric;
  DomainLabel domain;
  Persona persona;
  std::string source_id;

  Instance(std::string id_, std::string question_, std::string reference_answer_,
           Rubric rubric_, DomainLabel domain_, Persona persona_, std::string source_id_)
      : id(std::move(id_)),
        question(std::move(question_)),
        reference_answer(std::move(reference_answer_)),
        rubric(std::move(rubric_)),
        domain(std::move(domain_)),
        persona(std::move(persona_)),
        source_id(std::move(source_id_)) {
    if (id.empty()) throw ValidationError("instance id is empty");
    if (trim_view(question).empty()) throw ValidationError("instance question is empty: " + id);
    if (trim_view(reference_answer).empty())
      throw ValidationError("instance reference answer is empty: " + id);
  }
};

// ---------------------------------------------------------------------------
// Judgments and GRPO inputs
// ---------------------------------------------------------------------------

// One criterion-level judge verdict, score in [0,1] ({0,1} in binary mode).
struct Judgment {
  std::size_t criterion_index = 0;
  double score = 0.0;

  Judgment() = default;
  Judgment(std::size_t index, double score_) : criterion_index(index), score(score_) {
    if (!(score >= 0.0 && score <= 1.0))
      throw ValidationError("judgment score outside [0,1]: " + std::to_string(score));
  }
};

struct GrpoConfig {
  std::size_t group_size = 8;
  double clip_epsilon = 0.2;
  double kl_beta = 0.01;
  double advantage_epsilon = 1e-6;

  void validate() const {
    if (group_size < 2)
      throw ContractError("group size must be >= 2, got " + std::to_string(group_size));
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0))
      throw ContractError("clip epsilon must lie in (0,1)");
    if (kl_beta < 0.0) throw ContractError("kl beta must be nonnegative");
    if (!(advantage_epsilon > 0.0)) throw ContractError("advantage epsilon must be positive");
  }
};

// One sampled response with its reward and token logprobs under the current,
// behavior, and reference policies.
struct RolloutResponse {
  std::string text;
  double reward = 0.0;
  std::vector<double> logprobs_current;
  std::vector<double> logprobs_behavior;
  std::vector<double> logprobs_reference;
};

struct RolloutGroup {
  std::string question_id;
  std::vector<RolloutResponse> responses;

  void validate() const {
    if (responses.size() < 2)
      throw ContractError("rollout group needs >= 2 responses, got " +
                          std::to_string(responses.size()) + " (" + question_id + ")");
    for (std::size_t i = 0; i < responses.size(); ++i) {
      const auto& r = responses[i];
      if (r.logprobs_current.empty())
        throw ContractError("response " + std::to_string(i) + " has empty logprobs (" +
                            question_id + ")");
      if (r.logprobs_current.size() != r.logprobs_behavior.size() ||
          r.logprobs_current.size() != r.logprobs_reference.size())
        throw ContractError("response " + std::to_string(i) +
                            " logprob lists differ in length (" + question_id + ")");
    }
  }
};

}  // namespace rforge

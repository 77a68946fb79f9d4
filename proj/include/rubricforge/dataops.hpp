#pragma once

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "rubricforge/core.hpp"
#include "rubricforge/errors.hpp"
#include "rubricforge/strings.hpp"

namespace rforge {

// ---------------------------------------------------------------------------
// Dataset statistics
// ---------------------------------------------------------------------------

struct DatasetStats {
  std::size_t total_instances = 0;
  std::map<std::string, std::size_t> per_domain;
  std::size_t total_criteria = 0;
  double avg_criteria = 0.0;
  double median_criteria = 0.0;  // lower median for even counts
  std::size_t positive_criteria = 0;
  std::size_t negative_criteria = 0;
  bool empty_input = false;
};

inline DatasetStats compute_stats(const std::vector<Instance>& instances) {
  DatasetStats stats;
  stats.total_instances = instances.size();
  if (instances.empty()) {
    stats.empty_input = true;
    return stats;
  }
  std::vector<std::size_t> lengths;
  lengths.reserve(instances.size());
  for (const Instance& inst : instances) {
    stats.per_domain[inst.domain.value()] += 1;
    lengths.push_back(inst.rubric.size());
    stats.total_criteria += inst.rubric.size();
    for (const Criterion& c : inst.rubric.criteria()) {
      if (c.weight() > 0)
        stats.positive_criteria += 1;
      else
        stats.negative_criteria += 1;
    }
  }
  stats.avg_criteria =
      static_cast<double>(stats.total_criteria) / static_cast<double>(stats.total_instances);
  std::sort(lengths.begin(), lengths.end());
  stats.median_criteria = static_cast<double>(lengths[(lengths.size() - 1) / 2]);
  return stats;
}

// ---------------------------------------------------------------------------
// Deduplication
// ---------------------------------------------------------------------------

struct DedupPolicy {
  std::size_t ngram_size = 13;
  double jaccard_threshold = 0.8;

  void validate() const {
    if (ngram_size == 0) throw ConfigError("dedup ngram size must be positive");
    if (!(jaccard_threshold > 0.0 && jaccard_threshold <= 1.0))
      throw ConfigError("dedup jaccard threshold must lie in (0,1]");
  }
};

namespace detail {

// Word n-gram shingles of the normalized text. Shorter texts yield a single
// shingle of the whole token sequence, so trivially short questions still
// compare by full content.
inline std::vector<std::string> question_shingles(std::string_view question, std::size_t n) {
  std::vector<std::string> tokens = whitespace_tokens(normalize_text(question));
  std::vector<std::string> shingles;
  if (tokens.empty()) return shingles;
  auto join = [&](std::size_t begin, std::size_t end) {
    std::string s = tokens[begin];
    for (std::size_t i = begin + 1; i < end; ++i) {
      s.push_back(' ');
      s += tokens[i];
    }
    return s;
  };
  if (tokens.size() <= n) {
    shingles.push_back(join(0, tokens.size()));
  } else {
    shingles.reserve(tokens.size() - n + 1);
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) shingles.push_back(join(i, i + n));
  }
  std::sort(shingles.begin(), shingles.end());
  shingles.erase(std::unique(shingles.begin(), shingles.end()), shingles.end());
  return shingles;
}

// Jaccard similarity of two sorted unique shingle vectors.
inline double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() && b.empty()) return 0.0;
  std::size_t inter = 0;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < a.size() && j < b.size()) {
    int cmp = a[i].compare(b[j]);
    if (cmp == 0) {
      ++inter;
      ++i;
      ++j;
    } else if (cmp < 0) {
      ++i;
    } else {
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace detail

struct RemovalRecord {
  std::string id;
  std::string reason;   // duplicate-exact | duplicate-near | eval-overlap
  std::string matched;  // surviving instance id, or the matched eval question
};

struct DedupResult {
  std::vector<Instance> kept;  // sorted by id
  std::vector<RemovalRecord> removed;
};

// Exact pass on the normalized question, then a near-duplicate pass by
// n-gram Jaccard against already-kept instances. Instances are processed in
// lexicographic id order, so the smallest id always survives and results do
// not depend on input order. The shingle index only prunes pairs sharing no
// shingle (Jaccard 0), so decisions match a full pairwise scan.
inline DedupResult dedup(const std::vector<Instance>& instances, const DedupPolicy& policy) {
  policy.validate();
  DedupResult result;

  std::vector<const Instance*> order;
  order.reserve(instances.size());
  for (const Instance& inst : instances) order.push_back(&inst);
  std::sort(order.begin(), order.end(),
            [](const Instance* a, const Instance* b) { return a->id < b->id; });

  std::unordered_map<std::string, const Instance*> exact_seen;
  std::vector<const Instance*> exact_kept;
  for (const Instance* inst : order) {
    std::string norm = normalize_text(inst->question);
    auto [it, inserted] = exact_seen.emplace(std::move(norm), inst);
    if (inserted) {
      exact_kept.push_back(inst);
    } else {
      result.removed.push_back({inst->id, "duplicate-exact", it->second->id});
    }
  }

  // Near pass over the exact survivors.
  std::vector<std::vector<std::string>> kept_shingles;
  std::unordered_map<std::string, std::vector<std::size_t>> shingle_index;
  for (const Instance* inst : exact_kept) {
    std::vector<std::string> shingles =
        detail::question_shingles(inst->question, policy.ngram_size);
    std::set<std::size_t> candidates;
    for (const std::string& s : shingles) {
      auto it = shingle_index.find(s);
      if (it == shingle_index.end()) continue;
      candidates.insert(it->second.begin(), it->second.end());
    }
    const Instance* survivor = nullptr;
    for (std::size_t k : candidates) {  // ascending = id order of kept
      if (detail::jaccard(shingles, kept_shingles[k]) >= policy.jaccard_threshold) {
        survivor = &result.kept[k];
        break;
      }
    }
    if (survivor != nullptr) {
      result.removed.push_back({inst->id, "duplicate-near", survivor->id});
      continue;
    }
    const std::size_t slot = result.kept.size();
    result.kept.push_back(*inst);
    for (const std::string& s : shingles) shingle_index[s].push_back(slot);
    kept_shingles.push_back(std::move(shingles));
  }

  std::sort(result.removed.begin(), result.removed.end(),
            [](const RemovalRecord& a, const RemovalRecord& b) { return a.id < b.id; });
  return result;
}

// Drops instances whose normalized question exactly matches, or near-matches
// at the policy threshold, any provided evaluation question. Decisions are
// per-instance, so input order is preserved; an empty eval list is the
// identity transform.
inline DedupResult remove_eval_overlap(const std::vector<Instance>& instances,
                                       const std::vector<std::string>& eval_questions,
                                       const DedupPolicy& policy) {
  policy.validate();
  DedupResult result;
  if (eval_questions.empty()) {
    result.kept = instances;
    return result;
  }

  std::unordered_map<std::string, const std::string*> exact;
  std::vector<std::vector<std::string>> eval_shingles;
  eval_shingles.reserve(eval_questions.size());
  for (const std::string& q : eval_questions) {
    exact.emplace(normalize_text(q), &q);
    eval_shingles.push_back(detail::question_shingles(q, policy.ngram_size));
  }

  for (const Instance& inst : instances) {
    auto hit = exact.find(normalize_text(inst.question));
    if (hit != exact.end()) {
      result.removed.push_back({inst.id, "eval-overlap", *hit->second});
      continue;
    }
    std::vector<std::string> shingles =
        detail::question_shingles(inst.question, policy.ngram_size);
    const std::string* matched = nullptr;
    for (std::size_t k = 0; k < eval_shingles.size(); ++k) {
      if (detail::jaccard(shingles, eval_shingles[k]) >= policy.jaccard_threshold) {
        matched = &eval_questions[k];
        break;
      }
    }
    if (matched != nullptr) {
      result.removed.push_back({inst.id, "eval-overlap", *matched});
    } else {
      result.kept.push_back(inst);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Training-file serialization
// ---------------------------------------------------------------------------
// One JSON object per line, keys in canonical (alphabetical) order:
//   {"id": ..., "metadata": {"complexity","domain","persona","source_id"},
//    "prompt": [{"content": question, "role": "user"}],
//    "reference_answer": ..., "rubric": [{"criterion","weight"}, ...]}

using json = nlohmann::json;

inline json instance_to_json(const Instance& inst) {
  json rubric = json::array();
  for (const Criterion& c : inst.rubric.criteria())
    rubric.push_back({{"criterion", c.text()}, {"weight", c.weight()}});
  return json{
      {"id", inst.id},
      {"prompt", json::array({{{"role", "user"}, {"content", inst.question}}})},
      {"rubric", std::move(rubric)},
      {"reference_answer", inst.reference_answer},
      {"metadata",
       {{"domain", inst.domain.value()},
        {"persona", inst.persona.description},
        {"source_id", inst.source_id},
        {"complexity", std::string(to_string(inst.rubric.complexity()))}}},
  };
}

inline Instance instance_from_json(const json& rec) {
  for (const char* key : {"id", "prompt", "rubric", "reference_answer", "metadata"})
    if (!rec.contains(key)) throw ValidationError(std::string("missing field: ") + key);

  const json& prompt = rec.at("prompt");
  if (!prompt.is_array() || prompt.size() != 1)
    throw ValidationError("prompt must be a single-turn conversation");
  const json& turn = prompt.at(0);
  if (turn.value("role", "") != "user")
    throw ValidationError("prompt turn role must be \"user\"");
  std::string question = turn.value("content", "");

  const json& meta = rec.at("metadata");
  for (const char* key : {"domain", "persona", "source_id", "complexity"})
    if (!meta.contains(key)) throw ValidationError(std::string("missing metadata field: ") + key);
  auto domain = DomainLabel::canonicalize(meta.at("domain").get<std::string>());
  if (!domain) throw ValidationError("unknown domain: " + meta.at("domain").get<std::string>());
  auto complexity = parse_complexity(meta.at("complexity").get<std::string>());
  if (!complexity)
    throw ValidationError("unknown complexity: " + meta.at("complexity").get<std::string>());

  std::vector<Criterion> criteria;
  for (const json& entry : rec.at("rubric")) {
    if (!entry.contains("criterion") || !entry.contains("weight"))
      throw ValidationError("rubric entry needs criterion and weight");
    if (!entry.at("weight").is_number_integer())
      throw ValidationError("rubric weight must be an integer");
    criteria.emplace_back(entry.at("criterion").get<std::string>(),
                          entry.at("weight").get<int>());
  }

  return Instance(rec.at("id").get<std::string>(), std::move(question),
                  rec.at("reference_answer").get<std::string>(),
                  Rubric(std::move(criteria), *complexity), *domain,
                  Persona(meta.at("persona").get<std::string>()),
                  meta.at("source_id").get<std::string>());
}

inline void serialize_training(const std::vector<Instance>& instances, std::ostream& out) {
  for (const Instance& inst : instances) out << instance_to_json(inst).dump() << '\n';
}

inline void serialize_training(const std::vector<Instance>& instances, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  serialize_training(instances, out);
  if (!out) throw IoError("write failed: " + path);
}

inline std::vector<Instance> parse_training(std::istream& in) {
  std::vector<Instance> instances;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim_view(line).empty()) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded())
      throw ParseError("malformed JSON on line " + std::to_string(line_no), line_no);
    try {
      instances.push_back(instance_from_json(rec));
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return instances;
}

inline std::vector<Instance> parse_training(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  return parse_training(in);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline json stats_to_json(const DatasetStats& stats) {
  json per_domain = json::object();
  for (const auto& [domain, count] : stats.per_domain) per_domain[domain] = count;
  return json{
      {"total_instances", stats.total_instances},
      {"per_domain", std::move(per_domain)},
      {"total_criteria", stats.total_criteria},
      {"avg_criteria", stats.avg_criteria},
      {"median_criteria", stats.median_criteria},
      {"positive_criteria", stats.positive_criteria},
      {"negative_criteria", stats.negative_criteria},
      {"empty_input", stats.empty_input},
  };
}

// Human-readable domain-distribution and rubric-statistics tables.
inline std::string render_stats_table(const DatasetStats& stats) {
  std::ostringstream out;
  out << "Domain distribution\n";
  out << "  Domain                      #Examples\n";
  std::vector<std::pair<std::string, std::size_t>> rows(stats.per_domain.begin(),
                                                        stats.per_domain.end());
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  for (const auto& [domain, count] : rows) {
    out << "  " << domain;
    for (std::size_t i = domain.size(); i < 28; ++i) out << ' ';
    out << count << '\n';
  }
  out << "  Total";
  for (std::size_t i = 5; i < 28; ++i) out << ' ';
  out << stats.total_instances << '\n';
  out << "Rubric statistics\n";
  out << "  #Criteria          " << stats.total_criteria << '\n';
  out << "  Avg. Criteria      " << stats.avg_criteria << '\n';
  out << "  Median Criteria    " << stats.median_criteria << '\n';
  out << "  Positive Criteria  " << stats.positive_criteria << '\n';
  out << "  Negative Criteria  " << stats.negative_criteria << '\n';
  return out.str();
}

}  // namespace rforge

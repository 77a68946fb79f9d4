#pragma once

// Deterministic fixture builders shared across test binaries.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "rubricforge/core.hpp"
#include "rubricforge/dataops.hpp"

namespace fixtures {

using namespace rforge;

// Valid random rubric: count within the band of a random complexity, at
// least one positive and one negative weight, all weights in [-10,10]\{0}.
inline Rubric random_rubric(std::mt19937_64& rng) {
  static const Complexity kinds[] = {Complexity::simple, Complexity::medium,
                                     Complexity::complex_};
  Complexity complexity = kinds[rng() % 3];
  ComplexityBand band = complexity_band(complexity);
  std::uniform_int_distribution<std::size_t> count_dist(band.min_criteria, band.max_criteria);
  const std::size_t count = count_dist(rng);
  std::uniform_int_distribution<int> weight_dist(1, 10);

  std::vector<Criterion> criteria;
  for (std::size_t k = 0; k < count; ++k) {
    // Force one positive and one negative; the rest flip a coin. The text
    // ends with a delimiter so no criterion is a substring of another.
    bool negative = k == 1 || (k > 1 && rng() % 2 == 0);
    if (k == 0) negative = false;
    const int magnitude = weight_dist(rng);
    criteria.emplace_back("criterion-" + std::to_string(k) + "-mark",
                          negative ? -magnitude : magnitude);
  }
  return Rubric(std::move(criteria), complexity);
}

inline Instance make_instance(std::string id, std::string question, Rubric rubric,
                              std::string domain = "Other",
                              std::string persona = "curious generalist",
                              std::string source_id = "doc-0") {
  return Instance(std::move(id), std::move(question), "reference answer body",
                  std::move(rubric), DomainLabel::must(domain), Persona(std::move(persona)),
                  std::move(source_id));
}

inline Rubric simple_rubric(std::vector<int> weights, Complexity complexity) {
  std::vector<Criterion> criteria;
  for (std::size_t k = 0; k < weights.size(); ++k)
    criteria.emplace_back("criterion-" + std::to_string(k), weights[k]);
  return Rubric(std::move(criteria), complexity);
}

inline std::vector<Document> synthetic_documents(std::size_t count) {
  std::vector<Document> docs;
  docs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "doc-%05zu", i);
    docs.emplace_back(id,
                      "Synthetic source text number " + std::to_string(i) +
                          " covering a distinct topic with enough detail to be quotable, "
                          "including a definition, a dated fact, and a procedure.",
                      "corpus-a");
  }
  return docs;
}

// Unique scratch directory under the system temp root.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("rubricforge-" + tag + "-" + std::to_string(::getpid()) + "-" +
             std::to_string(counter_++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& name) const { return (path_ / name).string(); }

 private:
  static inline int counter_ = 0;
  std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

inline void write_documents(const std::vector<Document>& docs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  for (const Document& doc : docs)
    out << json{{"id", doc.id}, {"text", doc.text}, {"source", doc.source}}.dump() << '\n';
}

}  // namespace fixtures

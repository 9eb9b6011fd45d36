#ifndef RELBOW_PROPAGATION_HPP
#define RELBOW_PROPAGATION_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "relbow/corpus.hpp"
#include "relbow/relevance.hpp"

namespace relbow {

struct HashedNgramConfig {
  std::uint32_t hash_bits = 18;  // feature dimension 2^hash_bits
  int char_min = 3;
  int char_max = 5;
  bool word_unigrams = true;

  std::size_t dimension() const { return std::size_t{1} << hash_bits; }
};

// (hashed index, weight) features of one text: word unigrams plus
// space-padded character n-grams, L2-normalized.
std::vector<std::pair<std::uint32_t, float>> hash_features(std::string_view text,
                                                           const HashedNgramConfig& config);

// Multinomial linear model over hashed n-gram features; labels the corpus
// in place of a fine-tuned sequence model.
struct RelevanceModel {
  HashedNgramConfig ngrams;
  std::array<std::vector<float>, 3> weights;  // one row per RelevanceLabel
  std::array<float, 3> bias = {0, 0, 0};
  std::uint64_t seed = 0;
  std::string config_digest;

  std::string model_id() const { return "hashlm-" + config_digest; }

  std::array<double, 3> predict_proba(std::string_view text) const;
  // Ties break toward the lower code (High over Medium over Low).
  std::pair<RelevanceLabel, std::array<double, 3>> predict(std::string_view text) const;
};

struct PropagationConfig {
  HashedNgramConfig ngrams;
  double lambda = 1e-5;
  int max_iter = 200;
  double tol = 1e-5;
  double holdout_fraction = 0.1;
  std::uint64_t seed = 1;

  std::string digest() const;
};

struct ConfusionMatrix3 {
  std::uint64_t counts[3][3] = {};  // [truth][predicted], label code - 1

  std::uint64_t support(RelevanceLabel truth) const {
    const int r = code(truth) - 1;
    return counts[r][0] + counts[r][1] + counts[r][2];
  }
};

struct PropagationReport {
  double holdout_accuracy = 0.0;
  std::uint64_t holdout_size = 0;
  ConfusionMatrix3 holdout_confusion;
  std::array<std::uint64_t, 3> corpus_label_counts = {0, 0, 0};  // filled by label_corpus
};

// Trains on LLM-annotated records (>= 3 per label required); a stratified
// held-out fold measures agreement with the annotations.
std::pair<RelevanceModel, PropagationReport> train_relevance_model(
    std::span<const AnnotationRecord> records, std::span<const Publication> publications,
    const PropagationConfig& config);

// One record per publication in the corpus. Posts present in `llm_records`
// keep their record verbatim; the rest are predicted with source=Propagated.
std::vector<AnnotationRecord> label_corpus(const RelevanceModel& model, const Corpus& corpus,
                                           std::span<const AnnotationRecord> llm_records,
                                           PropagationReport* report = nullptr);

void save_relevance_model(const RelevanceModel& model, const std::filesystem::path& path);
RelevanceModel load_relevance_model(const std::filesystem::path& path);

}  // namespace relbow

#endif  // RELBOW_PROPAGATION_HPP

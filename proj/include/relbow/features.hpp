#ifndef RELBOW_FEATURES_HPP
#define RELBOW_FEATURES_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "relbow/corpus.hpp"
#include "relbow/relevance.hpp"

namespace relbow {

using LabelMap = std::unordered_map<std::string, RelevanceLabel>;  // post_id -> label

struct FeatureConfig {
  std::size_t k_high = 6000;
  std::size_t k_medium = 6000;
  std::size_t k_low = 3000;
  std::size_t seq_cap = 40000;
  int seq_order = 2;
  std::uint32_t min_df = 2;
  // Ablation: one vocabulary over all posts with k = k_high + k_medium + k_low.
  bool pooled_text = false;

  std::size_t text_capacity() const { return k_high + k_medium + k_low; }
};

struct StratumVocab {
  std::vector<std::string> tokens;  // lexicographic; position = column index
  std::vector<std::uint32_t> doc_freq;
  std::uint32_t min_df = 2;
  std::unordered_map<std::string, std::uint32_t> index;

  std::size_t size() const { return tokens.size(); }
};

// Sparse user-level count rows over one vocabulary; entries sorted by column.
using SparseRow = std::vector<std::pair<std::uint32_t, double>>;

struct CountMatrix {
  std::vector<std::string> user_ids;
  std::vector<SparseRow> rows;
  std::size_t cols = 0;
};

struct StratifiedBow {
  std::array<StratumVocab, 3> vocabs;    // [RelevanceLabel code - 1]
  std::array<CountMatrix, 3> matrices;   // rows aligned with `users`
  std::vector<std::string> users;        // Train users, corpus order
  std::vector<UserClass> classes;
};

StratifiedBow build_stratified_bow(const Corpus& corpus, const LabelMap& labels,
                                   const FeatureConfig& config);

// Returned for columns separating the classes with zero within-class
// variance; strictly above any finite F value.
inline constexpr double kMaxFScore = std::numeric_limits<double>::max();

// One-way ANOVA F statistic per column. Zero overall variance scores 0.
std::vector<double> univariate_f_scores(const CountMatrix& matrix,
                                        std::span<const UserClass> y);

// Indices of the k largest scores, ties toward the lower index, ascending.
std::vector<std::uint32_t> select_top_k(std::span<const double> scores, std::size_t k);

// Counts of consecutive label n-grams; keys use one of {h,m,l} per position.
std::map<std::string, std::uint32_t> label_sequence_ngrams(
    std::span<const RelevanceLabel> labels, int order);

std::string ngram_key(std::span<const RelevanceLabel> window);

struct SequenceVocab {
  int order = 2;
  std::vector<std::string> ngrams;  // lexicographic
  std::unordered_map<std::string, std::uint32_t> index;

  std::size_t size() const { return ngrams.size(); }
};

// Frozen feature definition: vocabularies, selected columns per stratum and
// the label-n-gram block, all fitted on the Train split only.
struct FeatureSpace {
  FeatureConfig config;
  std::array<StratumVocab, 3> vocabs;                   // pooled: only [0] used
  std::array<std::vector<std::uint32_t>, 3> selected;   // ascending vocab indices
  SequenceVocab seq_vocab;
  std::vector<std::uint32_t> seq_selected;

  std::size_t block_width(int block) const { return selected[block].size(); }
  std::size_t text_width() const {
    return selected[0].size() + selected[1].size() + selected[2].size();
  }
  std::size_t seq_width() const { return seq_selected.size(); }
  std::size_t width() const { return text_width() + seq_width(); }
  // offsets of the four blocks [high, medium, low, sequence]
  std::array<std::size_t, 4> block_offsets() const;
};

FeatureSpace fit_feature_space(const Corpus& corpus, const LabelMap& labels,
                               const FeatureConfig& config);

struct UserFeatureVector {
  std::string user_id;
  SparseRow entries;  // sorted by index
  std::size_t width = 0;
  std::array<std::size_t, 4> offsets = {0, 0, 0, 0};
};

UserFeatureVector transform_user(const FeatureSpace& space, const Timeline& timeline,
                                 const LabelMap& labels);

void save_feature_space(const FeatureSpace& space, const std::filesystem::path& path);
FeatureSpace load_feature_space(const std::filesystem::path& path);

// Sparse triplet export, one "row col value" line per entry. All-zero rows
// write no lines, so loading needs the row count.
void write_triplets(std::span<const UserFeatureVector> vectors,
                    const std::filesystem::path& path);
std::vector<SparseRow> load_triplets(const std::filesystem::path& path, std::size_t n_rows);

}  // namespace relbow

#endif  // RELBOW_FEATURES_HPP

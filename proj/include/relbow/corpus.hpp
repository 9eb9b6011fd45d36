#ifndef RELBOW_CORPUS_HPP
#define RELBOW_CORPUS_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace relbow {

// Diagnosed is the positive class for every metric in the project.
enum class UserClass { Diagnosed, Control };

enum class Split { Train, Test };

const char* to_string(UserClass c);
const char* to_string(Split s);

struct Publication {
  std::string user_id;
  std::string post_id;  // unique corpus-wide
  std::int64_t timestamp = 0;
  std::string text;
};

// One user's time-ordered posting history; the unit of classification.
struct Timeline {
  std::string user_id;
  UserClass label = UserClass::Control;
  std::optional<Split> split;
  std::vector<Publication> publications;  // ascending timestamp
};

struct Corpus {
  std::vector<Timeline> timelines;

  std::uint64_t publication_count() const;
  bool fully_split() const;
};

struct StatRow {
  std::uint64_t diagnosed = 0;
  std::uint64_t control = 0;
  std::uint64_t overall() const { return diagnosed + control; }
};

struct CorpusStats {
  StatRow users;
  StatRow publications;
  StatRow words;  // counted with the default tokenizer
};

// Planted-signal token tier: one token from `tokens` is inserted into a
// post whose sampled tier matches, with per-class tier probabilities held
// in SynthConfig.
struct TierSpec {
  std::vector<std::string> tokens;
  double p_diagnosed = 0.0;
  double p_control = 0.0;
};

// Tokens whose emission probability depends on both the user class and the
// tier of the post they land in. They let a synthetic corpus carry signal
// that only a relevance-stratified representation can see (e.g. equal
// marginal rates but opposite tier placement across classes).
struct ContextTokenSpec {
  std::vector<std::string> tokens;
  double p_diagnosed_high = 0.0;
  double p_diagnosed_medium = 0.0;
  double p_diagnosed_low = 0.0;
  double p_control_high = 0.0;
  double p_control_medium = 0.0;
  double p_control_low = 0.0;
};

struct SynthConfig {
  std::uint32_t n_diagnosed = 10;
  std::uint32_t control_ratio = 7;
  std::uint32_t min_posts = 40;
  std::uint32_t max_posts = 80;
  std::uint32_t min_tokens = 5;   // background tokens per post
  std::uint32_t max_tokens = 12;
  std::uint32_t background_vocab = 500;
  TierSpec high;
  TierSpec medium;
  TierSpec low;
  std::vector<ContextTokenSpec> context_tokens;
  std::uint64_t seed = 1;

  void validate() const;  // throws InvalidConfig
};

inline constexpr std::size_t kDefaultSampleSize = 30000;

// Line-delimited records, one timeline per line; see README for the schema.
Corpus load_corpus(const std::filesystem::path& path);

// Canonical form: publications ascending by timestamp, keys sorted, one
// compact JSON object per line. write_corpus(load_corpus(f)) is a fixpoint.
void write_corpus(const Corpus& corpus, const std::filesystem::path& path);

CorpusStats compute_stats(const Corpus& corpus);

std::string stats_text_table(const CorpusStats& stats);

// Uniform sample without replacement from the Train split.
std::vector<Publication> sample_publications(const Corpus& corpus, std::size_t n,
                                             std::uint64_t seed);

Corpus generate_synthetic(const SynthConfig& config);

// Stratified by class; users already carrying a split tag are left alone.
Corpus split_corpus(Corpus corpus, double test_fraction, std::uint64_t seed);

}  // namespace relbow

#endif  // RELBOW_CORPUS_HPP

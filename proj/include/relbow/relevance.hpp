#ifndef RELBOW_RELEVANCE_HPP
#define RELBOW_RELEVANCE_HPP

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "relbow/corpus.hpp"

namespace relbow {

// Ordinal relevance grade of one publication to mental-health signals.
// Codes follow the response scale: 1 = High, 2 = Medium, 3 = Low.
enum class RelevanceLabel : int { High = 1, Medium = 2, Low = 3 };

inline int code(RelevanceLabel l) { return static_cast<int>(l); }
RelevanceLabel label_from_code(int c);  // throws Unparseable for codes outside 1..3
const char* to_string(RelevanceLabel l);
inline constexpr RelevanceLabel kAllLabels[] = {RelevanceLabel::High, RelevanceLabel::Medium,
                                                RelevanceLabel::Low};

struct PromptTemplate {
  std::string text;  // must contain the placeholder "{TEXT}" exactly once

  void validate() const;        // throws InvalidTemplate
  std::string digest() const;   // binds annotation records to this template
  static PromptTemplate standard();
};

inline constexpr std::size_t kDefaultPromptBudget = 1000;  // code points of post text
inline constexpr const char* kTruncationMarker = "...";

// Substitutes the post text into the template, truncating the text to
// `char_budget` code points with a visible marker.
std::string render_prompt(const PromptTemplate& tpl, std::string_view text,
                          std::size_t char_budget = kDefaultPromptBudget);

// First standalone digit in {1,2,3} wins; throws Unparseable otherwise.
RelevanceLabel parse_response(std::string_view raw);

enum class AnnotationSource { Llm, Propagated };
const char* to_string(AnnotationSource s);

struct AnnotationRecord {
  std::string post_id;
  RelevanceLabel label = RelevanceLabel::Low;
  std::string raw_response;  // non-empty iff source == Llm
  AnnotationSource source = AnnotationSource::Llm;
  std::string model_id;
  std::string template_hash;
};

std::string record_to_json_line(const AnnotationRecord& rec);
AnnotationRecord record_from_json_line(const std::string& line);  // throws SchemaError
std::vector<AnnotationRecord> load_records(const std::filesystem::path& path);
void write_records(std::span<const AnnotationRecord> records,
                   const std::filesystem::path& path);

// Durable map (post_id, template_hash, model_id) -> AnnotationRecord.
// Backed by an append-only line file; the last record per key wins, and
// compact() rewrites the file with one line per key.
class AnnotationCache {
 public:
  explicit AnnotationCache(std::filesystem::path file);

  std::optional<AnnotationRecord> find(const std::string& post_id,
                                       const std::string& template_hash,
                                       const std::string& model_id) const;
  void put(const AnnotationRecord& rec);
  void compact();
  std::size_t size() const;
  const std::filesystem::path& path() const { return file_; }

 private:
  std::filesystem::path file_;
  std::unordered_map<std::string, AnnotationRecord> map_;
  mutable std::mutex mutex_;
};

struct ChatRequest {
  std::string model;
  std::string prompt;     // fully rendered instruction
  std::string user_text;  // bare post text (rule-based clients key on this)
  double temperature = 0.0;
};

// One completion call. Implementations throw EndpointError on transport or
// remote failures; those are retried by annotate_batch.
class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual std::string complete(const ChatRequest& request) = 0;
};

// HTTP client speaking the common chat-completions JSON format.
struct HttpChatConfig {
  std::string base_url = "https://api.openai.com";
  std::string endpoint_path = "/v1/chat/completions";
  std::string api_key;
  int timeout_seconds = 30;
};
std::unique_ptr<ChatClient> make_http_chat_client(const HttpChatConfig& config);

// Deterministic keyword-rule annotator: replies "1" when the post contains a
// high keyword, "2" for a medium keyword, "3" otherwise. Stands in for the
// live endpoint in offline runs.
struct MockRules {
  std::vector<std::string> high_keywords;
  std::vector<std::string> medium_keywords;
};
std::unique_ptr<ChatClient> make_rule_chat_client(MockRules rules);

struct AnnotateConfig {
  std::string model_id = "gpt-3.5-turbo";
  double temperature = 0.0;
  std::size_t prompt_char_budget = kDefaultPromptBudget;
  int max_attempts = 3;
  double backoff_initial_ms = 100.0;
  double backoff_factor = 2.0;
  double backoff_max_ms = 5000.0;
  std::size_t concurrency = 4;
  double requests_per_second = 0.0;  // 0 = unlimited
  std::string api_key_env = "RELBOW_API_KEY";
};

struct AnnotateFailure {
  std::string post_id;
  std::string error;
  int attempts = 0;
};

struct AnnotateResult {
  std::vector<AnnotationRecord> records;  // successes, in input order
  std::vector<AnnotateFailure> failures;
  std::size_t cache_hits = 0;
  std::size_t network_calls = 0;
};

// Annotates a batch of publications. The cache is consulted before any call
// and written after every successful parse; item failures are collected, not
// thrown. `client` may be null when every item is already cached; a miss
// without a client raises ConfigError naming the credential variable.
AnnotateResult annotate_batch(std::span<const Publication> publications,
                              const PromptTemplate& tpl, ChatClient* client,
                              AnnotationCache& cache, const AnnotateConfig& config);

struct DistributionCell {
  std::uint64_t publications = 0;
  std::uint64_t tokens = 0;
  double publications_pct = 0.0;
  double tokens_pct = 0.0;
};

// Table of publication/token counts per class and relevance grade, with
// percentages relative to the class totals.
struct DistributionReport {
  DistributionCell cells[2][3];  // [UserClass][RelevanceLabel code - 1]
  std::uint64_t class_publications[2] = {0, 0};
  std::uint64_t class_tokens[2] = {0, 0};

  const DistributionCell& cell(UserClass c, RelevanceLabel l) const {
    return cells[static_cast<int>(c)][code(l) - 1];
  }
};

DistributionReport distribution_of(std::span<const AnnotationRecord> records,
                                   const Corpus& corpus);

std::string distribution_text_table(const DistributionReport& report);

}  // namespace relbow

#endif  // RELBOW_RELEVANCE_HPP

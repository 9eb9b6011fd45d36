#include "relbow/relevance.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>
#include <unordered_set>

#include <json.hpp>

#include "relbow/digest.hpp"
#include "relbow/errors.hpp"
#include "relbow/text.hpp"

namespace relbow {

using nlohmann::json;

RelevanceLabel label_from_code(int c) {
  if (c < 1 || c > 3) throw Unparseable("relevance code out of range: " + std::to_string(c));
  return static_cast<RelevanceLabel>(c);
}

const char* to_string(RelevanceLabel l) {
  switch (l) {
    case RelevanceLabel::High:
      return "high";
    case RelevanceLabel::Medium:
      return "medium";
    default:
      return "low";
  }
}

const char* to_string(AnnotationSource s) {
  return s == AnnotationSource::Llm ? "llm" : "propagated";
}

namespace {
constexpr const char* kPlaceholder = "{TEXT}";

std::size_t count_placeholders(const std::string& text) {
  std::size_t count = 0;
  for (std::size_t pos = text.find(kPlaceholder); pos != std::string::npos;
       pos = text.find(kPlaceholder, pos + 1))
    ++count;
  return count;
}
}  // namespace

void PromptTemplate::validate() const {
  const std::size_t n = count_placeholders(text);
  if (n != 1)
    throw InvalidTemplate("template must contain {TEXT} exactly once, found " +
                          std::to_string(n));
}

std::string PromptTemplate::digest() const { return digest_hex(text); }

PromptTemplate PromptTemplate::standard() {
  PromptTemplate tpl;
  tpl.text =
      "You are screening social media posts for signals of depression.\n"
      "Signals include: persistent sadness or low mood; loss of interest or\n"
      "pleasure in usual activities; sleep or appetite changes; fatigue or\n"
      "low energy; feelings of worthlessness or excessive guilt; trouble\n"
      "concentrating; mentions of death, self-harm or suicide.\n"
      "\n"
      "Rate how relevant the post below is to these signals.\n"
      "Answer with a single digit and nothing else:\n"
      "1 = high relevance\n"
      "2 = medium relevance\n"
      "3 = low relevance\n"
      "\n"
      "Post: {TEXT}\n";
  return tpl;
}

std::string render_prompt(const PromptTemplate& tpl, std::string_view text,
                          std::size_t char_budget) {
  tpl.validate();
  std::string body;
  if (count_codepoints(text) > char_budget) {
    body = std::string(codepoint_prefix(text, char_budget)) + kTruncationMarker;
  } else {
    body = std::string(text);
  }
  std::string out = tpl.text;
  out.replace(out.find(kPlaceholder), std::char_traits<char>::length(kPlaceholder), body);
  return out;
}

RelevanceLabel parse_response(std::string_view raw) {
  auto alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const char c = raw[i];
    if (c < '1' || c > '3') continue;
    const bool left_ok = i == 0 || !alnum(raw[i - 1]);
    const bool right_ok = i + 1 == raw.size() || !alnum(raw[i + 1]);
    if (left_ok && right_ok) return label_from_code(c - '0');
  }
  throw Unparseable("no standalone relevance digit 1-3 in response: \"" +
                    std::string(raw.substr(0, 80)) + "\"");
}

std::string record_to_json_line(const AnnotationRecord& rec) {
  json j;
  j["post_id"] = rec.post_id;
  j["label"] = code(rec.label);
  j["raw_response"] = rec.raw_response;
  j["source"] = to_string(rec.source);
  j["model_id"] = rec.model_id;
  j["template_hash"] = rec.template_hash;
  return j.dump();
}

AnnotationRecord record_from_json_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad annotation record: ") + e.what());
  }
  AnnotationRecord rec;
  try {
    rec.post_id = j.at("post_id").get<std::string>();
    rec.label = label_from_code(j.at("label").get<int>());
    rec.raw_response = j.value("raw_response", std::string{});
    const std::string source = j.at("source").get<std::string>();
    if (source == "llm") {
      rec.source = AnnotationSource::Llm;
    } else if (source == "propagated") {
      rec.source = AnnotationSource::Propagated;
    } else {
      throw SchemaError("bad annotation source \"" + source + "\"");
    }
    rec.model_id = j.value("model_id", std::string{});
    rec.template_hash = j.value("template_hash", std::string{});
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad annotation record: ") + e.what());
  }
  if (rec.source == AnnotationSource::Llm && rec.raw_response.empty())
    throw SchemaError("llm annotation record with empty raw_response: " + rec.post_id);
  return rec;
}

std::vector<AnnotationRecord> load_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotation file: " + path.string());
  std::vector<AnnotationRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    records.push_back(record_from_json_line(line));
  }
  return records;
}

void write_records(std::span<const AnnotationRecord> records,
                   const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open annotation file for writing: " + path.string());
  for (const auto& rec : records) out << record_to_json_line(rec) << '\n';
  if (!out) throw IoError("write failure on annotation file: " + path.string());
}

namespace {
std::string cache_key(const std::string& post_id, const std::string& template_hash,
                      const std::string& model_id) {
  std::string key;
  key.reserve(post_id.size() + template_hash.size() + model_id.size() + 2);
  key += post_id;
  key += '\x1f';
  key += template_hash;
  key += '\x1f';
  key += model_id;
  return key;
}
}  // namespace

AnnotationCache::AnnotationCache(std::filesystem::path file) : file_(std::move(file)) {
  if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
  std::ifstream in(file_);
  if (!in) return;  // fresh cache
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    AnnotationRecord rec = record_from_json_line(line);
    map_[cache_key(rec.post_id, rec.template_hash, rec.model_id)] = std::move(rec);
  }
}

std::optional<AnnotationRecord> AnnotationCache::find(const std::string& post_id,
                                                      const std::string& template_hash,
                                                      const std::string& model_id) const {
  std::lock_guard lock(mutex_);
  auto it = map_.find(cache_key(post_id, template_hash, model_id));
  if (it == map_.end()) return std::nullopt;
  return it->second;
}

void AnnotationCache::put(const AnnotationRecord& rec) {
  std::lock_guard lock(mutex_);
  map_[cache_key(rec.post_id, rec.template_hash, rec.model_id)] = rec;
  std::ofstream out(file_, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot append to annotation cache: " + file_.string());
  out << record_to_json_line(rec) << '\n';
  out.flush();
}

void AnnotationCache::compact() {
  std::lock_guard lock(mutex_);
  std::vector<const AnnotationRecord*> records;
  records.reserve(map_.size());
  for (const auto& [key, rec] : map_) records.push_back(&rec);
  std::sort(records.begin(), records.end(),
            [](const AnnotationRecord* a, const AnnotationRecord* b) {
              return a->post_id < b->post_id;
            });
  const auto tmp = file_.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write compacted cache: " + tmp);
    for (const AnnotationRecord* rec : records) out << record_to_json_line(*rec) << '\n';
  }
  std::filesystem::rename(tmp, file_);
}

std::size_t AnnotationCache::size() const {
  std::lock_guard lock(mutex_);
  return map_.size();
}

namespace {

// Simple token bucket; `capacity` tokens available at once, refilled at
// `rate` per second.
class TokenBucket {
 public:
  TokenBucket(double rate, double capacity)
      : rate_(rate), capacity_(capacity), tokens_(capacity),
        last_(std::chrono::steady_clock::now()) {}

  void acquire() {
    if (rate_ <= 0.0) return;
    std::unique_lock lock(mutex_);
    for (;;) {
      refill();
      if (tokens_ >= 1.0) {
        tokens_ -= 1.0;
        return;
      }
      const double wait_s = (1.0 - tokens_) / rate_;
      lock.unlock();
      std::this_thread::sleep_for(std::chrono::duration<double>(wait_s));
      lock.lock();
    }
  }

 private:
  void refill() {
    const auto now = std::chrono::steady_clock::now();
    const double dt = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    tokens_ = std::min(capacity_, tokens_ + dt * rate_);
  }

  double rate_, capacity_, tokens_;
  std::chrono::steady_clock::time_point last_;
  std::mutex mutex_;
};

class RuleChatClient : public ChatClient {
 public:
  explicit RuleChatClient(MockRules rules)
      : high_(rules.high_keywords.begin(), rules.high_keywords.end()),
        medium_(rules.medium_keywords.begin(), rules.medium_keywords.end()) {}

  std::string complete(const ChatRequest& request) override {
    for (const std::string& tok : tokenize(request.user_text)) {
      if (high_.count(tok)) return "1";
    }
    for (const std::string& tok : tokenize(request.user_text)) {
      if (medium_.count(tok)) return "2";
    }
    return "3";
  }

 private:
  std::unordered_set<std::string> high_;
  std::unordered_set<std::string> medium_;
};

}  // namespace

std::unique_ptr<ChatClient> make_rule_chat_client(MockRules rules) {
  return std::make_unique<RuleChatClient>(std::move(rules));
}

AnnotateResult annotate_batch(std::span<const Publication> publications,
                              const PromptTemplate& tpl, ChatClient* client,
                              AnnotationCache& cache, const AnnotateConfig& config) {
  tpl.validate();
  const std::string template_hash = tpl.digest();

  AnnotateResult result;
  std::vector<std::optional<AnnotationRecord>> slots(publications.size());
  std::vector<std::optional<AnnotateFailure>> failures(publications.size());
  std::vector<std::size_t> misses;
  for (std::size_t i = 0; i < publications.size(); ++i) {
    if (auto hit = cache.find(publications[i].post_id, template_hash, config.model_id)) {
      slots[i] = std::move(*hit);
      ++result.cache_hits;
    } else {
      misses.push_back(i);
    }
  }
  if (!misses.empty() && client == nullptr)
    throw ConfigError("annotation endpoint not configured and " +
                      std::to_string(misses.size()) + " items are not cached; set " +
                      config.api_key_env + " or enable the mock annotator");

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> network_calls{0};
  TokenBucket bucket(config.requests_per_second,
                     static_cast<double>(std::max<std::size_t>(1, config.concurrency)));

  auto worker = [&] {
    for (;;) {
      const std::size_t slot = next.fetch_add(1);
      if (slot >= misses.size()) return;
      const std::size_t i = misses[slot];
      const Publication& pub = publications[i];
      ChatRequest request;
      request.model = config.model_id;
      request.prompt = render_prompt(tpl, pub.text, config.prompt_char_budget);
      request.user_text = pub.text;
      request.temperature = config.temperature;

      int attempts = 0;
      std::string last_error;
      while (attempts < std::max(1, config.max_attempts)) {
        bucket.acquire();
        ++attempts;
        ++network_calls;
        try {
          const std::string raw = client->complete(request);
          AnnotationRecord rec;
          rec.post_id = pub.post_id;
          rec.label = parse_response(raw);  // Unparseable is terminal for the item
          rec.raw_response = raw;
          rec.source = AnnotationSource::Llm;
          rec.model_id = config.model_id;
          rec.template_hash = template_hash;
          cache.put(rec);
          slots[i] = std::move(rec);
          last_error.clear();
          break;
        } catch (const Unparseable& e) {
          last_error = e.what();
          break;
        } catch (const EndpointError& e) {
          last_error = e.what();
          if (attempts < std::max(1, config.max_attempts)) {
            const double backoff =
                std::min(config.backoff_max_ms,
                         config.backoff_initial_ms *
                             std::pow(config.backoff_factor, attempts - 1));
            std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(backoff));
          }
        }
      }
      if (!last_error.empty()) failures[i] = AnnotateFailure{pub.post_id, last_error, attempts};
    }
  };

  const std::size_t n_workers =
      std::max<std::size_t>(1, std::min(config.concurrency, misses.size()));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(n_workers);
    for (std::size_t t = 0; t < n_workers; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  result.network_calls = network_calls.load();
  for (std::size_t i = 0; i < publications.size(); ++i) {
    if (slots[i]) result.records.push_back(std::move(*slots[i]));
    if (failures[i]) result.failures.push_back(std::move(*failures[i]));
  }
  return result;
}

DistributionReport distribution_of(std::span<const AnnotationRecord> records,
                                   const Corpus& corpus) {
  if (records.empty()) throw EmptyInput("distribution_of: no annotation records");

  std::unordered_map<std::string_view, const Publication*> posts;
  std::unordered_map<std::string_view, UserClass> post_class;
  for (const auto& t : corpus.timelines) {
    for (const auto& p : t.publications) {
      posts.emplace(p.post_id, &p);
      post_class.emplace(p.post_id, t.label);
    }
  }

  DistributionReport report;
  for (const auto& rec : records) {
    auto it = posts.find(rec.post_id);
    if (it == posts.end())
      throw UnknownPost("annotation for unknown post id `" + rec.post_id + "`");
    const int cls = static_cast<int>(post_class.at(rec.post_id));
    const std::uint64_t tokens = tokenize(it->second->text).size();
    DistributionCell& cell = report.cells[cls][code(rec.label) - 1];
    cell.publications += 1;
    cell.tokens += tokens;
    report.class_publications[cls] += 1;
    report.class_tokens[cls] += tokens;
  }
  for (int cls = 0; cls < 2; ++cls) {
    for (int l = 0; l < 3; ++l) {
      DistributionCell& cell = report.cells[cls][l];
      if (report.class_publications[cls] > 0)
        cell.publications_pct = 100.0 * static_cast<double>(cell.publications) /
                                static_cast<double>(report.class_publications[cls]);
      if (report.class_tokens[cls] > 0)
        cell.tokens_pct = 100.0 * static_cast<double>(cell.tokens) /
                          static_cast<double>(report.class_tokens[cls]);
    }
  }
  return report;
}

std::string distribution_text_table(const DistributionReport& report) {
  std::string out;
  char buf[160];
  for (UserClass cls : {UserClass::Diagnosed, UserClass::Control}) {
    std::snprintf(buf, sizeof(buf), "%s class\n", cls == UserClass::Diagnosed ? "Diagnosed" : "Control");
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-10s %12s %8s %12s %8s\n", "Relevance", "Tweets", "%",
                  "Tokens", "%");
    out += buf;
    for (RelevanceLabel l : kAllLabels) {
      const DistributionCell& cell = report.cell(cls, l);
      std::snprintf(buf, sizeof(buf), "%-10s %12llu %7.1f%% %12llu %7.1f%%\n", to_string(l),
                    static_cast<unsigned long long>(cell.publications), cell.publications_pct,
                    static_cast<unsigned long long>(cell.tokens), cell.tokens_pct);
      out += buf;
    }
  }
  return out;
}

}  // namespace relbow

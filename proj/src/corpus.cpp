#include "relbow/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "relbow/errors.hpp"
#include "relbow/rng.hpp"
#include "relbow/text.hpp"

namespace relbow {

using nlohmann::json;

const char* to_string(UserClass c) {
  return c == UserClass::Diagnosed ? "diagnosed" : "control";
}

const char* to_string(Split s) { return s == Split::Train ? "train" : "test"; }

std::uint64_t Corpus::publication_count() const {
  std::uint64_t n = 0;
  for (const auto& t : timelines) n += t.publications.size();
  return n;
}

bool Corpus::fully_split() const {
  return std::all_of(timelines.begin(), timelines.end(),
                     [](const Timeline& t) { return t.split.has_value(); });
}

namespace {

bool is_blank(const std::string& text) {
  return std::all_of(text.begin(), text.end(), [](unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
  });
}

[[noreturn]] void schema_fail(std::size_t line_no, const std::string& what) {
  throw SchemaError("line " + std::to_string(line_no) + ": " + what);
}

Timeline parse_timeline(const std::string& line, std::size_t line_no) {
  json rec;
  try {
    rec = json::parse(line);
  } catch (const json::exception& e) {
    schema_fail(line_no, std::string("invalid JSON (") + e.what() + ")");
  }
  if (!rec.is_object()) schema_fail(line_no, "record is not an object");

  Timeline t;
  if (!rec.contains("user_id") || !rec["user_id"].is_string())
    schema_fail(line_no, "missing or non-string field `user_id`");
  t.user_id = rec["user_id"].get<std::string>();
  if (t.user_id.empty()) schema_fail(line_no, "empty `user_id`");

  if (!rec.contains("label") || !rec["label"].is_string())
    schema_fail(line_no, "missing or non-string field `label`");
  std::string label = rec["label"].get<std::string>();
  if (label == "diagnosed") {
    t.label = UserClass::Diagnosed;
  } else if (label == "control") {
    t.label = UserClass::Control;
  } else {
    schema_fail(line_no, "bad `label` value \"" + label + "\"");
  }

  if (rec.contains("split")) {
    if (!rec["split"].is_string()) schema_fail(line_no, "non-string field `split`");
    std::string split = rec["split"].get<std::string>();
    if (split == "train") {
      t.split = Split::Train;
    } else if (split == "test") {
      t.split = Split::Test;
    } else {
      schema_fail(line_no, "bad `split` value \"" + split + "\"");
    }
  }

  if (!rec.contains("posts") || !rec["posts"].is_array())
    schema_fail(line_no, "missing or non-array field `posts`");
  for (const auto& p : rec["posts"]) {
    if (!p.is_object()) schema_fail(line_no, "post is not an object");
    Publication pub;
    pub.user_id = t.user_id;
    if (!p.contains("id") || !p["id"].is_string())
      schema_fail(line_no, "post missing string field `id`");
    pub.post_id = p["id"].get<std::string>();
    if (!p.contains("ts") || !p["ts"].is_number_integer())
      schema_fail(line_no, "post missing integer field `ts`");
    pub.timestamp = p["ts"].get<std::int64_t>();
    if (!p.contains("text") || !p["text"].is_string())
      schema_fail(line_no, "post missing string field `text`");
    pub.text = p["text"].get<std::string>();
    if (is_blank(pub.text)) schema_fail(line_no, "post `" + pub.post_id + "` has blank text");
    t.publications.push_back(std::move(pub));
  }
  std::stable_sort(t.publications.begin(), t.publications.end(),
                   [](const Publication& a, const Publication& b) {
                     return a.timestamp < b.timestamp;
                   });
  return t;
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file: " + path.string());

  Corpus corpus;
  std::unordered_set<std::string> seen_users;
  std::unordered_set<std::string> seen_posts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || is_blank(line)) continue;
    Timeline t = parse_timeline(line, line_no);
    if (!seen_users.insert(t.user_id).second)
      throw DuplicateUser("line " + std::to_string(line_no) + ": duplicate user_id `" +
                          t.user_id + "`");
    for (const auto& p : t.publications) {
      if (!seen_posts.insert(p.post_id).second)
        schema_fail(line_no, "duplicate post id `" + p.post_id + "`");
    }
    corpus.timelines.push_back(std::move(t));
  }
  if (in.bad()) throw IoError("read failure on corpus file: " + path.string());
  return corpus;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open corpus file for writing: " + path.string());
  for (const auto& t : corpus.timelines) {
    json rec;
    rec["user_id"] = t.user_id;
    rec["label"] = to_string(t.label);
    if (t.split) rec["split"] = to_string(*t.split);
    json posts = json::array();
    for (const auto& p : t.publications) {
      posts.push_back({{"id", p.post_id}, {"ts", p.timestamp}, {"text", p.text}});
    }
    rec["posts"] = std::move(posts);
    out << rec.dump() << '\n';
  }
  if (!out) throw IoError("write failure on corpus file: " + path.string());
}

CorpusStats compute_stats(const Corpus& corpus) {
  if (corpus.timelines.empty()) throw EmptyCorpus("compute_stats: corpus has no timelines");
  CorpusStats stats;
  for (const auto& t : corpus.timelines) {
    const bool diag = t.label == UserClass::Diagnosed;
    auto& users = diag ? stats.users.diagnosed : stats.users.control;
    auto& pubs = diag ? stats.publications.diagnosed : stats.publications.control;
    auto& words = diag ? stats.words.diagnosed : stats.words.control;
    users += 1;
    pubs += t.publications.size();
    for (const auto& p : t.publications) words += tokenize(p.text).size();
  }
  return stats;
}

std::string stats_text_table(const CorpusStats& stats) {
  auto row = [](const char* name, const StatRow& r) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%-20s %12llu %12llu %12llu\n", name,
                  static_cast<unsigned long long>(r.diagnosed),
                  static_cast<unsigned long long>(r.control),
                  static_cast<unsigned long long>(r.overall()));
    return std::string(buf);
  };
  std::string out;
  char head[128];
  std::snprintf(head, sizeof(head), "%-20s %12s %12s %12s\n", "Statistics", "Diagnosed",
                "Control", "Overall");
  out += head;
  out += row("Users (timelines)", stats.users);
  out += row("Words", stats.words);
  out += row("Publications", stats.publications);
  return out;
}

std::vector<Publication> sample_publications(const Corpus& corpus, std::size_t n,
                                             std::uint64_t seed) {
  std::vector<const Publication*> pool;
  for (const auto& t : corpus.timelines) {
    if (t.split != Split::Train) continue;
    for (const auto& p : t.publications) pool.push_back(&p);
  }
  if (n > pool.size())
    throw SampleTooLarge("requested " + std::to_string(n) + " publications but the Train split holds " +
                         std::to_string(pool.size()));
  Rng rng(seed);
  // partial Fisher-Yates: the first n slots are the sample
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.uniform(0, pool.size() - 1 - i));
    std::swap(pool[i], pool[j]);
  }
  std::vector<Publication> sample;
  sample.reserve(n);
  for (std::size_t i = 0; i < n; ++i) sample.push_back(*pool[i]);
  return sample;
}

void SynthConfig::validate() const {
  auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (n_diagnosed == 0) throw InvalidConfig("n_diagnosed must be positive");
  if (control_ratio < 1) throw InvalidConfig("control_ratio must be >= 1");
  if (min_posts == 0 || min_posts > max_posts)
    throw InvalidConfig("posts_per_user range is empty");
  if (min_tokens == 0 || min_tokens > max_tokens)
    throw InvalidConfig("tokens_per_post range is empty");  // zero-token posts would be blank
  if (background_vocab == 0) throw InvalidConfig("background_vocab must be positive");
  const TierSpec* tiers[] = {&high, &medium, &low};
  for (const TierSpec* t : tiers) {
    if (!prob_ok(t->p_diagnosed) || !prob_ok(t->p_control))
      throw InvalidConfig("tier emission probabilities must lie in [0,1]");
    if (t->tokens.empty() && (t->p_diagnosed > 0 || t->p_control > 0))
      throw InvalidConfig("tier with positive emission probability has no tokens");
  }
  if (high.p_diagnosed + medium.p_diagnosed + low.p_diagnosed > 1.0 + 1e-12 ||
      high.p_control + medium.p_control + low.p_control > 1.0 + 1e-12)
    throw InvalidConfig("tier probabilities sum above 1 for a class");
  for (const auto& ct : context_tokens) {
    const double ps[] = {ct.p_diagnosed_high, ct.p_diagnosed_medium, ct.p_diagnosed_low,
                         ct.p_control_high,   ct.p_control_medium,   ct.p_control_low};
    for (double p : ps)
      if (!prob_ok(p)) throw InvalidConfig("context token probabilities must lie in [0,1]");
    if (ct.tokens.empty()) throw InvalidConfig("context token set is empty");
  }
}

namespace {

// Tier of a generated post: High/Medium/Low planted token, or none at all.
enum class PlantedTier { High, Medium, Low, None };

PlantedTier sample_tier(Rng& rng, const SynthConfig& cfg, UserClass cls) {
  const bool diag = cls == UserClass::Diagnosed;
  const double ph = diag ? cfg.high.p_diagnosed : cfg.high.p_control;
  const double pm = diag ? cfg.medium.p_diagnosed : cfg.medium.p_control;
  const double pl = diag ? cfg.low.p_diagnosed : cfg.low.p_control;
  const double u = rng.next_double();
  if (u < ph) return PlantedTier::High;
  if (u < ph + pm) return PlantedTier::Medium;
  if (u < ph + pm + pl) return PlantedTier::Low;
  return PlantedTier::None;
}

double context_prob(const ContextTokenSpec& ct, UserClass cls, PlantedTier tier) {
  const bool diag = cls == UserClass::Diagnosed;
  switch (tier) {
    case PlantedTier::High:
      return diag ? ct.p_diagnosed_high : ct.p_control_high;
    case PlantedTier::Medium:
      return diag ? ct.p_diagnosed_medium : ct.p_control_medium;
    default:  // Low and token-free posts read as low context
      return diag ? ct.p_diagnosed_low : ct.p_control_low;
  }
}

Timeline synth_timeline(Rng& rng, const SynthConfig& cfg, UserClass cls,
                        const std::string& user_id) {
  Timeline t;
  t.user_id = user_id;
  t.label = cls;
  const std::uint32_t n_posts =
      static_cast<std::uint32_t>(rng.uniform(cfg.min_posts, cfg.max_posts));
  std::int64_t ts = 1'500'000'000 + static_cast<std::int64_t>(rng.uniform(0, 86'400));
  for (std::uint32_t k = 0; k < n_posts; ++k) {
    ts += static_cast<std::int64_t>(rng.uniform(60, 7'200));
    std::vector<std::string> words;
    const std::uint32_t n_words =
        static_cast<std::uint32_t>(rng.uniform(cfg.min_tokens, cfg.max_tokens));
    for (std::uint32_t w = 0; w < n_words; ++w)
      words.push_back("w" + std::to_string(rng.uniform(0, cfg.background_vocab - 1)));

    const PlantedTier tier = sample_tier(rng, cfg, cls);
    const TierSpec* spec = nullptr;
    if (tier == PlantedTier::High) spec = &cfg.high;
    if (tier == PlantedTier::Medium) spec = &cfg.medium;
    if (tier == PlantedTier::Low) spec = &cfg.low;
    auto insert_at_random = [&](const std::string& tok) {
      const std::size_t pos = static_cast<std::size_t>(rng.uniform(0, words.size()));
      words.insert(words.begin() + pos, tok);
    };
    if (spec && !spec->tokens.empty())
      insert_at_random(spec->tokens[rng.uniform(0, spec->tokens.size() - 1)]);
    for (const auto& ct : cfg.context_tokens) {
      if (rng.bernoulli(context_prob(ct, cls, tier)))
        insert_at_random(ct.tokens[rng.uniform(0, ct.tokens.size() - 1)]);
    }

    Publication p;
    p.user_id = user_id;
    p.post_id = user_id + "-p" + std::to_string(k);
    p.timestamp = ts;
    for (std::size_t w = 0; w < words.size(); ++w) {
      if (w) p.text += ' ';
      p.text += words[w];
    }
    t.publications.push_back(std::move(p));
  }
  return t;
}

}  // namespace

Corpus generate_synthetic(const SynthConfig& config) {
  config.validate();
  Rng rng(config.seed);
  Corpus corpus;
  const std::uint32_t n_control = config.n_diagnosed * config.control_ratio;
  corpus.timelines.reserve(config.n_diagnosed + n_control);
  for (std::uint32_t i = 0; i < config.n_diagnosed; ++i)
    corpus.timelines.push_back(
        synth_timeline(rng, config, UserClass::Diagnosed, "D" + std::to_string(i)));
  for (std::uint32_t i = 0; i < n_control; ++i)
    corpus.timelines.push_back(
        synth_timeline(rng, config, UserClass::Control, "C" + std::to_string(i)));
  return corpus;
}

Corpus split_corpus(Corpus corpus, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw InvalidConfig("test_fraction must lie strictly between 0 and 1");
  if (corpus.fully_split()) return corpus;

  Rng rng(seed);
  for (UserClass cls : {UserClass::Diagnosed, UserClass::Control}) {
    std::vector<std::size_t> untagged;
    std::size_t tagged_test = 0, n_class = 0;
    for (std::size_t i = 0; i < corpus.timelines.size(); ++i) {
      const Timeline& t = corpus.timelines[i];
      if (t.label != cls) continue;
      ++n_class;
      if (!t.split) {
        untagged.push_back(i);
      } else if (*t.split == Split::Test) {
        ++tagged_test;
      }
    }
    const auto target_test =
        static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n_class)));
    std::size_t need = target_test > tagged_test ? target_test - tagged_test : 0;
    need = std::min(need, untagged.size());
    rng.shuffle(untagged);
    for (std::size_t k = 0; k < untagged.size(); ++k)
      corpus.timelines[untagged[k]].split = k < need ? Split::Test : Split::Train;

    std::size_t in_test = 0, in_train = 0;
    for (const Timeline& t : corpus.timelines) {
      if (t.label != cls) continue;
      (*t.split == Split::Test ? in_test : in_train) += 1;
    }
    if (n_class > 0 && (in_test == 0 || in_train == 0))
      throw DegenerateSplit(std::string("class ") + to_string(cls) +
                            " would have an empty train or test split");
  }
  return corpus;
}

}  // namespace relbow

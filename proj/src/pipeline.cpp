#include "relbow/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

#include "relbow/digest.hpp"
#include "relbow/errors.hpp"

namespace relbow {

using nlohmann::json;

namespace {

json read_json_file(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(std::string("cannot open ") + what + ": " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad ") + what + " (" + path.string() + "): " + e.what());
  }
  return j;
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failure on " + path.string());
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

TierSpec tier_from_json(const json& j) {
  TierSpec t;
  t.tokens = j.value("tokens", std::vector<std::string>{});
  t.p_diagnosed = j.value("p_diagnosed", 0.0);
  t.p_control = j.value("p_control", 0.0);
  return t;
}

SynthConfig synth_from_json(const json& j, std::uint64_t default_seed) {
  SynthConfig s;
  s.n_diagnosed = j.value("n_diagnosed", s.n_diagnosed);
  s.control_ratio = j.value("control_ratio", s.control_ratio);
  s.min_posts = j.value("min_posts", s.min_posts);
  s.max_posts = j.value("max_posts", s.max_posts);
  s.min_tokens = j.value("min_tokens", s.min_tokens);
  s.max_tokens = j.value("max_tokens", s.max_tokens);
  s.background_vocab = j.value("background_vocab", s.background_vocab);
  if (j.contains("high")) s.high = tier_from_json(j["high"]);
  if (j.contains("medium")) s.medium = tier_from_json(j["medium"]);
  if (j.contains("low")) s.low = tier_from_json(j["low"]);
  for (const json& cj : j.value("context_tokens", json::array())) {
    ContextTokenSpec ct;
    ct.tokens = cj.value("tokens", std::vector<std::string>{});
    ct.p_diagnosed_high = cj.value("p_diagnosed_high", 0.0);
    ct.p_diagnosed_medium = cj.value("p_diagnosed_medium", 0.0);
    ct.p_diagnosed_low = cj.value("p_diagnosed_low", 0.0);
    ct.p_control_high = cj.value("p_control_high", 0.0);
    ct.p_control_medium = cj.value("p_control_medium", 0.0);
    ct.p_control_low = cj.value("p_control_low", 0.0);
    s.context_tokens.push_back(std::move(ct));
  }
  s.seed = j.value("seed", default_seed);
  return s;
}

json synth_to_json(const SynthConfig& s) {
  json j;
  j["n_diagnosed"] = s.n_diagnosed;
  j["control_ratio"] = s.control_ratio;
  j["min_posts"] = s.min_posts;
  j["max_posts"] = s.max_posts;
  j["min_tokens"] = s.min_tokens;
  j["max_tokens"] = s.max_tokens;
  j["background_vocab"] = s.background_vocab;
  auto tier = [](const TierSpec& t) {
    return json{{"tokens", t.tokens}, {"p_diagnosed", t.p_diagnosed}, {"p_control", t.p_control}};
  };
  j["high"] = tier(s.high);
  j["medium"] = tier(s.medium);
  j["low"] = tier(s.low);
  json cts = json::array();
  for (const auto& ct : s.context_tokens) {
    cts.push_back({{"tokens", ct.tokens},
                   {"p_diagnosed_high", ct.p_diagnosed_high},
                   {"p_diagnosed_medium", ct.p_diagnosed_medium},
                   {"p_diagnosed_low", ct.p_diagnosed_low},
                   {"p_control_high", ct.p_control_high},
                   {"p_control_medium", ct.p_control_medium},
                   {"p_control_low", ct.p_control_low}});
  }
  j["context_tokens"] = std::move(cts);
  j["seed"] = s.seed;
  return j;
}

}  // namespace

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  const json j = read_json_file(path, "pipeline config");
  const std::filesystem::path base = path.has_parent_path()
                                         ? path.parent_path()
                                         : std::filesystem::path(".");
  auto resolve = [&](const std::filesystem::path& p) {
    return p.is_absolute() ? p : base / p;
  };

  PipelineConfig cfg;
  cfg.seed = j.value("seed", cfg.seed);
  cfg.artifacts_dir = resolve(j.value("artifacts_dir", std::string("artifacts")));
  if (j.contains("cache_path")) cfg.cache_path = resolve(j["cache_path"].get<std::string>());
  if (j.contains("corpus_path")) cfg.corpus_path = resolve(j["corpus_path"].get<std::string>());
  if (j.contains("synth")) cfg.synth = synth_from_json(j["synth"], cfg.seed);
  cfg.test_fraction = j.value("test_fraction", cfg.test_fraction);
  cfg.sample_n = j.value("sample_n", cfg.sample_n);
  cfg.model_name = j.value("model_name", cfg.model_name);
  cfg.threshold = j.value("threshold", cfg.threshold);

  if (j.contains("relevance")) {
    const json& r = j["relevance"];
    if (r.contains("template_path")) {
      const auto tpl_path = resolve(r["template_path"].get<std::string>());
      std::ifstream tpl_in(tpl_path, std::ios::binary);
      if (!tpl_in) throw ConfigError("cannot open prompt template: " + tpl_path.string());
      cfg.prompt.text.assign(std::istreambuf_iterator<char>(tpl_in), {});
    } else if (r.contains("template_text")) {
      cfg.prompt.text = r["template_text"].get<std::string>();
    }
    cfg.prompt.validate();
    cfg.annotate.model_id = r.value("model_id", cfg.annotate.model_id);
    cfg.annotate.temperature = r.value("temperature", cfg.annotate.temperature);
    cfg.annotate.prompt_char_budget =
        r.value("prompt_char_budget", cfg.annotate.prompt_char_budget);
    cfg.annotate.max_attempts = r.value("max_attempts", cfg.annotate.max_attempts);
    cfg.annotate.backoff_initial_ms = r.value("backoff_initial_ms", cfg.annotate.backoff_initial_ms);
    cfg.annotate.backoff_factor = r.value("backoff_factor", cfg.annotate.backoff_factor);
    cfg.annotate.backoff_max_ms = r.value("backoff_max_ms", cfg.annotate.backoff_max_ms);
    cfg.annotate.concurrency = r.value("concurrency", cfg.annotate.concurrency);
    cfg.annotate.requests_per_second =
        r.value("requests_per_second", cfg.annotate.requests_per_second);
    cfg.annotate.api_key_env = r.value("api_key_env", cfg.annotate.api_key_env);
    cfg.http.base_url = r.value("base_url", cfg.http.base_url);
    cfg.http.endpoint_path = r.value("endpoint_path", cfg.http.endpoint_path);
    cfg.http.timeout_seconds = r.value("timeout_seconds", cfg.http.timeout_seconds);
    cfg.mock_llm = r.value("mock", cfg.mock_llm);
    if (r.contains("mock_rules")) {
      MockRules rules;
      rules.high_keywords =
          r["mock_rules"].value("high_keywords", std::vector<std::string>{});
      rules.medium_keywords =
          r["mock_rules"].value("medium_keywords", std::vector<std::string>{});
      cfg.mock_rules = std::move(rules);
    }
  }

  if (j.contains("propagation")) {
    const json& p = j["propagation"];
    cfg.propagation.ngrams.hash_bits = p.value("hash_bits", cfg.propagation.ngrams.hash_bits);
    cfg.propagation.ngrams.char_min = p.value("char_min", cfg.propagation.ngrams.char_min);
    cfg.propagation.ngrams.char_max = p.value("char_max", cfg.propagation.ngrams.char_max);
    cfg.propagation.ngrams.word_unigrams =
        p.value("word_unigrams", cfg.propagation.ngrams.word_unigrams);
    cfg.propagation.lambda = p.value("lambda", cfg.propagation.lambda);
    cfg.propagation.max_iter = p.value("max_iter", cfg.propagation.max_iter);
    cfg.propagation.tol = p.value("tol", cfg.propagation.tol);
    cfg.propagation.holdout_fraction =
        p.value("holdout_fraction", cfg.propagation.holdout_fraction);
  }

  if (j.contains("features")) {
    const json& f = j["features"];
    cfg.features.k_high = f.value("k_high", cfg.features.k_high);
    cfg.features.k_medium = f.value("k_medium", cfg.features.k_medium);
    cfg.features.k_low = f.value("k_low", cfg.features.k_low);
    cfg.features.seq_cap = f.value("seq_cap", cfg.features.seq_cap);
    cfg.features.seq_order = f.value("seq_order", cfg.features.seq_order);
    cfg.features.min_df = f.value("min_df", cfg.features.min_df);
    cfg.features.pooled_text = f.value("pooled_text", cfg.features.pooled_text);
  }

  if (j.contains("fit")) {
    const json& f = j["fit"];
    if (f.contains("lambda") && !f["lambda"].is_null())
      cfg.fit.lambda = f["lambda"].get<double>();
    const std::string mode = f.value("class_weight", std::string("balanced"));
    if (mode == "balanced") {
      cfg.fit.class_weight = ClassWeightMode::Balanced;
    } else if (mode == "none") {
      cfg.fit.class_weight = ClassWeightMode::None;
    } else {
      throw ConfigError("bad class_weight \"" + mode + "\" (expected balanced|none)");
    }
    cfg.fit.max_iter = f.value("max_iter", cfg.fit.max_iter);
    cfg.fit.tol = f.value("tol", cfg.fit.tol);
  }
  return cfg;
}

const char* to_string(Stage s) {
  switch (s) {
    case Stage::Synth: return "synth";
    case Stage::Ingest: return "ingest";
    case Stage::Stats: return "stats";
    case Stage::Sample: return "sample";
    case Stage::Annotate: return "annotate";
    case Stage::Propagate: return "propagate";
    case Stage::Featurize: return "featurize";
    case Stage::Train: return "train";
    default: return "evaluate";
  }
}

Stage stage_from_name(const std::string& name) {
  static const std::unordered_map<std::string, Stage> names = {
      {"synth", Stage::Synth},         {"ingest", Stage::Ingest},
      {"stats", Stage::Stats},         {"sample", Stage::Sample},
      {"annotate", Stage::Annotate},   {"propagate", Stage::Propagate},
      {"featurize", Stage::Featurize}, {"train", Stage::Train},
      {"evaluate", Stage::Evaluate}};
  auto it = names.find(name);
  if (it == names.end()) throw ConfigError("unknown stage \"" + name + "\"");
  return it->second;
}

Pipeline::Pipeline(PipelineConfig config, ChatClient* injected_client)
    : config_(std::move(config)), injected_client_(injected_client) {
  std::filesystem::create_directories(config_.artifacts_dir);
}

Stage Pipeline::source_stage() const {
  return config_.synth ? Stage::Synth : Stage::Ingest;
}

std::filesystem::path Pipeline::artifact_path(Stage stage) const {
  const auto& dir = config_.artifacts_dir;
  switch (stage) {
    case Stage::Synth:
    case Stage::Ingest: return dir / "corpus.jsonl";
    case Stage::Stats: return dir / "stats.json";
    case Stage::Sample: return dir / "sample.json";
    case Stage::Annotate: return dir / "annotations.jsonl";
    case Stage::Propagate: return dir / "propagated.jsonl";
    case Stage::Featurize: return dir / "feature_space.json";
    case Stage::Train: return dir / "classifier.bin";
    default: return dir / "eval.json";
  }
}

std::filesystem::path Pipeline::meta_path(Stage stage) const {
  return config_.artifacts_dir / (std::string(to_string(stage)) + ".meta.json");
}

Pipeline::StagePlan Pipeline::plan(Stage stage) const {
  const auto& dir = config_.artifacts_dir;
  StagePlan p;
  json slice;
  switch (stage) {
    case Stage::Synth:
      slice["synth"] = config_.synth ? synth_to_json(*config_.synth) : json();
      slice["test_fraction"] = config_.test_fraction;
      slice["seed"] = config_.seed;
      p.outputs = {dir / "corpus.jsonl"};
      break;
    case Stage::Ingest:
      slice["corpus_path"] = config_.corpus_path ? config_.corpus_path->string() : "";
      slice["test_fraction"] = config_.test_fraction;
      slice["seed"] = config_.seed;
      if (config_.corpus_path) p.inputs = {*config_.corpus_path};
      p.outputs = {dir / "corpus.jsonl"};
      break;
    case Stage::Stats:
      p.inputs = {dir / "corpus.jsonl"};
      p.outputs = {dir / "stats.json", dir / "stats.txt"};
      break;
    case Stage::Sample:
      slice["sample_n"] = config_.sample_n;
      slice["seed"] = config_.seed;
      p.inputs = {dir / "corpus.jsonl"};
      p.outputs = {dir / "sample.json"};
      break;
    case Stage::Annotate:
      slice["template_hash"] = config_.prompt.digest();
      slice["model_id"] = config_.annotate.model_id;
      slice["temperature"] = config_.annotate.temperature;
      slice["prompt_char_budget"] = config_.annotate.prompt_char_budget;
      slice["mock"] = config_.mock_llm;
      if (config_.mock_rules) {
        slice["mock_high"] = config_.mock_rules->high_keywords;
        slice["mock_medium"] = config_.mock_rules->medium_keywords;
      }
      p.inputs = {dir / "corpus.jsonl", dir / "sample.json"};
      p.outputs = {dir / "annotations.jsonl", dir / "annotate_report.json"};
      break;
    case Stage::Propagate:
      slice["hash_bits"] = config_.propagation.ngrams.hash_bits;
      slice["char_min"] = config_.propagation.ngrams.char_min;
      slice["char_max"] = config_.propagation.ngrams.char_max;
      slice["word_unigrams"] = config_.propagation.ngrams.word_unigrams;
      slice["lambda"] = config_.propagation.lambda;
      slice["max_iter"] = config_.propagation.max_iter;
      slice["tol"] = config_.propagation.tol;
      slice["holdout_fraction"] = config_.propagation.holdout_fraction;
      slice["seed"] = config_.seed;
      p.inputs = {dir / "corpus.jsonl", dir / "annotations.jsonl"};
      p.outputs = {dir / "propagated.jsonl", dir / "relevance_model.bin",
                   dir / "propagation_report.json", dir / "distribution.json",
                   dir / "distribution.txt"};
      break;
    case Stage::Featurize:
      slice["k_high"] = config_.features.k_high;
      slice["k_medium"] = config_.features.k_medium;
      slice["k_low"] = config_.features.k_low;
      slice["seq_cap"] = config_.features.seq_cap;
      slice["seq_order"] = config_.features.seq_order;
      slice["min_df"] = config_.features.min_df;
      slice["pooled_text"] = config_.features.pooled_text;
      p.inputs = {dir / "corpus.jsonl", dir / "propagated.jsonl"};
      p.outputs = {dir / "feature_space.json", dir / "train_vectors.tsv",
                   dir / "test_vectors.tsv", dir / "vector_users.json"};
      break;
    case Stage::Train:
      slice["lambda"] = config_.fit.lambda ? json(*config_.fit.lambda) : json();
      slice["class_weight"] =
          config_.fit.class_weight == ClassWeightMode::Balanced ? "balanced" : "none";
      slice["max_iter"] = config_.fit.max_iter;
      slice["tol"] = config_.fit.tol;
      slice["threshold"] = config_.threshold;
      slice["seed"] = config_.seed;
      p.inputs = {dir / "train_vectors.tsv", dir / "vector_users.json"};
      p.outputs = {dir / "classifier.bin", dir / "train_report.json"};
      break;
    case Stage::Evaluate:
      slice["model_name"] = config_.model_name;
      p.inputs = {dir / "classifier.bin", dir / "test_vectors.tsv",
                  dir / "vector_users.json"};
      p.outputs = {dir / "eval.json", dir / "eval.txt"};
      break;
  }
  p.config_digest = digest_hex(slice.dump());
  return p;
}

void Pipeline::require_inputs(Stage stage, const StagePlan& plan) const {
  for (const auto& input : plan.inputs) {
    if (std::filesystem::exists(input)) continue;
    // name the upstream stage that produces the missing file
    const std::string file = input.filename().string();
    std::string producer;
    if (file == "corpus.jsonl") producer = to_string(source_stage());
    else if (file == "sample.json") producer = "sample";
    else if (file == "annotations.jsonl") producer = "annotate";
    else if (file == "propagated.jsonl") producer = "propagate";
    else if (file == "train_vectors.tsv" || file == "test_vectors.tsv" ||
             file == "vector_users.json" || file == "feature_space.json")
      producer = "featurize";
    else if (file == "classifier.bin") producer = "train";
    if (producer.empty())
      throw IoError(std::string(to_string(stage)) + ": missing input file " + input.string());
    throw MissingArtifact(producer, std::string(to_string(stage)) + " requires `" + file +
                                        "`; run the `" + producer + "` stage first");
  }
}

bool Pipeline::is_fresh(Stage stage, const StagePlan& plan) const {
  const auto meta_file = meta_path(stage);
  if (!std::filesystem::exists(meta_file)) return false;
  json meta;
  try {
    meta = read_json_file(meta_file, "stage meta");
  } catch (const Error&) {
    return false;
  }
  if (meta.value("config_digest", std::string{}) != plan.config_digest) return false;
  auto check = [](const json& entries) {
    for (const auto& [path, digest] : entries.items()) {
      if (!std::filesystem::exists(path)) return false;
      if (digest_file(path) != digest.get<std::string>()) return false;
    }
    return true;
  };
  if (!meta.contains("inputs") || !meta.contains("outputs")) return false;
  return check(meta["inputs"]) && check(meta["outputs"]);
}

void Pipeline::write_meta(Stage stage, const StagePlan& plan) const {
  json meta;
  meta["stage"] = to_string(stage);
  meta["config_digest"] = plan.config_digest;
  json inputs = json::object(), outputs = json::object();
  for (const auto& p : plan.inputs) inputs[p.string()] = digest_file(p);
  for (const auto& p : plan.outputs) outputs[p.string()] = digest_file(p);
  meta["inputs"] = std::move(inputs);
  meta["outputs"] = std::move(outputs);
  write_json_file(meta_path(stage), meta);
}

StageResult Pipeline::run_stage(Stage stage, bool force) {
  const StagePlan stage_plan = plan(stage);
  require_inputs(stage, stage_plan);
  StageResult result{stage, false, stage_plan.outputs};
  if (!force && is_fresh(stage, stage_plan)) {
    result.skipped = true;
    return result;
  }
  switch (stage) {
    case Stage::Synth: exec_synth(); break;
    case Stage::Ingest: exec_ingest(); break;
    case Stage::Stats: exec_stats(); break;
    case Stage::Sample: exec_sample(); break;
    case Stage::Annotate: exec_annotate(); break;
    case Stage::Propagate: exec_propagate(); break;
    case Stage::Featurize: exec_featurize(); break;
    case Stage::Train: exec_train(); break;
    case Stage::Evaluate: exec_evaluate(); break;
  }
  write_meta(stage, stage_plan);
  return result;
}

RunAllResult Pipeline::run_all(bool force) {
  RunAllResult result;
  const Stage stages[] = {source_stage(), Stage::Stats,     Stage::Sample,
                          Stage::Annotate, Stage::Propagate, Stage::Featurize,
                          Stage::Train,    Stage::Evaluate};
  for (Stage s : stages) result.stages.push_back(run_stage(s, force));

  const json ej = read_json_file(config_.artifacts_dir / "eval.json", "evaluation report");
  result.report.precision = ej.value("precision", 0.0);
  result.report.recall = ej.value("recall", 0.0);
  result.report.f1 = ej.value("f1", 0.0);
  result.report.tp = ej.value("tp", 0ULL);
  result.report.fp = ej.value("fp", 0ULL);
  result.report.fn = ej.value("fn", 0ULL);
  result.report.tn = ej.value("tn", 0ULL);
  result.report.threshold = ej.value("threshold", 0.5);
  return result;
}

Corpus Pipeline::load_artifact_corpus() const {
  return load_corpus(config_.artifacts_dir / "corpus.jsonl");
}

ChatClient* Pipeline::annotation_client() {
  if (injected_client_) return injected_client_;
  if (owned_client_) return owned_client_.get();
  if (config_.mock_llm) {
    MockRules rules;
    if (config_.mock_rules) {
      rules = *config_.mock_rules;
    } else if (config_.synth) {
      rules.high_keywords = config_.synth->high.tokens;
      rules.medium_keywords = config_.synth->medium.tokens;
    }
    owned_client_ = make_rule_chat_client(std::move(rules));
    return owned_client_.get();
  }
  const char* key = std::getenv(config_.annotate.api_key_env.c_str());
  if (key == nullptr || *key == '\0') return nullptr;  // cache may still cover the batch
  HttpChatConfig http = config_.http;
  http.api_key = key;
  owned_client_ = make_http_chat_client(http);
  return owned_client_.get();
}

void Pipeline::exec_synth() {
  if (!config_.synth) throw ConfigError("synth stage requested but no `synth` config present");
  Corpus corpus = generate_synthetic(*config_.synth);
  corpus = split_corpus(std::move(corpus), config_.test_fraction, config_.seed + 1);
  write_corpus(corpus, config_.artifacts_dir / "corpus.jsonl");
}

void Pipeline::exec_ingest() {
  if (!config_.corpus_path)
    throw ConfigError("ingest stage requested but no `corpus_path` config present");
  Corpus corpus = load_corpus(*config_.corpus_path);
  if (!corpus.fully_split())
    corpus = split_corpus(std::move(corpus), config_.test_fraction, config_.seed + 1);
  write_corpus(corpus, config_.artifacts_dir / "corpus.jsonl");
}

void Pipeline::exec_stats() {
  const Corpus corpus = load_artifact_corpus();
  const CorpusStats stats = compute_stats(corpus);
  json j;
  auto row = [](const StatRow& r) {
    return json{{"diagnosed", r.diagnosed}, {"control", r.control}, {"overall", r.overall()}};
  };
  j["users"] = row(stats.users);
  j["words"] = row(stats.words);
  j["publications"] = row(stats.publications);
  write_json_file(config_.artifacts_dir / "stats.json", j);
  write_text_file(config_.artifacts_dir / "stats.txt", stats_text_table(stats));
}

void Pipeline::exec_sample() {
  const Corpus corpus = load_artifact_corpus();
  const auto sample = sample_publications(corpus, config_.sample_n, config_.seed + 2);
  json j;
  j["n"] = sample.size();
  j["seed"] = config_.seed + 2;
  json ids = json::array();
  for (const Publication& p : sample) ids.push_back(p.post_id);
  j["post_ids"] = std::move(ids);
  write_json_file(config_.artifacts_dir / "sample.json", j);
}

void Pipeline::exec_annotate() {
  const Corpus corpus = load_artifact_corpus();
  const json sj = read_json_file(config_.artifacts_dir / "sample.json", "sample artifact");
  std::unordered_map<std::string, const Publication*> posts;
  for (const Timeline& t : corpus.timelines)
    for (const Publication& p : t.publications) posts.emplace(p.post_id, &p);
  std::vector<Publication> sample;
  for (const auto& id : sj.at("post_ids")) {
    auto it = posts.find(id.get<std::string>());
    if (it == posts.end())
      throw UnknownPost("sampled post not present in corpus: " + id.get<std::string>());
    sample.push_back(*it->second);
  }

  AnnotationCache cache(config_.cache_file());
  const AnnotateResult res =
      annotate_batch(sample, config_.prompt, annotation_client(), cache, config_.annotate);

  write_records(res.records, config_.artifacts_dir / "annotations.jsonl");
  json report;
  report["cache_hits"] = res.cache_hits;
  report["network_calls"] = res.network_calls;
  json failures = json::array();
  for (const auto& f : res.failures)
    failures.push_back({{"post_id", f.post_id}, {"error", f.error}, {"attempts", f.attempts}});
  report["failures"] = std::move(failures);
  write_json_file(config_.artifacts_dir / "annotate_report.json", report);
}

void Pipeline::exec_propagate() {
  const Corpus corpus = load_artifact_corpus();
  const auto llm_records = load_records(config_.artifacts_dir / "annotations.jsonl");

  std::unordered_map<std::string, const Publication*> posts;
  for (const Timeline& t : corpus.timelines)
    for (const Publication& p : t.publications) posts.emplace(p.post_id, &p);
  std::vector<Publication> annotated_posts;
  annotated_posts.reserve(llm_records.size());
  for (const auto& rec : llm_records) {
    auto it = posts.find(rec.post_id);
    if (it == posts.end()) throw UnknownPost("annotated post not in corpus: " + rec.post_id);
    annotated_posts.push_back(*it->second);
  }

  PropagationConfig pconfig = config_.propagation;
  pconfig.seed = config_.seed + 3;
  auto [model, report] = train_relevance_model(llm_records, annotated_posts, pconfig);
  const auto records = label_corpus(model, corpus, llm_records, &report);

  write_records(records, config_.artifacts_dir / "propagated.jsonl");
  save_relevance_model(model, config_.artifacts_dir / "relevance_model.bin");

  json rj;
  rj["holdout_accuracy"] = report.holdout_accuracy;
  rj["holdout_size"] = report.holdout_size;
  json confusion = json::array();
  for (int r = 0; r < 3; ++r) {
    json row = json::array();
    for (int c = 0; c < 3; ++c) row.push_back(report.holdout_confusion.counts[r][c]);
    confusion.push_back(std::move(row));
  }
  rj["holdout_confusion"] = std::move(confusion);
  rj["corpus_label_counts"] = report.corpus_label_counts;
  write_json_file(config_.artifacts_dir / "propagation_report.json", rj);

  // per-class, per-grade training distribution over the Train split
  std::unordered_map<std::string, Split> post_split;
  for (const Timeline& t : corpus.timelines)
    for (const Publication& p : t.publications)
      post_split.emplace(p.post_id, t.split.value_or(Split::Train));
  std::vector<AnnotationRecord> train_records;
  for (const auto& rec : records)
    if (post_split.at(rec.post_id) == Split::Train) train_records.push_back(rec);
  const DistributionReport dist = distribution_of(train_records, corpus);
  json dj;
  for (UserClass cls : {UserClass::Diagnosed, UserClass::Control}) {
    json cj;
    for (RelevanceLabel l : kAllLabels) {
      const DistributionCell& cell = dist.cell(cls, l);
      cj[to_string(l)] = {{"tweets", cell.publications},
                          {"tweets_pct", cell.publications_pct},
                          {"tokens", cell.tokens},
                          {"tokens_pct", cell.tokens_pct}};
    }
    dj[to_string(cls)] = std::move(cj);
  }
  write_json_file(config_.artifacts_dir / "distribution.json", dj);
  write_text_file(config_.artifacts_dir / "distribution.txt", distribution_text_table(dist));
}

void Pipeline::exec_featurize() {
  const Corpus corpus = load_artifact_corpus();
  const auto records = load_records(config_.artifacts_dir / "propagated.jsonl");
  LabelMap labels;
  labels.reserve(records.size());
  for (const auto& rec : records) labels.emplace(rec.post_id, rec.label);

  const FeatureSpace space = fit_feature_space(corpus, labels, config_.features);
  save_feature_space(space, config_.artifacts_dir / "feature_space.json");

  std::vector<UserFeatureVector> train_vecs, test_vecs;
  json train_users = json::array(), test_users = json::array();
  for (const Timeline& t : corpus.timelines) {
    UserFeatureVector vec = transform_user(space, t, labels);
    json u = {{"user_id", t.user_id}, {"label", to_string(t.label)}};
    if (t.split == Split::Test) {
      test_vecs.push_back(std::move(vec));
      test_users.push_back(std::move(u));
    } else {
      train_vecs.push_back(std::move(vec));
      train_users.push_back(std::move(u));
    }
  }
  write_triplets(train_vecs, config_.artifacts_dir / "train_vectors.tsv");
  write_triplets(test_vecs, config_.artifacts_dir / "test_vectors.tsv");
  json uj;
  uj["width"] = space.width();
  uj["train"] = std::move(train_users);
  uj["test"] = std::move(test_users);
  write_json_file(config_.artifacts_dir / "vector_users.json", uj);
}

namespace {
Dataset load_dataset(const std::filesystem::path& vectors, const json& users,
                     std::size_t width) {
  Dataset data;
  data.cols = width;
  data.rows = load_triplets(vectors, users.size());
  for (const auto& u : users)
    data.y.push_back(u.at("label").get<std::string>() == "diagnosed" ? UserClass::Diagnosed
                                                                     : UserClass::Control);
  return data;
}
}  // namespace

void Pipeline::exec_train() {
  const json uj = read_json_file(config_.artifacts_dir / "vector_users.json", "vector users");
  const Dataset data = load_dataset(config_.artifacts_dir / "train_vectors.tsv",
                                    uj.at("train"), uj.at("width").get<std::size_t>());
  FitConfig fit_config = config_.fit;
  fit_config.seed = config_.seed + 4;
  LogisticModel model = fit(data, fit_config);
  model.threshold = config_.threshold;
  save_logistic_model(model, config_.artifacts_dir / "classifier.bin");

  json report;
  report["final_loss"] = model.final_loss;
  report["iterations"] = model.iterations;
  report["converged"] = model.converged;
  report["config_digest"] = model.config_digest;
  report["width"] = model.weights.size();
  write_json_file(config_.artifacts_dir / "train_report.json", report);
}

void Pipeline::exec_evaluate() {
  const json uj = read_json_file(config_.artifacts_dir / "vector_users.json", "vector users");
  const Dataset data = load_dataset(config_.artifacts_dir / "test_vectors.tsv",
                                    uj.at("test"), uj.at("width").get<std::size_t>());
  const LogisticModel model = load_logistic_model(config_.artifacts_dir / "classifier.bin");
  std::vector<UserClass> predictions;
  predictions.reserve(data.rows.size());
  for (const SparseRow& row : data.rows) predictions.push_back(model.predict(row));
  EvalReport report = evaluate(predictions, data.y);
  report.threshold = model.threshold;

  json j;
  j["model"] = config_.model_name;
  j["precision"] = report.precision;
  j["recall"] = report.recall;
  j["f1"] = report.f1;
  j["tp"] = report.tp;
  j["fp"] = report.fp;
  j["fn"] = report.fn;
  j["tn"] = report.tn;
  j["threshold"] = report.threshold;
  write_json_file(config_.artifacts_dir / "eval.json", j);
  write_text_file(config_.artifacts_dir / "eval.txt",
                  eval_text_table(report, config_.model_name));
}

}  // namespace relbow

#ifndef RELBOW_PIPELINE_HPP
#define RELBOW_PIPELINE_HPP

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "relbow/classifier.hpp"
#include "relbow/corpus.hpp"
#include "relbow/features.hpp"
#include "relbow/propagation.hpp"
#include "relbow/relevance.hpp"

namespace relbow {

struct PipelineConfig {
  std::filesystem::path artifacts_dir = "artifacts";
  std::filesystem::path cache_path;            // default: <artifacts>/annotations.cache.jsonl
  std::optional<std::filesystem::path> corpus_path;  // ingest source
  std::optional<SynthConfig> synth;                  // synthetic source
  double test_fraction = 0.25;
  std::size_t sample_n = kDefaultSampleSize;
  std::string model_name = "relbow";
  double threshold = 0.5;

  PromptTemplate prompt = PromptTemplate::standard();
  AnnotateConfig annotate;
  HttpChatConfig http;
  bool mock_llm = false;
  std::optional<MockRules> mock_rules;  // defaults to the synth planted tokens

  PropagationConfig propagation;
  FeatureConfig features;
  FitConfig fit;
  std::uint64_t seed = 1;

  std::filesystem::path cache_file() const {
    return cache_path.empty() ? artifacts_dir / "annotations.cache.jsonl" : cache_path;
  }
};

// Loads a JSON config; relative paths resolve against the config's directory.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

enum class Stage { Synth, Ingest, Stats, Sample, Annotate, Propagate, Featurize, Train, Evaluate };

const char* to_string(Stage s);
Stage stage_from_name(const std::string& name);  // throws ConfigError

struct StageResult {
  Stage stage;
  bool skipped = false;
  std::vector<std::filesystem::path> outputs;
};

struct RunAllResult {
  std::vector<StageResult> stages;
  EvalReport report;
};

// Stage orchestration. Each stage reads upstream artifacts, writes its own,
// and records a meta file with digests of its config slice, inputs and
// outputs; a stage whose digests all match is skipped.
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config, ChatClient* injected_client = nullptr);

  StageResult run_stage(Stage stage, bool force = false);
  RunAllResult run_all(bool force = false);

  // primary artifact written by a stage
  std::filesystem::path artifact_path(Stage stage) const;
  std::filesystem::path meta_path(Stage stage) const;
  const PipelineConfig& config() const { return config_; }
  Stage source_stage() const;  // Synth when configured, else Ingest

 private:
  struct StagePlan {
    std::string config_digest;
    std::vector<std::filesystem::path> inputs;
    std::vector<std::filesystem::path> outputs;
  };

  StagePlan plan(Stage stage) const;
  bool is_fresh(Stage stage, const StagePlan& plan) const;
  void write_meta(Stage stage, const StagePlan& plan) const;
  void require_inputs(Stage stage, const StagePlan& plan) const;

  void exec_synth();
  void exec_ingest();
  void exec_stats();
  void exec_sample();
  void exec_annotate();
  void exec_propagate();
  void exec_featurize();
  void exec_train();
  void exec_evaluate();

  Corpus load_artifact_corpus() const;
  ChatClient* annotation_client();

  PipelineConfig config_;
  ChatClient* injected_client_ = nullptr;
  std::unique_ptr<ChatClient> owned_client_;
};

}  // namespace relbow

#endif  // RELBOW_PIPELINE_HPP

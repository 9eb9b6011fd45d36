// relbow: timeline screening pipeline over relevance-stratified bag-of-words
// features. Subcommands map one-to-one onto pipeline stages; see README.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "relbow/errors.hpp"
#include "relbow/pipeline.hpp"

namespace {

int fail(const std::exception& e) {
  std::fprintf(stderr, "error: %s\n", e.what());
  return 1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::string s;
  if (in) s.assign(std::istreambuf_iterator<char>(in), {});
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"timeline screening via relevance-stratified bag-of-words"};
  app.require_subcommand(1);

  std::string config_path;
  std::string artifacts_override;
  std::uint64_t seed_override = 0;
  bool seed_set = false;
  bool mock_llm = false;
  bool force = false;
  app.add_option("--config", config_path, "pipeline config (JSON)")->required();
  app.add_option("--artifacts", artifacts_override, "override the artifacts directory");
  app.add_option("--seed", seed_override, "override the pipeline seed")
      ->each([&](const std::string&) { seed_set = true; });
  app.add_flag("--mock-llm", mock_llm, "use the deterministic keyword-rule annotator");
  app.add_flag("--force", force, "re-run stages even when artifacts are fresh");

  const char* stage_names[] = {"synth",     "ingest",    "stats",
                               "sample",    "annotate",  "propagate",
                               "featurize", "train",     "evaluate"};
  for (const char* name : stage_names)
    app.add_subcommand(name, std::string("run the ") + name + " stage")->fallthrough();
  auto* run_all_cmd = app.add_subcommand("run-all", "run every stage in order");
  run_all_cmd->fallthrough();
  auto* compact_cmd = app.add_subcommand("compact-cache", "rewrite the annotation cache");
  compact_cmd->fallthrough();
  auto* sweep_cmd =
      app.add_subcommand("sweep-threshold", "pick the F1-best threshold on the train set");
  sweep_cmd->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    relbow::PipelineConfig config = relbow::load_pipeline_config(config_path);
    if (!artifacts_override.empty()) config.artifacts_dir = artifacts_override;
    if (seed_set) {
      config.seed = seed_override;
      if (config.synth) config.synth->seed = seed_override;
    }
    if (mock_llm) config.mock_llm = true;

    if (compact_cmd->parsed()) {
      relbow::AnnotationCache cache(config.cache_file());
      cache.compact();
      std::printf("compacted %zu records into %s\n", cache.size(),
                  cache.path().string().c_str());
      return 0;
    }

    relbow::Pipeline pipeline(std::move(config));

    if (sweep_cmd->parsed()) {
      const auto dir = pipeline.config().artifacts_dir;
      auto model = relbow::load_logistic_model(dir / "classifier.bin");
      nlohmann::json users;
      {
        std::ifstream in(dir / "vector_users.json");
        if (!in) throw relbow::MissingArtifact("featurize", "vector_users.json missing; run featurize first");
        in >> users;
      }
      relbow::Dataset data;
      data.cols = users.at("width").get<std::size_t>();
      data.rows = relbow::load_triplets(dir / "train_vectors.tsv", users.at("train").size());
      for (const auto& u : users.at("train"))
        data.y.push_back(u.at("label").get<std::string>() == "diagnosed"
                             ? relbow::UserClass::Diagnosed
                             : relbow::UserClass::Control);
      const double best = relbow::sweep_threshold(model, data);
      model.threshold = best;
      relbow::save_logistic_model(model, dir / "classifier.bin");
      std::printf("threshold set to %.6f\n", best);
      return 0;
    }

    if (run_all_cmd->parsed()) {
      const auto result = pipeline.run_all(force);
      for (const auto& s : result.stages)
        std::printf("%-10s %s\n", relbow::to_string(s.stage),
                    s.skipped ? "skipped (fresh)" : "done");
      std::printf("%s", slurp(pipeline.config().artifacts_dir / "eval.txt").c_str());
      return 0;
    }

    for (const char* name : stage_names) {
      if (!app.get_subcommand(name)->parsed()) continue;
      const auto stage = relbow::stage_from_name(name);
      const auto result = pipeline.run_stage(stage, force);
      std::printf("%-10s %s\n", name, result.skipped ? "skipped (fresh)" : "done");
      for (const auto& out : result.outputs) std::printf("  %s\n", out.string().c_str());
      return 0;
    }
    std::fprintf(stderr, "error: no subcommand selected\n");
    return 1;
  } catch (const relbow::MissingArtifact& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    return fail(e);
  }
}

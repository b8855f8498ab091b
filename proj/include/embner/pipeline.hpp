#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "embner/dagmm.hpp"
#include "embner/ghmm.hpp"
#include "embner/kcluster.hpp"
#include "embner/selector.hpp"
#include "embner/tagger.hpp"

/// End-to-end orchestration: cluster -> hmm -> spans -> dagmm -> refine -> eval,
/// each stage writing its artifacts and a manifest stamped with the config hash.
namespace embner::pipeline {

struct Stages {
  bool cluster = true;
  bool hmm = true;
  bool spans = true;
  bool dagmm = true;
  bool refine = false;
  bool eval = true;
};

struct PipelineConfig {
  std::filesystem::path embeddings;
  std::filesystem::path corpus;
  std::filesystem::path output_dir;
  int token_column = 0;
  std::optional<int> label_column;  // labels of `corpus` are not used for training
  /// Gold labels for eval; defaults to `corpus` read with gold_label_column.
  std::filesystem::path gold;
  int gold_label_column = -1;
  std::uint64_t seed = 1;
  Stages stages;
  bool resume = false;
  int kmeans_max_iters = 100;
  hmm::EmOptions hmm;
  double phrase_threshold = 100.0;
  dagmm::DagmmConfig dagmm;
  tagger::TaggerConfig tagger;
  selector::SelectorConfig selector;

  /// Checks value ranges and that the referenced input files exist.
  void validate() const;
};

nlohmann::json to_json(const PipelineConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);

/// 16 hex digits of FNV-1a over the canonical config JSON, ignoring
/// output_dir, resume and the stage toggles.
std::string config_hash(const PipelineConfig& c);

/// Independent seed for a named stage derived from the global seed.
std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage);

/// A stage that could not complete. `exit_code` is 2 for invalid input and 3
/// for failures inside the computation.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, int exit_code, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)), exit_code_(exit_code) {}
  const std::string& stage() const { return stage_; }
  int exit_code() const { return exit_code_; }

 private:
  std::string stage_;
  int exit_code_;
};

struct StageRecord {
  std::string stage;
  bool resumed = false;
  double seconds = 0.0;
  nlohmann::json metrics;
};

struct PipelineResult {
  std::string config_hash;
  std::vector<StageRecord> stages;
  /// Per-stage metrics without timings; also written to metrics.json.
  nlohmann::json metrics;
};

/// Runs the enabled stages in order. Stages that are disabled, or already
/// complete when `resume` is set, are loaded from their artifacts, which must
/// carry the same config hash. One JSON line per stage goes to `log` and to
/// log.jsonl in the output directory.
PipelineResult run_pipeline(const PipelineConfig& config, std::ostream* log = nullptr);

/// Per-sentence IOB labels marking maximal runs of seed-tagged tokens.
std::vector<std::vector<std::string>> seed_tag_labels(const Corpus& corpus, const kcluster::SeedTags& tags);

}  // namespace embner::pipeline

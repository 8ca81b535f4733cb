#pragma once

// End-to-end experiment: synthetic corpus, vanilla model, per-topic
// left/right fine-tunes, neuron localisation, patching, inhibited
// fine-tuning, evaluation and report tables, all inside one run directory.

#include <filesystem>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "polneuron/corpus.hpp"
#include "polneuron/inhibitft.hpp"
#include "polneuron/patching.hpp"
#include "polneuron/pnlac.hpp"
#include "polneuron/stance.hpp"
#include "polneuron/tinylm.hpp"

namespace polneuron::pipeline {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr std::string_view kToolVersion = "0.1.0";

enum class JudgeKind { Lexicon, Http };

struct JudgeConfig {
  JudgeKind kind = JudgeKind::Lexicon;
  stance::HttpJudgeConfig http;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/default";

  // Corpus: a JSONL file when set, otherwise generated from `synth`. The
  // synth marker lists also feed the lexicon judge.
  std::optional<std::filesystem::path> corpus_path;
  corpus::SynthSpec synth = corpus::SynthSpec::desk_default();
  double eval_fraction = 0.2;

  // vocab_size comes from the tokenizer and seed from `seed`.
  tinylm::ModelConfig model;

  tinylm::TrainHyper base_training;
  // Share of vanilla training examples that use the left completion.
  double base_left_fraction = 0.75;
  tinylm::TrainHyper finetune;

  std::vector<double> gammas = {2.5, 5.0, 7.5, 10.0, 12.5, 15.0, 20.0, 25.0};
  double gamma = 5.0;
  pnlac::ResponseSource response_source = pnlac::ResponseSource::Right;
  std::size_t max_new = 16;

  patching::PositionsMode positions_mode = patching::PositionsMode::AllPositions;
  inhibitft::FreezeMode freeze_mode = inhibitft::FreezeMode::OutputWeightsAndBias;
  JudgeConfig judge;

  void validate() const;
};

RunConfig default_run_config();
// Unknown keys and type errors throw ErrorKind::Config with the key path.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

enum class Stage { Synth, TrainBase, Finetune, Locate, PatchEval, InhibitFt, Evaluate, Report };

std::string_view to_string(Stage s);
Stage stage_from_string(std::string_view text);
const std::vector<Stage>& all_stages();
// Comma separated names; "full" expands to every stage.
std::vector<Stage> parse_stage_list(std::string_view text);
std::vector<Stage> stage_dependencies(Stage s);

struct StageRecord {
  std::string config_sha256;
  // Relative path -> SHA-256 of the file content.
  std::map<std::string, std::string> artifacts;
  double wall_seconds = 0.0;
};

struct RunManifest {
  nlohmann::json config;
  std::string tool_version;
  std::map<std::string, StageRecord> stages;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  // Every artifact of every stage, with its checksum.
  std::map<std::string, std::string> all_artifacts() const;
};

using LogFn = std::function<void(std::string_view)>;

// Runs the requested stages in pipeline order. Prerequisites must have been
// completed with the same config, either earlier in this call or in a prior
// run recorded in the run directory's manifest.
RunManifest run_pipeline(const RunConfig& cfg, std::span<const Stage> stages, const LogFn& log = {});

// Artifact file names inside the run directory.
namespace paths {
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kLock = "run.lock";
inline constexpr const char* kMetrics = "metrics.json";
inline constexpr const char* kCorpus = "corpus.jsonl";
inline constexpr const char* kTokenizer = "tokenizer.json";
inline constexpr const char* kSplit = "split.json";
inline constexpr const char* kVanilla = "models/vanilla.ckpt";
inline constexpr const char* kPatchEval = "patch/patch_eval.json";
inline constexpr const char* kEvaluation = "eval/evaluation.json";
inline constexpr const char* kLayerHistogram = "report/layer_histogram.csv";
inline constexpr const char* kPercentages = "report/neuron_percentages.csv";
inline constexpr const char* kStanceMatrix = "report/stance_matrix.csv";
inline constexpr const char* kCoupling = "report/coupling.json";
inline constexpr const char* kGammaSweep = "report/gamma_sweep.csv";

std::string finetuned(std::string_view side, std::string_view topic);
std::string inhibited(std::string_view topic);
std::string random_inhibited(std::string_view topic);
std::string scores(std::string_view topic);
std::string partition(double gamma);
}  // namespace paths

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

// Runs a patch manifest: loads donor and recipient checkpoints, a neuron set
// (plain array, or a partition file whose "general" set is used, or
// "file.json#topic" for that topic's specific set) and a JSONL of
// {"prompt", "topic"} records. Relative paths resolve against `base_dir`.
// Writes one JSON line per prompt with the plain and patched responses.
void run_patch_manifest(const patching::PatchManifest& manifest, const std::filesystem::path& base_dir,
                        std::size_t max_new, const std::filesystem::path& out_jsonl);

}  // namespace polneuron::pipeline

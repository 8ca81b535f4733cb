#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pipeline/run_dir.hpp"
#include "polneuron/pipeline.hpp"

namespace polneuron::pipeline {

// Shared state of one pipeline invocation. Everything a stage consumes is
// read back from the run directory, so a stage behaves the same whether its
// inputs were produced in this process or an earlier one.
class StageContext {
 public:
  StageContext(const RunConfig& cfg, RunDir& dir, const LogFn& log);

  const RunConfig& cfg() const { return cfg_; }
  RunDir& dir() { return dir_; }
  void log(const std::string& msg) const;

  void load_data();
  const std::vector<corpus::StanceExample>& corpus() const { return corpus_; }
  const corpus::Tokenizer& tok() const { return *tok_; }
  const corpus::CorpusSplit& split() const { return split_; }
  const std::vector<std::string>& topics() const { return topics_; }
  const corpus::EvalSet& eval_set() const { return eval_; }
  const tinylm::ModelConfig& model_config() const { return model_cfg_; }
  std::vector<corpus::StanceExample> train_examples(std::string_view topic) const;

  const tinylm::ModelVariant& model(const std::string& rel);
  void save_model(const std::string& rel, const tinylm::ModelVariant& v);
  nlohmann::json checkpoint_metadata() const;

  const stance::Judge& judge();
  pnlac::NeuronPartition partition(double gamma) const;
  tinylm::TrainHyper finetune_hyper(std::string_view tag) const;

 private:
  const RunConfig& cfg_;
  RunDir& dir_;
  const LogFn& log_;
  std::vector<corpus::StanceExample> corpus_;
  std::optional<corpus::Tokenizer> tok_;
  corpus::CorpusSplit split_;
  std::vector<std::string> topics_;
  corpus::EvalSet eval_;
  tinylm::ModelConfig model_cfg_;
  std::map<std::string, tinylm::ModelVariant> models_;
  std::unique_ptr<stance::Judge> judge_;
};

// Every configured gamma plus the primary one, ascending.
std::vector<double> sweep_gammas(const RunConfig& cfg);

void run_synth(StageContext& ctx);
void run_train_base(StageContext& ctx);
void run_finetune(StageContext& ctx);
void run_locate(StageContext& ctx);
void run_patch_eval(StageContext& ctx);
void run_inhibitft(StageContext& ctx);
void run_evaluate(StageContext& ctx);
void run_report(StageContext& ctx);

}  // namespace polneuron::pipeline

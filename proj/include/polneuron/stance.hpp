#pragma once

// Stance judging and the metrics built on it.

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "polneuron/corpus.hpp"
#include "polneuron/tinylm.hpp"

namespace polneuron::stance {

enum class StanceLabel { Left, Right };

std::string_view to_string(StanceLabel l);
StanceLabel stance_label_from_string(std::string_view text);

class Judge {
 public:
  virtual ~Judge() = default;
  virtual StanceLabel classify(std::string_view topic, std::string_view response) const = 0;
};

struct MarkerCounts {
  std::size_t left = 0;
  std::size_t right = 0;
};

// Counts general and topic markers; more right than left is Right,
// everything else (ties, no markers) is Left.
class LexiconJudge : public Judge {
 public:
  explicit LexiconJudge(const corpus::SynthSpec& spec);

  MarkerCounts count(std::string_view topic, std::string_view response) const;
  StanceLabel classify(std::string_view topic, std::string_view response) const override;

 private:
  struct Lexicon {
    std::vector<std::string> left, right;
  };
  Lexicon general_;
  std::map<std::string, Lexicon, std::less<>> topics_;
};

struct HttpJudgeConfig {
  // e.g. "http://localhost:8080/judge"
  std::string endpoint;
  int timeout_ms = 10000;
  int retries = 2;
};

// POSTs {"topic", "response"} and expects {"label": "left"|"right"}.
class HttpJudge : public Judge {
 public:
  explicit HttpJudge(HttpJudgeConfig cfg);
  StanceLabel classify(std::string_view topic, std::string_view response) const override;

 private:
  HttpJudgeConfig cfg_;
  std::string origin_, path_;
};

// Parses the judge's reply body.
StanceLabel parse_judge_reply(std::string_view body);

double stance_score(std::span<const StanceLabel> labels);

using TopicScores = std::map<std::string, double>;

double coupling_rmse(const TopicScores& model_row, const TopicScores& vanilla_row,
                     std::string_view finetune_topic);

struct Mitigation {
  TopicScores per_topic_delta;
  double mean_delta = 0.0;
};

Mitigation mitigation(const TopicScores& r_ft, const TopicScores& r_inhibit);

// exp of the token-weighted mean next-token NLL over all positions.
double perplexity(const tinylm::Parameters& params, std::span<const tinylm::Tokens> heldout);

class StanceMatrix {
 public:
  explicit StanceMatrix(std::vector<std::string> topics);

  void set(const std::string& row, const std::string& topic, double score);
  double at(std::string_view row, std::string_view topic) const;
  TopicScores row(std::string_view label) const;
  bool has_row(std::string_view label) const;
  const std::vector<std::string>& topics() const { return topics_; }
  const std::vector<std::string>& rows() const { return row_order_; }
  // Throws unless every row covers every topic.
  void validate() const;

  void write_csv(const std::filesystem::path& path) const;
  nlohmann::json to_json() const;

 private:
  std::vector<std::string> topics_;
  std::vector<std::string> row_order_;
  std::map<std::string, TopicScores, std::less<>> rows_;
};

struct StanceEval {
  std::vector<std::string> responses;
  std::vector<StanceLabel> labels;
  double score = 0.0;
};

using Generator = std::function<tinylm::Tokens(const tinylm::Tokens& prompt)>;

// Generates a response for every prompt of `topic` in order and judges it.
StanceEval evaluate_stance(const corpus::EvalSet& eval, std::string_view topic, const Generator& gen,
                           const corpus::Tokenizer& tok, const Judge& judge);

// Greedy generator with the budget clipped to the context length.
Generator greedy_generator(const tinylm::Parameters& params, std::size_t max_new);

struct CouplingEntry {
  double r_ft = 0.0;
  double r_inhibit = 0.0;
  double r_random = 0.0;
};

nlohmann::json coupling_report_json(const std::map<std::string, CouplingEntry>& entries);

}  // namespace polneuron::stance

#pragma once

// Political-neuron localisation by contrasting activations of a left- and a
// right-tuned variant over generated responses.
//
//   delta[l][i][j] = (a_right[l][i][j] - a_left[l][i][j])^2   at response positions j
//   sum_diff[l][i] = sum over prompts, sum over j in [|w|, |w|+|w1|)
//   score[l][i]    = sqrt(sum_diff[l][i] / sum over prompts |w1|)

#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "polneuron/corpus.hpp"
#include "polneuron/tinylm.hpp"

namespace polneuron::pnlac {

using tinylm::NeuronId;

// Sorted, duplicate-free set of neurons.
class NeuronSet {
 public:
  NeuronSet() = default;
  explicit NeuronSet(std::vector<NeuronId> ids);

  void insert(NeuronId id);
  bool contains(NeuronId id) const;
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  auto begin() const { return ids_.begin(); }
  auto end() const { return ids_.end(); }
  const std::vector<NeuronId>& ids() const { return ids_; }

  NeuronSet intersect(const NeuronSet& other) const;
  NeuronSet minus(const NeuronSet& other) const;
  NeuronSet unite(const NeuronSet& other) const;
  bool subset_of(const NeuronSet& other) const;

  // Throws if any neuron lies outside [0, n_layers) x [0, d_ff).
  void check_shape(std::size_t n_layers, std::size_t d_ff) const;

  bool operator==(const NeuronSet&) const = default;

 private:
  std::vector<NeuronId> ids_;
};

nlohmann::json to_json(const NeuronSet& set);
NeuronSet neuron_set_from_json(const nlohmann::json& j);

class NeuronScoreTable {
 public:
  NeuronScoreTable(std::size_t n_layers, std::size_t d_ff);

  std::size_t n_layers() const { return n_layers_; }
  std::size_t d_ff() const { return d_ff_; }
  std::size_t size() const { return scores_.size(); }

  double score(NeuronId id) const { return scores_[id.layer * d_ff_ + id.index]; }
  double& score(NeuronId id) { return scores_[id.layer * d_ff_ + id.index]; }
  const std::vector<double>& scores() const { return scores_; }

  std::string topic;
  std::string eval_set_id;
  std::size_t total_response_tokens = 0;
  std::size_t skipped_prompts = 0;

 private:
  std::size_t n_layers_, d_ff_;
  std::vector<double> scores_;
};

// Accumulates the squared activation gap of two forwards over one shared
// token sequence, restricted to the response positions.
class ScoreAccumulator {
 public:
  ScoreAccumulator(std::size_t n_layers, std::size_t d_ff);

  void add(const tinylm::ActivationTrace& right, const tinylm::ActivationTrace& left,
           std::size_t prompt_len);
  void skip() { ++skipped_; }

  const std::vector<double>& sum_diff() const { return sum_diff_; }
  std::size_t total_response_tokens() const { return total_; }

  NeuronScoreTable finish(std::string topic, std::string eval_set_id) const;

 private:
  std::size_t n_layers_, d_ff_;
  std::vector<double> sum_diff_;
  std::size_t total_ = 0;
  std::size_t skipped_ = 0;
};

enum class ResponseSource { Right, Left, Vanilla, Provided };

std::string_view to_string(ResponseSource s);
ResponseSource response_source_from_string(std::string_view text);

struct ScoreOptions {
  ResponseSource source = ResponseSource::Right;
  std::size_t max_new = 16;
  // Required when source == Vanilla.
  const tinylm::ModelVariant* vanilla = nullptr;
};

NeuronScoreTable activation_difference_scores(const tinylm::ModelVariant& right,
                                              const tinylm::ModelVariant& left,
                                              const corpus::EvalSet& eval_set,
                                              const ScoreOptions& options = {});

struct SelectionConfig {
  double gamma_percent = 5.0;

  void validate() const;
  // ceil(gamma% of total), computed so exact products are not bumped up.
  std::size_t count(std::size_t total) const;
};

NeuronSet select_neurons(const NeuronScoreTable& table, const SelectionConfig& sel);

struct NeuronPartition {
  NeuronSet general;
  // In input order: (topic, S_j) and (topic, N_j).
  std::vector<std::pair<std::string, NeuronSet>> topic_specific;
  std::vector<std::pair<std::string, NeuronSet>> selected;

  const NeuronSet& specific(std::string_view topic) const;
  const NeuronSet& selected_for(std::string_view topic) const;
};

NeuronPartition partition_neurons(const std::vector<std::pair<std::string, NeuronSet>>& sets);

struct PartitionProvenance {
  double gamma_percent = 0.0;
  std::string corpus_id;
  nlohmann::json seeds = nlohmann::json::object();
  std::size_t n_layers = 0;
  std::size_t d_ff = 0;
};

nlohmann::json partition_to_json(const NeuronPartition& p, const PartitionProvenance& prov);
NeuronPartition partition_from_json(const nlohmann::json& j);
PartitionProvenance provenance_from_json(const nlohmann::json& j);

void write_scores_csv(const std::filesystem::path& path, const NeuronScoreTable& table);
NeuronScoreTable read_scores_csv(const std::filesystem::path& path, std::size_t n_layers,
                                 std::size_t d_ff);

// Count of neurons per layer.
std::vector<std::size_t> layer_histogram(const NeuronSet& set, std::size_t n_layers);

}  // namespace polneuron::pnlac

#pragma once

// Activation patching: a recipient model generates while selected FFN
// neurons take the values a donor model produces on the same tokens.

#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>

#include "polneuron/pnlac.hpp"
#include "polneuron/tinylm.hpp"

namespace polneuron::patching {

using pnlac::NeuronSet;
using tinylm::NeuronId;

class SparseTrace {
 public:
  using Key = std::pair<std::size_t, NeuronId>;

  void set(std::size_t position, NeuronId neuron, double value);
  double at(std::size_t position, NeuronId neuron) const;
  bool contains(std::size_t position, NeuronId neuron) const;
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

 private:
  std::map<Key, double> values_;
};

SparseTrace record_sparse_activations(const tinylm::Parameters& params,
                                      std::span<const tinylm::TokenId> tokens,
                                      const NeuronSet& neurons);

enum class PositionsMode { AllPositions, ResponseOnly };

std::string_view to_string(PositionsMode m);
PositionsMode positions_mode_from_string(std::string_view text);

struct PatchPlan {
  const tinylm::ModelVariant* donor = nullptr;
  const tinylm::ModelVariant* recipient = nullptr;
  NeuronSet neurons;
  PositionsMode positions_mode = PositionsMode::AllPositions;
  std::size_t max_new = 16;

  void validate() const;
};

struct PatchResult {
  tinylm::Tokens tokens;  // prompt + continuation
  // Recipient activations over the final sequence, with the patch applied.
  tinylm::ActivationTrace recipient_trace;
};

// Lockstep greedy decoding. Every step re-runs the donor on the current
// sequence and overwrites the plan's neurons in the recipient's forward.
// The budget is clipped to the model's context length.
PatchResult patched_generate(const PatchPlan& plan, std::span<const tinylm::TokenId> prompt);

struct PatchManifest {
  std::string donor_ckpt;
  std::string recipient_ckpt;
  std::string neuron_set_file;
  PositionsMode positions_mode = PositionsMode::AllPositions;
  std::string prompts_file;
};

nlohmann::json to_json(const PatchManifest& m);
PatchManifest patch_manifest_from_json(const nlohmann::json& j);

}  // namespace polneuron::patching

#pragma once

// Fine-tuning with a set of FFN neurons held fixed.

#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "polneuron/corpus.hpp"
#include "polneuron/pnlac.hpp"
#include "polneuron/tinylm.hpp"

namespace polneuron::inhibitft {

using pnlac::NeuronSet;

enum class FreezeMode {
  // W_down row i and b_up[i].
  OutputWeightsAndBias,
  // The above plus W_up column i.
  FullNeuron,
};

std::string_view to_string(FreezeMode m);
FreezeMode freeze_mode_from_string(std::string_view text);

struct InhibitConfig {
  NeuronSet frozen;
  FreezeMode freeze_mode = FreezeMode::OutputWeightsAndBias;
  tinylm::TrainHyper hyper;
};

tinylm::GradientMask build_gradient_mask(const InhibitConfig& cfg, const tinylm::Parameters& params);

struct FinetuneOutcome {
  tinylm::ModelVariant variant;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> step_losses;
  std::size_t mask_size = 0;
};

// Tunes `base` toward one side of a single-topic corpus. Plain fine-tuning
// is the same call with no mask.
FinetuneOutcome finetune(const tinylm::ModelVariant& base, std::span<const corpus::StanceExample> examples,
                         const corpus::Tokenizer& tok, corpus::Side side, const tinylm::TrainHyper& hyper,
                         const tinylm::GradientMask* mask = nullptr);

// Right-side fine-tuning with cfg.frozen held fixed.
FinetuneOutcome inhibit_finetune(const tinylm::ModelVariant& base,
                                 std::span<const corpus::StanceExample> examples,
                                 const corpus::Tokenizer& tok, const InhibitConfig& cfg);

// k distinct neurons drawn uniformly over the whole model.
NeuronSet random_neuron_set(std::size_t n_layers, std::size_t d_ff, std::size_t k, std::uint64_t seed);

nlohmann::json freeze_manifest(const InhibitConfig& cfg, std::size_t mask_size);

}  // namespace polneuron::inhibitft

#include "polneuron/inhibitft.hpp"

#include <numeric>

#include "polneuron/error.hpp"
#include "polneuron/rng.hpp"

namespace polneuron::inhibitft {

std::string_view to_string(FreezeMode m) {
  return m == FreezeMode::FullNeuron ? "full_neuron" : "output_weights_and_bias";
}

FreezeMode freeze_mode_from_string(std::string_view text) {
  if (text == "output_weights_and_bias") return FreezeMode::OutputWeightsAndBias;
  if (text == "full_neuron") return FreezeMode::FullNeuron;
  fail(ErrorKind::Config, "unknown freeze_mode '" + std::string(text) + "'");
}

tinylm::GradientMask build_gradient_mask(const InhibitConfig& cfg, const tinylm::Parameters& params) {
  const auto& c = params.config();
  cfg.frozen.check_shape(c.n_layers, c.d_ff);
  const auto& layout = params.layout();
  tinylm::GradientMask mask;
  for (const auto& n : cfg.frozen) {
    const std::string p = "blocks." + std::to_string(n.layer) + ".ffn.";
    for (std::size_t d = 0; d < c.d_model; ++d) mask.add(layout, p + "w_down", {n.index, d});
    mask.add(layout, p + "b_up", {n.index});
    if (cfg.freeze_mode == FreezeMode::FullNeuron)
      for (std::size_t d = 0; d < c.d_model; ++d) mask.add(layout, p + "w_up", {d, n.index});
  }
  return mask;
}

FinetuneOutcome finetune(const tinylm::ModelVariant& base, std::span<const corpus::StanceExample> examples,
                         const corpus::Tokenizer& tok, corpus::Side side, const tinylm::TrainHyper& hyper,
                         const tinylm::GradientMask* mask) {
  require(!examples.empty(), ErrorKind::InvalidArgument, "fine-tuning corpus is empty");
  const std::string& topic = examples.front().topic;
  for (const auto& ex : examples)
    require(ex.topic == topic, ErrorKind::InvalidArgument,
            "fine-tuning corpus mixes topics '" + topic + "' and '" + ex.topic + "'");
  std::vector<tinylm::TrainExample> train;
  train.reserve(examples.size());
  for (const auto& ex : examples) train.push_back(corpus::make_train_example(tok, ex, side));

  const double initial = tinylm::mean_loss(base.params, train);
  auto result = tinylm::train(base.params, train, hyper, mask);
  const double final_loss = tinylm::mean_loss(result.params, train);
  FinetuneOutcome out{{std::move(result.params), topic,
                       side == corpus::Side::Right ? tinylm::Leaning::Right : tinylm::Leaning::Left},
                      initial,
                      final_loss,
                      std::move(result.step_losses),
                      mask ? mask->size() : 0};
  return out;
}

FinetuneOutcome inhibit_finetune(const tinylm::ModelVariant& base,
                                 std::span<const corpus::StanceExample> examples,
                                 const corpus::Tokenizer& tok, const InhibitConfig& cfg) {
  const auto mask = build_gradient_mask(cfg, base.params);
  return finetune(base, examples, tok, corpus::Side::Right, cfg.hyper, &mask);
}

NeuronSet random_neuron_set(std::size_t n_layers, std::size_t d_ff, std::size_t k, std::uint64_t seed) {
  const std::size_t total = n_layers * d_ff;
  require(k <= total, ErrorKind::InvalidArgument, "random neuron set larger than the model");
  std::vector<std::size_t> flat(total);
  std::iota(flat.begin(), flat.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(flat);
  std::vector<tinylm::NeuronId> ids;
  ids.reserve(k);
  for (std::size_t i = 0; i < k; ++i)
    ids.push_back({static_cast<std::uint32_t>(flat[i] / d_ff), static_cast<std::uint32_t>(flat[i] % d_ff)});
  return NeuronSet(std::move(ids));
}

nlohmann::json freeze_manifest(const InhibitConfig& cfg, std::size_t mask_size) {
  return {{"freeze_mode", to_string(cfg.freeze_mode)},
          {"frozen", pnlac::to_json(cfg.frozen)},
          {"frozen_neurons", cfg.frozen.size()},
          {"mask_cardinality", mask_size},
          {"hyper",
           {{"lr", cfg.hyper.lr},
            {"epochs", cfg.hyper.epochs},
            {"batch_size", cfg.hyper.batch_size},
            {"seed", cfg.hyper.seed},
            {"optimizer", tinylm::to_string(cfg.hyper.optimizer)}}}};
}

}  // namespace polneuron::inhibitft

#include "polneuron/patching.hpp"

#include <cmath>
#include <vector>

#include "polneuron/error.hpp"

namespace polneuron::patching {

void SparseTrace::set(std::size_t position, NeuronId neuron, double value) {
  require(std::isfinite(value), ErrorKind::Numeric, "non-finite activation in sparse trace");
  values_[{position, neuron}] = value;
}

double SparseTrace::at(std::size_t position, NeuronId neuron) const {
  auto it = values_.find({position, neuron});
  require(it != values_.end(), ErrorKind::InvalidArgument, "sparse trace has no such entry");
  return it->second;
}

bool SparseTrace::contains(std::size_t position, NeuronId neuron) const {
  return values_.contains({position, neuron});
}

SparseTrace record_sparse_activations(const tinylm::Parameters& params,
                                      std::span<const tinylm::TokenId> tokens,
                                      const NeuronSet& neurons) {
  const auto& c = params.config();
  neurons.check_shape(c.n_layers, c.d_ff);
  SparseTrace out;
  if (neurons.empty()) return out;
  tinylm::ForwardOptions opt;
  opt.last_logits_only = true;
  const auto res = tinylm::forward(params, tokens, opt);
  for (std::size_t p = 0; p < res.seq_len; ++p)
    for (const auto& n : neurons) out.set(p, n, res.trace.at(p, n));
  return out;
}

std::string_view to_string(PositionsMode m) {
  return m == PositionsMode::AllPositions ? "all_positions" : "response_only";
}

PositionsMode positions_mode_from_string(std::string_view text) {
  if (text == "all_positions") return PositionsMode::AllPositions;
  if (text == "response_only") return PositionsMode::ResponseOnly;
  fail(ErrorKind::Config, "unknown positions_mode '" + std::string(text) + "'");
}

void PatchPlan::validate() const {
  require(donor && recipient, ErrorKind::InvalidArgument, "patch plan needs a donor and a recipient");
  const auto& c = recipient->params.config();
  require(donor->params.config().same_shape(c), ErrorKind::InvalidArgument,
          "donor and recipient have different model configs");
  neurons.check_shape(c.n_layers, c.d_ff);
}

PatchResult patched_generate(const PatchPlan& plan, std::span<const tinylm::TokenId> prompt) {
  plan.validate();
  const auto& c = plan.recipient->params.config();
  require(!prompt.empty(), ErrorKind::InvalidArgument, "prompt is empty");
  require(prompt.size() <= c.max_seq_len, ErrorKind::InvalidArgument, "prompt exceeds max_seq_len");
  const std::size_t budget = std::min(plan.max_new, c.max_seq_len - prompt.size());
  const std::size_t first_patched =
      plan.positions_mode == PositionsMode::ResponseOnly ? prompt.size() : 0;

  tinylm::Tokens seq(prompt.begin(), prompt.end());
  std::vector<tinylm::ActivationOverride> overrides;
  tinylm::ForwardOptions ropt;
  ropt.last_logits_only = true;
  tinylm::ForwardResult res;
  for (std::size_t step = 0;; ++step) {
    overrides.clear();
    if (!plan.neurons.empty() && seq.size() > first_patched) {
      const auto donor = record_sparse_activations(plan.donor->params, seq, plan.neurons);
      for (const auto& [key, value] : donor)
        if (key.first >= first_patched) overrides.push_back({key.first, key.second, value});
    }
    ropt.overrides = overrides;
    res = tinylm::forward(plan.recipient->params, seq, ropt);
    if (step == budget) break;
    const auto next = static_cast<tinylm::TokenId>(tinylm::argmax_lowest(res.logits_at(seq.size() - 1)));
    if (next == tinylm::kEosToken) break;
    seq.push_back(next);
  }
  return {std::move(seq), std::move(res.trace)};
}

nlohmann::json to_json(const PatchManifest& m) {
  return {{"donor_ckpt", m.donor_ckpt},
          {"recipient_ckpt", m.recipient_ckpt},
          {"neuron_set_file", m.neuron_set_file},
          {"positions_mode", to_string(m.positions_mode)},
          {"prompts_file", m.prompts_file}};
}

PatchManifest patch_manifest_from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorKind::Schema, "patch manifest: expected an object");
  PatchManifest m;
  for (const auto& [key, value] : j.items()) {
    if (!value.is_string()) fail(ErrorKind::Schema, "patch manifest: field '" + key + "' must be a string");
    const auto s = value.get<std::string>();
    if (key == "donor_ckpt") m.donor_ckpt = s;
    else if (key == "recipient_ckpt") m.recipient_ckpt = s;
    else if (key == "neuron_set_file") m.neuron_set_file = s;
    else if (key == "positions_mode") m.positions_mode = positions_mode_from_string(s);
    else if (key == "prompts_file") m.prompts_file = s;
    else fail(ErrorKind::Schema, "patch manifest: unknown field '" + key + "'");
  }
  for (auto [name, v] : {std::pair{"donor_ckpt", &m.donor_ckpt}, std::pair{"recipient_ckpt", &m.recipient_ckpt},
                         std::pair{"neuron_set_file", &m.neuron_set_file},
                         std::pair{"prompts_file", &m.prompts_file}})
    if (v->empty()) fail(ErrorKind::Schema, std::string("patch manifest: missing field '") + name + "'");
  return m;
}

}  // namespace polneuron::patching

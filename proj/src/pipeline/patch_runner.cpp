#include <fstream>

#include "polneuron/checkpoint.hpp"
#include "polneuron/error.hpp"
#include "polneuron/pipeline.hpp"

namespace polneuron::pipeline {

namespace {

pnlac::NeuronSet load_neuron_set(const std::string& spec, const std::filesystem::path& base) {
  const auto hash = spec.find('#');
  const auto file = base / spec.substr(0, hash);
  std::ifstream in(file);
  if (!in) fail(ErrorKind::Io, "cannot open neuron set '" + file.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::Schema, file.string() + ": malformed JSON (" + e.what() + ")");
  }
  if (j.is_array()) {
    require(hash == std::string::npos, ErrorKind::Schema, file.string() + ": plain neuron sets have no topics");
    return pnlac::neuron_set_from_json(j);
  }
  const auto part = pnlac::partition_from_json(j);
  if (hash == std::string::npos) return part.general;
  return part.specific(spec.substr(hash + 1));
}

corpus::Tokenizer tokenizer_of(const tinylm::Checkpoint& ck, const std::string& name) {
  if (!ck.metadata.is_object() || !ck.metadata.contains("tokenizer"))
    fail(ErrorKind::Schema, name + ": checkpoint metadata lacks field 'tokenizer'");
  return corpus::Tokenizer::from_json(ck.metadata["tokenizer"]);
}

}  // namespace

void run_patch_manifest(const patching::PatchManifest& manifest, const std::filesystem::path& base_dir,
                        std::size_t max_new, const std::filesystem::path& out_jsonl) {
  const auto donor = tinylm::load_checkpoint(base_dir / manifest.donor_ckpt);
  const auto recipient = tinylm::load_checkpoint(base_dir / manifest.recipient_ckpt);
  const auto tok = tokenizer_of(recipient, manifest.recipient_ckpt);
  require(tokenizer_of(donor, manifest.donor_ckpt).vocab() == tok.vocab(), ErrorKind::InvalidArgument,
          "donor and recipient use different tokenizers");
  std::unique_ptr<stance::LexiconJudge> judge;
  if (recipient.metadata.contains("lexicon"))
    judge = std::make_unique<stance::LexiconJudge>(corpus::synth_spec_from_json(recipient.metadata["lexicon"]));

  const patching::PatchPlan plan{&donor.variant, &recipient.variant,
                                 load_neuron_set(manifest.neuron_set_file, base_dir), manifest.positions_mode,
                                 max_new};
  plan.validate();

  const auto prompts_path = base_dir / manifest.prompts_file;
  std::ifstream in(prompts_path);
  if (!in) fail(ErrorKind::Io, "cannot open prompts '" + prompts_path.string() + "'");
  std::ofstream out(out_jsonl, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write '" + out_jsonl.string() + "'");
  const auto& cfg = recipient.variant.params.config();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (corpus::split_words(line).empty()) continue;
    const std::string where = prompts_path.string() + ":" + std::to_string(line_no);
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      fail(ErrorKind::Schema, where + ": malformed JSON");
    }
    if (!rec.is_object() || !rec.contains("prompt") || !rec["prompt"].is_string())
      fail(ErrorKind::Schema, where + ": missing string field \"prompt\"");
    const auto text = rec["prompt"].get<std::string>();
    const std::string topic = rec.value("topic", std::string());
    const auto prompt = tok.encode(text);
    require(!prompt.empty() && prompt.size() < cfg.max_seq_len, ErrorKind::InvalidArgument,
            where + ": prompt is empty or too long");
    const auto patched = patching::patched_generate(plan, prompt);
    const auto plain = tinylm::generate(recipient.variant.params, prompt,
                                        std::min(max_new, cfg.max_seq_len - prompt.size()));
    const std::span<const tinylm::TokenId> ps(patched.tokens), qs(plain);
    nlohmann::json o = {{"prompt", text},
                        {"topic", topic},
                        {"response", tok.decode(qs.subspan(prompt.size()))},
                        {"patched_response", tok.decode(ps.subspan(prompt.size()))}};
    if (judge && !topic.empty()) {
      o["label"] = stance::to_string(judge->classify(topic, o["response"].get<std::string>()));
      o["patched_label"] = stance::to_string(judge->classify(topic, o["patched_response"].get<std::string>()));
    }
    out << o.dump() << '\n';
  }
}

}  // namespace polneuron::pipeline

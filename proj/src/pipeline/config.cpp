#include <fstream>

#include "common/json_fields.hpp"
#include "polneuron/error.hpp"
#include "polneuron/pipeline.hpp"

namespace polneuron::pipeline {

using detail::reject_unknown_keys;
using detail::take;
using detail::take_if;

namespace {

tinylm::TrainHyper hyper_from_json(const nlohmann::json& j, const std::string& where,
                                   tinylm::TrainHyper h) {
  reject_unknown_keys(j, {"lr", "epochs", "batch_size", "optimizer", "left_fraction"}, where);
  take_if(j, "lr", where, h.lr);
  take_if(j, "epochs", where, h.epochs);
  take_if(j, "batch_size", where, h.batch_size);
  if (j.contains("optimizer")) {
    try {
      h.optimizer = tinylm::optimizer_from_string(take<std::string>(j, "optimizer", where));
    } catch (const Error& e) {
      fail(ErrorKind::Config, where + ".optimizer: " + e.what());
    }
  }
  return h;
}

nlohmann::json hyper_to_json(const tinylm::TrainHyper& h) {
  return {{"lr", h.lr},
          {"epochs", h.epochs},
          {"batch_size", h.batch_size},
          {"optimizer", tinylm::to_string(h.optimizer)}};
}

template <class F>
auto config_enum(const nlohmann::json& j, const char* key, const std::string& where, F parse) {
  const auto text = take<std::string>(j, key, where);
  try {
    return parse(text);
  } catch (const Error& e) {
    fail(ErrorKind::Config, where + "." + key + ": " + e.what());
  }
}

}  // namespace

RunConfig default_run_config() {
  RunConfig c;
  c.model.n_layers = 2;
  c.model.d_model = 64;
  c.model.d_ff = 128;
  c.model.n_heads = 2;
  c.model.max_seq_len = 64;
  c.base_training.lr = 3e-3;
  c.base_training.epochs = 8;
  c.base_training.batch_size = 8;
  c.base_training.optimizer = tinylm::OptimizerKind::Adam;
  c.finetune.lr = 5e-5;
  c.finetune.epochs = 6;
  c.finetune.batch_size = 8;
  c.finetune.optimizer = tinylm::OptimizerKind::Adam;
  return c;
}

void RunConfig::validate() const {
  require(eval_fraction > 0.0 && eval_fraction < 1.0, ErrorKind::Config,
          "corpus.eval_fraction: must lie in (0, 1)");
  require(base_left_fraction >= 0.0 && base_left_fraction <= 1.0, ErrorKind::Config,
          "base_training.left_fraction: must lie in [0, 1]");
  require(!gammas.empty(), ErrorKind::Config, "locate.gammas: must not be empty");
  for (double g : gammas)
    require(g > 0.0 && g <= 100.0, ErrorKind::Config, "locate.gammas: every entry must lie in (0, 100]");
  require(gamma > 0.0 && gamma <= 100.0, ErrorKind::Config, "locate.gamma: must lie in (0, 100]");
  require(max_new > 0, ErrorKind::Config, "evaluate.max_new: must be positive");
  for (const auto* h : {&base_training, &finetune}) {
    require(h->lr >= 0.0, ErrorKind::Config, "learning rate must be nonnegative");
    require(h->batch_size > 0, ErrorKind::Config, "batch_size must be positive");
  }
  auto probe = model;
  probe.vocab_size = 3;
  try {
    probe.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Config, std::string("model: ") + e.what());
  }
  if (judge.kind == JudgeKind::Http)
    require(!judge.http.endpoint.empty(), ErrorKind::Config, "evaluate.judge.endpoint: missing");
  if (!corpus_path) synth.validate();
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  const std::string root = "config";
  reject_unknown_keys(j, {"schema_version", "seed", "output_dir", "corpus", "model", "base_training",
                          "finetune", "locate", "patch", "inhibit", "evaluate"},
                      root);
  const auto version = take<int>(j, "schema_version", root);
  if (version != kConfigSchemaVersion)
    fail(ErrorKind::Config, "config.schema_version: unsupported version " + std::to_string(version));

  RunConfig c = default_run_config();
  take_if(j, "seed", root, c.seed);
  if (j.contains("output_dir")) c.output_dir = take<std::string>(j, "output_dir", root);

  if (j.contains("corpus")) {
    const auto& cj = j["corpus"];
    const std::string w = "config.corpus";
    reject_unknown_keys(cj, {"path", "synth_spec", "eval_fraction"}, w);
    if (cj.contains("path") && !cj["path"].is_null()) c.corpus_path = take<std::string>(cj, "path", w);
    if (cj.contains("synth_spec")) c.synth = corpus::synth_spec_from_json(cj["synth_spec"], w + ".synth_spec");
    take_if(cj, "eval_fraction", w, c.eval_fraction);
  }
  if (j.contains("model")) {
    const auto& mj = j["model"];
    const std::string w = "config.model";
    reject_unknown_keys(mj, {"n_layers", "d_model", "d_ff", "n_heads", "max_seq_len"}, w);
    take_if(mj, "n_layers", w, c.model.n_layers);
    take_if(mj, "d_model", w, c.model.d_model);
    take_if(mj, "d_ff", w, c.model.d_ff);
    take_if(mj, "n_heads", w, c.model.n_heads);
    take_if(mj, "max_seq_len", w, c.model.max_seq_len);
  }
  if (j.contains("base_training")) {
    c.base_training = hyper_from_json(j["base_training"], "config.base_training", c.base_training);
    take_if(j["base_training"], "left_fraction", "config.base_training", c.base_left_fraction);
  }
  if (j.contains("finetune")) {
    if (j["finetune"].contains("left_fraction"))
      fail(ErrorKind::Config, "config.finetune.left_fraction: unknown key");
    c.finetune = hyper_from_json(j["finetune"], "config.finetune", c.finetune);
  }
  if (j.contains("locate")) {
    const auto& lj = j["locate"];
    const std::string w = "config.locate";
    reject_unknown_keys(lj, {"gammas", "gamma", "response_source"}, w);
    take_if(lj, "gammas", w, c.gammas);
    take_if(lj, "gamma", w, c.gamma);
    if (lj.contains("response_source"))
      c.response_source = config_enum(lj, "response_source", w, pnlac::response_source_from_string);
  }
  if (j.contains("patch")) {
    const auto& pj = j["patch"];
    reject_unknown_keys(pj, {"positions_mode"}, "config.patch");
    if (pj.contains("positions_mode"))
      c.positions_mode = config_enum(pj, "positions_mode", "config.patch", patching::positions_mode_from_string);
  }
  if (j.contains("inhibit")) {
    const auto& ij = j["inhibit"];
    reject_unknown_keys(ij, {"freeze_mode"}, "config.inhibit");
    if (ij.contains("freeze_mode"))
      c.freeze_mode = config_enum(ij, "freeze_mode", "config.inhibit", inhibitft::freeze_mode_from_string);
  }
  if (j.contains("evaluate")) {
    const auto& ej = j["evaluate"];
    const std::string w = "config.evaluate";
    reject_unknown_keys(ej, {"max_new", "judge"}, w);
    take_if(ej, "max_new", w, c.max_new);
    if (ej.contains("judge")) {
      const auto& jj = ej["judge"];
      const std::string wj = w + ".judge";
      reject_unknown_keys(jj, {"kind", "endpoint", "timeout_ms", "retries"}, wj);
      const auto kind = take<std::string>(jj, "kind", wj);
      if (kind == "lexicon") {
        c.judge.kind = JudgeKind::Lexicon;
      } else if (kind == "http") {
        c.judge.kind = JudgeKind::Http;
        c.judge.http.endpoint = take<std::string>(jj, "endpoint", wj);
        take_if(jj, "timeout_ms", wj, c.judge.http.timeout_ms);
        take_if(jj, "retries", wj, c.judge.http.retries);
      } else {
        fail(ErrorKind::Config, wj + ".kind: expected \"lexicon\" or \"http\"");
      }
    }
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json judge = {{"kind", c.judge.kind == JudgeKind::Http ? "http" : "lexicon"}};
  if (c.judge.kind == JudgeKind::Http) {
    judge["endpoint"] = c.judge.http.endpoint;
    judge["timeout_ms"] = c.judge.http.timeout_ms;
    judge["retries"] = c.judge.http.retries;
  }
  auto base = hyper_to_json(c.base_training);
  base["left_fraction"] = c.base_left_fraction;
  return {
      {"schema_version", kConfigSchemaVersion},
      {"seed", c.seed},
      {"output_dir", c.output_dir.string()},
      {"corpus",
       {{"path", c.corpus_path ? nlohmann::json(c.corpus_path->string()) : nlohmann::json(nullptr)},
        {"synth_spec", corpus::to_json(c.synth)},
        {"eval_fraction", c.eval_fraction}}},
      {"model",
       {{"n_layers", c.model.n_layers},
        {"d_model", c.model.d_model},
        {"d_ff", c.model.d_ff},
        {"n_heads", c.model.n_heads},
        {"max_seq_len", c.model.max_seq_len}}},
      {"base_training", base},
      {"finetune", hyper_to_json(c.finetune)},
      {"locate",
       {{"gammas", c.gammas}, {"gamma", c.gamma}, {"response_source", pnlac::to_string(c.response_source)}}},
      {"patch", {{"positions_mode", patching::to_string(c.positions_mode)}}},
      {"inhibit", {{"freeze_mode", inhibitft::to_string(c.freeze_mode)}}},
      {"evaluate", {{"max_new", c.max_new}, {"judge", judge}}},
  };
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Config, "cannot open config '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::Config, path.string() + ": malformed JSON (" + e.what() + ")");
  }
  auto cfg = run_config_from_json(j);
  // Relative corpus paths are resolved against the config file.
  if (cfg.corpus_path && cfg.corpus_path->is_relative())
    cfg.corpus_path = path.parent_path() / *cfg.corpus_path;
  return cfg;
}

}  // namespace polneuron::pipeline

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <memory>
#include <set>

#include "pipeline/run_dir.hpp"
#include "pipeline/stages.hpp"
#include "polneuron/checkpoint.hpp"
#include "polneuron/error.hpp"
#include "polneuron/rng.hpp"

namespace polneuron::pipeline {

namespace {

using corpus::Side;
using tinylm::ModelVariant;

std::vector<std::string> topics_in_order(const std::vector<corpus::StanceExample>& corpus) {
  std::vector<std::string> out;
  for (const auto& ex : corpus)
    if (std::find(out.begin(), out.end(), ex.topic) == out.end()) out.push_back(ex.topic);
  return out;
}

void check_topic_name(const std::string& t) {
  require(!t.empty() && std::all_of(t.begin(), t.end(),
                                    [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'; }),
          ErrorKind::Config, "topic name '" + t + "' must use only letters, digits, '_' or '-'");
}

}  // namespace

std::vector<double> sweep_gammas(const RunConfig& cfg) {
  std::set<double> g(cfg.gammas.begin(), cfg.gammas.end());
  g.insert(cfg.gamma);
  return {g.begin(), g.end()};
}

StageContext::StageContext(const RunConfig& cfg, RunDir& dir, const LogFn& log)
    : cfg_(cfg), dir_(dir), log_(log) {}

void StageContext::log(const std::string& msg) const {
  if (log_) log_(msg);
}

void StageContext::load_data() {
  if (tok_) return;
  corpus_ = corpus::load_corpus_jsonl(dir_.file(paths::kCorpus));
  tok_ = corpus::Tokenizer::from_json(dir_.read_json(paths::kTokenizer));
  const auto split = dir_.read_json(paths::kSplit);
  topics_ = split.at("topics").get<std::vector<std::string>>();
  split_.train = split.at("train").get<std::vector<std::size_t>>();
  split_.eval = split.at("eval").get<std::vector<std::size_t>>();
  eval_ = corpus::make_eval_set(*tok_, corpus_, split_.eval, "eval");
  model_cfg_ = cfg_.model;
  model_cfg_.vocab_size = tok_->vocab_size();
  model_cfg_.seed = derive_seed(cfg_.seed, "init");
}

std::vector<corpus::StanceExample> StageContext::train_examples(std::string_view topic) const {
  std::vector<corpus::StanceExample> out;
  for (auto i : split_.train)
    if (corpus_[i].topic == topic) out.push_back(corpus_[i]);
  return out;
}

nlohmann::json StageContext::checkpoint_metadata() const {
  return {{"tokenizer", tok_->to_json()}, {"lexicon", corpus::to_json(cfg_.synth)}};
}

const ModelVariant& StageContext::model(const std::string& rel) {
  auto it = models_.find(rel);
  if (it != models_.end()) return it->second;
  auto ck = tinylm::load_checkpoint(dir_.file(rel), model_cfg_);
  return models_.emplace(rel, std::move(ck.variant)).first->second;
}

void StageContext::save_model(const std::string& rel, const ModelVariant& v) {
  tinylm::save_checkpoint(dir_.output(rel), v, checkpoint_metadata());
}

const stance::Judge& StageContext::judge() {
  if (!judge_) {
    if (cfg_.judge.kind == JudgeKind::Http)
      judge_ = std::make_unique<stance::HttpJudge>(cfg_.judge.http);
    else
      judge_ = std::make_unique<stance::LexiconJudge>(cfg_.synth);
  }
  return *judge_;
}

pnlac::NeuronPartition StageContext::partition(double gamma) const {
  return pnlac::partition_from_json(dir_.read_json(paths::partition(gamma)));
}

tinylm::TrainHyper StageContext::finetune_hyper(std::string_view tag) const {
  auto h = cfg_.finetune;
  h.seed = derive_seed(cfg_.seed, tag);
  return h;
}

void run_synth(StageContext& ctx) {
  const auto& cfg = ctx.cfg();
  auto& dir = ctx.dir();
  std::vector<corpus::StanceExample> corpus;
  std::vector<std::string> topics;
  if (cfg.corpus_path) {
    corpus = corpus::load_corpus_jsonl(*cfg.corpus_path);
    require(!corpus.empty(), ErrorKind::Config, "corpus '" + cfg.corpus_path->string() + "' is empty");
    topics = topics_in_order(corpus);
  } else {
    auto spec = cfg.synth;
    spec.seed = derive_seed(cfg.seed, "synth");
    corpus = corpus::generate_synth_corpus(spec);
    topics = spec.topic_names();
  }
  for (const auto& t : topics) check_topic_name(t);
  const auto tok = corpus::build_tokenizer(corpus);
  const auto split = corpus::split_corpus(corpus, cfg.eval_fraction, derive_seed(cfg.seed, "split"));
  for (const auto& t : topics) {
    std::size_t n_eval = 0;
    for (auto i : split.eval) n_eval += corpus[i].topic == t;
    require(n_eval > 0, ErrorKind::Config, "topic '" + t + "' has no evaluation prompts; raise eval_fraction");
  }
  for (const auto& ex : corpus) {
    const auto np = tok.encode(ex.prompt).size();
    const auto nc = std::max(tok.encode(ex.left_completion).size(), tok.encode(ex.right_completion).size());
    require(np + nc <= cfg.model.max_seq_len && np < cfg.model.max_seq_len, ErrorKind::Config,
            "model.max_seq_len " + std::to_string(cfg.model.max_seq_len) +
                " is too short for an example of length " + std::to_string(np + nc));
  }
  corpus::write_corpus_jsonl(dir.output(paths::kCorpus), corpus);
  dir.write_json(paths::kTokenizer, tok.to_json());
  dir.write_json(paths::kSplit, {{"topics", topics}, {"train", split.train}, {"eval", split.eval}});
  ctx.log("synth: " + std::to_string(corpus.size()) + " examples, " + std::to_string(topics.size()) +
          " topics, vocabulary " + std::to_string(tok.vocab_size()));
}

void run_train_base(StageContext& ctx) {
  ctx.load_data();
  const auto& cfg = ctx.cfg();
  Rng sides(derive_seed(cfg.seed, "base-sides"));
  std::vector<tinylm::TrainExample> train;
  std::size_t n_left = 0;
  for (auto i : ctx.split().train) {
    const bool left = sides.uniform() < cfg.base_left_fraction;
    n_left += left;
    train.push_back(corpus::make_train_example(ctx.tok(), ctx.corpus()[i], left ? Side::Left : Side::Right));
  }
  auto hyper = cfg.base_training;
  hyper.seed = derive_seed(cfg.seed, "base-train");
  const auto init = tinylm::init_model(ctx.model_config());
  const double initial = tinylm::mean_loss(init, train);
  auto result = tinylm::train(init, train, hyper);
  const double final_loss = tinylm::mean_loss(result.params, train);
  const ModelVariant vanilla{std::move(result.params), std::nullopt, tinylm::Leaning::Vanilla};
  ctx.save_model(paths::kVanilla, vanilla);
  ctx.dir().write_json("logs/train_base.json", {{"examples", train.size()},
                                                {"left_examples", n_left},
                                                {"steps", result.step_losses.size()},
                                                {"initial_loss", initial},
                                                {"final_loss", final_loss}});
  ctx.log("train-base: loss " + std::to_string(initial) + " -> " + std::to_string(final_loss));
}

void run_finetune(StageContext& ctx) {
  ctx.load_data();
  const auto& vanilla = ctx.model(paths::kVanilla);
  nlohmann::json log = nlohmann::json::object();
  for (const auto& t : ctx.topics()) {
    const auto examples = ctx.train_examples(t);
    for (auto [side, name] : {std::pair{Side::Left, "left"}, std::pair{Side::Right, "right"}}) {
      const auto out = inhibitft::finetune(vanilla, examples, ctx.tok(), side,
                                           ctx.finetune_hyper("ft:" + std::string(name) + ":" + t));
      ctx.save_model(paths::finetuned(name, t), out.variant);
      log[std::string(name) + ":" + t] = {{"initial_loss", out.initial_loss}, {"final_loss", out.final_loss}};
      ctx.log("finetune " + std::string(name) + ":" + t + ": loss " + std::to_string(out.initial_loss) + " -> " +
              std::to_string(out.final_loss));
    }
  }
  ctx.dir().write_json("logs/finetune.json", log);
}

void run_locate(StageContext& ctx) {
  ctx.load_data();
  const auto& cfg = ctx.cfg();
  const auto& mc = ctx.model_config();
  pnlac::ScoreOptions opt{cfg.response_source, cfg.max_new, nullptr};
  if (cfg.response_source == pnlac::ResponseSource::Vanilla) opt.vanilla = &ctx.model(paths::kVanilla);

  std::vector<pnlac::NeuronScoreTable> tables;
  nlohmann::json log = nlohmann::json::object();
  for (const auto& t : ctx.topics()) {
    const auto& right = ctx.model(paths::finetuned("right", t));
    const auto& left = ctx.model(paths::finetuned("left", t));
    auto table = pnlac::activation_difference_scores(right, left, ctx.eval_set().only_topic(t), opt);
    pnlac::write_scores_csv(ctx.dir().output(paths::scores(t)), table);
    log[t] = {{"response_tokens", table.total_response_tokens}, {"skipped_prompts", table.skipped_prompts}};
    tables.push_back(std::move(table));
  }
  const auto corpus_sha = sha256_file(ctx.dir().file(paths::kCorpus));
  for (double g : sweep_gammas(cfg)) {
    std::vector<std::pair<std::string, pnlac::NeuronSet>> sets;
    for (std::size_t k = 0; k < tables.size(); ++k)
      sets.emplace_back(ctx.topics()[k], pnlac::select_neurons(tables[k], {g}));
    const auto part = pnlac::partition_neurons(sets);
    const pnlac::PartitionProvenance prov{
        g, corpus_sha.substr(0, 16), {{"master", cfg.seed}, {"init", mc.seed}}, mc.n_layers, mc.d_ff};
    ctx.dir().write_json(paths::partition(g), pnlac::partition_to_json(part, prov));
    if (g == cfg.gamma)
      ctx.log("locate: gamma " + std::to_string(g) + "% selects " + std::to_string(sets.front().second.size()) +
              " per topic, |G| = " + std::to_string(part.general.size()));
  }
  ctx.dir().write_json("logs/locate.json", log);
}

void run_patch_eval(StageContext& ctx) {
  ctx.load_data();
  const auto& cfg = ctx.cfg();
  const auto& vanilla = ctx.model(paths::kVanilla);
  const auto part = ctx.partition(cfg.gamma);
  const auto& judge = ctx.judge();

  std::vector<std::pair<std::string, const pnlac::NeuronSet*>> conditions{{"G", &part.general}};
  for (const auto& [t, s] : part.topic_specific) conditions.emplace_back("S:" + t, &s);

  std::ofstream responses(ctx.dir().output("patch/responses.jsonl"), std::ios::trunc);
  nlohmann::json baseline = nlohmann::json::object();
  for (const auto& k : ctx.topics()) {
    const auto ev = stance::evaluate_stance(ctx.eval_set(), k, stance::greedy_generator(vanilla.params, cfg.max_new),
                                            ctx.tok(), judge);
    baseline[k] = ev.score;
    // Prompt files for rerunning a single patch from the command line.
    std::ofstream prompts(ctx.dir().output("patch/prompts_" + k + ".jsonl"), std::ios::trunc);
    for (const auto& item : ctx.eval_set().items)
      if (item.topic == k)
        prompts << nlohmann::json{{"prompt", ctx.tok().decode(item.prompt)}, {"topic", k}}.dump() << '\n';
  }

  nlohmann::json conds = nlohmann::json::object();
  for (const auto& [name, set] : conditions) {
    nlohmann::json st = nlohmann::json::object(), delta = nlohmann::json::object();
    for (const auto& k : ctx.topics()) {
      const auto& donor = ctx.model(paths::finetuned("right", k));
      const patching::PatchPlan plan{&donor, &vanilla, *set, cfg.positions_mode, cfg.max_new};
      const stance::Generator gen = [&plan](const tinylm::Tokens& prompt) {
        return patching::patched_generate(plan, prompt).tokens;
      };
      const auto ev = stance::evaluate_stance(ctx.eval_set(), k, gen, ctx.tok(), judge);
      st[k] = ev.score;
      delta[k] = ev.score - baseline[k].get<double>();
      for (std::size_t i = 0; i < ev.responses.size(); ++i)
        responses << nlohmann::json{{"condition", name},
                                    {"topic", k},
                                    {"response", ev.responses[i]},
                                    {"label", stance::to_string(ev.labels[i])}}
                         .dump()
                  << '\n';
      const std::string neuron_file =
          paths::partition(cfg.gamma) + (name == "G" ? std::string() : "#" + name.substr(2));
      // Paths relative to the manifest, which sits in patch/.
      const patching::PatchManifest m{"../" + paths::finetuned("right", k), std::string("../") + paths::kVanilla,
                                      "../" + neuron_file, cfg.positions_mode, "prompts_" + k + ".jsonl"};
      const std::string tag = name == "G" ? "G" : "S_" + name.substr(2);
      ctx.dir().write_json("patch/manifest_" + tag + "_" + k + ".json", patching::to_json(m));
    }
    conds[name] = {{"neurons", set->size()}, {"stance", st}, {"delta", delta}};
    ctx.log("patch-eval " + name + ": " + delta.dump());
  }
  responses.close();
  ctx.dir().write_json(paths::kPatchEval, {{"gamma", cfg.gamma},
                                           {"positions_mode", patching::to_string(cfg.positions_mode)},
                                           {"donor", "right-tuned model of the prompt's topic"},
                                           {"baseline", baseline},
                                           {"conditions", conds}});
}

void run_inhibitft(StageContext& ctx) {
  ctx.load_data();
  const auto& cfg = ctx.cfg();
  const auto& mc = ctx.model_config();
  const auto& vanilla = ctx.model(paths::kVanilla);
  const auto part = ctx.partition(cfg.gamma);
  nlohmann::json log = nlohmann::json::object();
  for (const auto& t : ctx.topics()) {
    const auto examples = ctx.train_examples(t);
    // Same data order as the plain right fine-tune; only the mask differs.
    const auto hyper = ctx.finetune_hyper("ft:right:" + t);
    const inhibitft::InhibitConfig ift{part.general, cfg.freeze_mode, hyper};
    const auto inhibited = inhibitft::inhibit_finetune(vanilla, examples, ctx.tok(), ift);
    ctx.save_model(paths::inhibited(t), inhibited.variant);
    ctx.dir().write_json("inhibit/freeze_" + t + ".json", inhibitft::freeze_manifest(ift, inhibited.mask_size));

    const inhibitft::InhibitConfig rnd{
        inhibitft::random_neuron_set(mc.n_layers, mc.d_ff, part.general.size(), derive_seed(cfg.seed, "random-set:" + t)),
        cfg.freeze_mode, hyper};
    const auto random = inhibitft::inhibit_finetune(vanilla, examples, ctx.tok(), rnd);
    ctx.save_model(paths::random_inhibited(t), random.variant);
    ctx.dir().write_json("inhibit/freeze_random_" + t + ".json", inhibitft::freeze_manifest(rnd, random.mask_size));

    log[t] = {{"inhibit", {{"initial_loss", inhibited.initial_loss}, {"final_loss", inhibited.final_loss}}},
              {"random", {{"initial_loss", random.initial_loss}, {"final_loss", random.final_loss}}}};
    ctx.log("inhibitft " + t + ": loss " + std::to_string(inhibited.final_loss) + ", random " +
            std::to_string(random.final_loss));
  }
  ctx.dir().write_json("logs/inhibitft.json", log);
}

void run_evaluate(StageContext& ctx) {
  ctx.load_data();
  const auto& cfg = ctx.cfg();
  const auto& topics = ctx.topics();
  const auto& judge = ctx.judge();

  std::vector<std::pair<std::string, std::string>> rows{{"vanilla", paths::kVanilla}};
  for (const auto& t : topics) {
    rows.emplace_back("ft:" + t, paths::finetuned("right", t));
    rows.emplace_back("ift:" + t, paths::inhibited(t));
    rows.emplace_back("random:" + t, paths::random_inhibited(t));
  }

  std::vector<tinylm::Tokens> heldout;
  for (auto i : ctx.split().eval) {
    const auto& ex = ctx.corpus()[i];
    for (const auto* c : {&ex.left_completion, &ex.right_completion}) {
      auto seq = ctx.tok().encode(ex.prompt);
      const auto comp = ctx.tok().encode(*c);
      seq.insert(seq.end(), comp.begin(), comp.end());
      seq.push_back(tinylm::kEosToken);
      if (seq.size() <= ctx.model_config().max_seq_len) heldout.push_back(std::move(seq));
    }
  }

  stance::StanceMatrix matrix(topics);
  nlohmann::json ppl = nlohmann::json::object();
  std::ofstream responses(ctx.dir().output("eval/responses.jsonl"), std::ios::trunc);
  for (const auto& [label, rel] : rows) {
    const auto& m = ctx.model(rel);
    for (const auto& k : topics) {
      const auto ev = stance::evaluate_stance(ctx.eval_set(), k, stance::greedy_generator(m.params, cfg.max_new),
                                              ctx.tok(), judge);
      matrix.set(label, k, ev.score);
      for (std::size_t i = 0; i < ev.responses.size(); ++i)
        responses << nlohmann::json{{"model", label},
                                    {"topic", k},
                                    {"response", ev.responses[i]},
                                    {"label", stance::to_string(ev.labels[i])}}
                         .dump()
                  << '\n';
    }
    ppl[label] = stance::perplexity(m.params, heldout);
  }
  responses.close();

  const auto vanilla_row = matrix.row("vanilla");
  nlohmann::json coupling = nlohmann::json::object();
  for (const auto& t : topics) {
    coupling[t] = {{"R_ft", stance::coupling_rmse(matrix.row("ft:" + t), vanilla_row, t)},
                   {"R_inhibit", stance::coupling_rmse(matrix.row("ift:" + t), vanilla_row, t)},
                   {"R_random", stance::coupling_rmse(matrix.row("random:" + t), vanilla_row, t)}};
  }
  ctx.dir().write_json(paths::kEvaluation, {{"topics", topics},
                                            {"stance_matrix", matrix.to_json()},
                                            {"perplexity", ppl},
                                            {"heldout_sequences", heldout.size()},
                                            {"coupling", coupling}});
  ctx.log("evaluate: coupling " + coupling.dump());
}

}  // namespace polneuron::pipeline

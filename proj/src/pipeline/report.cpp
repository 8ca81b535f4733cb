#include <cstdio>
#include <sstream>

#include "pipeline/stages.hpp"
#include "polneuron/error.hpp"

namespace polneuron::pipeline {

namespace {

std::string fmt(double v, const char* spec = "%.6f") {
  char buf[48];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

pnlac::NeuronSet political_union(const pnlac::NeuronPartition& p) {
  auto u = p.general;
  for (const auto& [t, s] : p.topic_specific) u = u.unite(s);
  return u;
}

nlohmann::json mitigation_json(const stance::Mitigation& m) {
  return {{"per_topic_delta", m.per_topic_delta},
          {"mean_delta", m.mean_delta},
          {"mean_delta_percent", 100.0 * m.mean_delta}};
}

}  // namespace

void run_report(StageContext& ctx) {
  ctx.load_data();
  const auto& cfg = ctx.cfg();
  const auto& mc = ctx.model_config();
  auto& dir = ctx.dir();
  const auto& topics = ctx.topics();
  const std::size_t total = mc.n_layers * mc.d_ff;

  const auto part = ctx.partition(cfg.gamma);
  const auto patch = dir.read_json(paths::kPatchEval);
  const auto eval = dir.read_json(paths::kEvaluation);

  // (1) layer histogram and percentage split at the primary gamma.
  {
    std::ostringstream csv;
    csv << "set";
    for (std::size_t l = 0; l < mc.n_layers; ++l) csv << ",layer_" << l;
    csv << ",total\n";
    auto row = [&](const std::string& name, const pnlac::NeuronSet& s) {
      csv << name;
      for (auto c : pnlac::layer_histogram(s, mc.n_layers)) csv << ',' << c;
      csv << ',' << s.size() << '\n';
    };
    row("G", part.general);
    for (const auto& [t, s] : part.topic_specific) row("S:" + t, s);
    row("political", political_union(part));
    dir.write_text(paths::kLayerHistogram, csv.str());

    std::ostringstream pct;
    pct << "set,count,percent\n";
    auto line = [&](const std::string& name, std::size_t n) {
      pct << name << ',' << n << ',' << fmt(100.0 * static_cast<double>(n) / static_cast<double>(total), "%.4f")
          << '\n';
    };
    line("G", part.general.size());
    for (const auto& [t, s] : part.topic_specific) line("S:" + t, s.size());
    const auto political = political_union(part).size();
    line("political", political);
    line("other", total - political);
    dir.write_text(paths::kPercentages, pct.str());
  }

  // (2) stance matrix: evaluated models plus patched vanilla variants.
  stance::StanceMatrix matrix(topics);
  const auto& em = eval.at("stance_matrix");
  for (const auto& label : em.at("row_order"))
    for (const auto& t : topics) matrix.set(label, t, em.at("rows").at(label.get<std::string>()).at(t).get<double>());
  nlohmann::json patch_deltas = nlohmann::json::object();
  for (const auto& [name, c] : patch.at("conditions").items()) {
    for (const auto& t : topics) matrix.set("patch:" + name, t, c.at("stance").at(t).get<double>());
    patch_deltas[name] = c.at("delta");
  }
  matrix.write_csv(dir.output(paths::kStanceMatrix));

  // (3) coupling and mitigation.
  std::map<std::string, stance::CouplingEntry> entries;
  stance::TopicScores r_ft, r_ift, r_rand;
  for (const auto& t : topics) {
    const auto& c = eval.at("coupling").at(t);
    entries[t] = {c.at("R_ft").get<double>(), c.at("R_inhibit").get<double>(), c.at("R_random").get<double>()};
    r_ft[t] = entries[t].r_ft;
    r_ift[t] = entries[t].r_inhibit;
    r_rand[t] = entries[t].r_random;
  }
  const auto mitig = stance::mitigation(r_ft, r_ift);
  const auto mitig_random = stance::mitigation(r_ft, r_rand);
  const nlohmann::json coupling = {{"gamma", cfg.gamma},
                                   {"topics", stance::coupling_report_json(entries)},
                                   {"mitigation", mitigation_json(mitig)},
                                   {"random_mitigation", mitigation_json(mitig_random)}};
  dir.write_json(paths::kCoupling, coupling);

  // (4) gamma sweep.
  nlohmann::json sweep = nlohmann::json::array();
  {
    std::ostringstream csv;
    csv << "gamma,selected_per_topic,general";
    for (const auto& t : topics) csv << ",S:" << t;
    csv << ",political,percent\n";
    for (double g : sweep_gammas(cfg)) {
      const auto p = ctx.partition(g);
      const auto political = political_union(p).size();
      csv << fmt(g, "%g") << ',' << p.selected.front().second.size() << ',' << p.general.size();
      nlohmann::json specific = nlohmann::json::object();
      for (const auto& [t, s] : p.topic_specific) {
        csv << ',' << s.size();
        specific[t] = s.size();
      }
      csv << ',' << political << ','
          << fmt(100.0 * static_cast<double>(political) / static_cast<double>(total), "%.4f") << '\n';
      sweep.push_back({{"gamma", g},
                       {"selected_per_topic", p.selected.front().second.size()},
                       {"general", p.general.size()},
                       {"specific", specific},
                       {"political", political}});
    }
    dir.write_text(paths::kGammaSweep, csv.str());
  }

  nlohmann::json specific = nlohmann::json::object();
  for (const auto& [t, s] : part.topic_specific) specific[t] = s.size();
  const auto train_base = dir.read_json("logs/train_base.json");
  const nlohmann::json metrics = {
      {"schema_version", 1},
      {"seed", cfg.seed},
      {"gamma", cfg.gamma},
      {"topics", topics},
      {"neurons",
       {{"total", total},
        {"selected_per_topic", part.selected.front().second.size()},
        {"general", part.general.size()},
        {"specific", specific},
        {"general_layer_histogram", pnlac::layer_histogram(part.general, mc.n_layers)}}},
      {"stance", matrix.to_json()},
      {"coupling", coupling},
      {"patch", {{"baseline", patch.at("baseline")}, {"delta", patch_deltas}}},
      {"perplexity", eval.at("perplexity")},
      {"gamma_sweep", sweep},
      {"base_final_loss", train_base.at("final_loss")},
  };
  dir.write_json(paths::kMetrics, metrics);
  ctx.log("report: mean mitigation " + fmt(mitig.mean_delta) + " (random " + fmt(mitig_random.mean_delta) + ")");
}

RunManifest run_pipeline(const RunConfig& cfg, std::span<const Stage> stages, const LogFn& log) {
  cfg.validate();
  std::vector<Stage> order(stages.begin(), stages.end());
  std::sort(order.begin(), order.end());
  order.erase(std::unique(order.begin(), order.end()), order.end());
  require(!order.empty(), ErrorKind::Config, "no stages selected");

  std::error_code ec;
  std::filesystem::create_directories(cfg.output_dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create output directory '" + cfg.output_dir.string() + "': " + ec.message());
  RunDirLock lock(cfg.output_dir);
  RunDir dir(cfg.output_dir, to_json(cfg));

  for (Stage s : order) {
    for (Stage dep : stage_dependencies(s)) dir.require_stage(dep, s);
    StageContext ctx(cfg, dir, log);
    dir.begin_stage();
    const auto t0 = std::chrono::steady_clock::now();
    switch (s) {
      case Stage::Synth: run_synth(ctx); break;
      case Stage::TrainBase: run_train_base(ctx); break;
      case Stage::Finetune: run_finetune(ctx); break;
      case Stage::Locate: run_locate(ctx); break;
      case Stage::PatchEval: run_patch_eval(ctx); break;
      case Stage::InhibitFt: run_inhibitft(ctx); break;
      case Stage::Evaluate: run_evaluate(ctx); break;
      case Stage::Report: run_report(ctx); break;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    dir.finish_stage(s, secs);
  }
  return dir.manifest();
}

}  // namespace polneuron::pipeline

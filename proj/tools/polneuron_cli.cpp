// Command-line front end. Talks to the library only through the C API.
#include <cstdio>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "polneuron/polneuron.h"

namespace {

struct Options {
  std::string config_path;
  std::string stages;
  std::optional<uint64_t> seed;
  std::string out;
  bool quiet = false;
};

int exit_code(pn_status s) {
  switch (s) {
    case PN_OK: return 0;
    case PN_ERR_CONFIG: return 2;
    case PN_ERR_DEPENDENCY: return 3;
    case PN_ERR_NUMERIC: return 4;
    default: return 1;
  }
}

int report(pn_status s) {
  if (s != PN_OK) std::fprintf(stderr, "polneuron: %s: %s\n", pn_status_name(s), pn_last_error());
  return exit_code(s);
}

void print_line(const char* line, void*) { std::fprintf(stderr, "%s\n", line); }

// Loads --config (or the defaults) and applies --seed / --out on top.
pn_status make_config(const Options& o, pn_config** cfg) {
  pn_status s = o.config_path.empty() ? pn_config_default(cfg) : pn_config_load(o.config_path.c_str(), cfg);
  if (s != PN_OK) return s;
  if (o.seed) s = pn_config_set_seed(*cfg, *o.seed);
  if (s == PN_OK && !o.out.empty()) s = pn_config_set_output_dir(*cfg, o.out.c_str());
  if (s != PN_OK) {
    pn_config_free(*cfg);
    *cfg = nullptr;
  }
  return s;
}

int run_stages(const Options& o, const std::string& stages) {
  pn_config* cfg = nullptr;
  pn_status s = make_config(o, &cfg);
  if (s != PN_OK) return report(s);
  s = pn_run_pipeline(cfg, stages.c_str(), o.quiet ? nullptr : print_line, nullptr, nullptr);
  pn_config_free(cfg);
  return report(s);
}

int show_config(const Options& o) {
  pn_config* cfg = nullptr;
  pn_status s = make_config(o, &cfg);
  if (s != PN_OK) return report(s);
  char* text = nullptr;
  s = pn_config_to_json(cfg, &text);
  pn_config_free(cfg);
  if (s != PN_OK) return report(s);
  std::printf("%s\n", text);
  pn_string_free(text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Political neuron localisation and inhibition on tiny language models"};
  app.set_version_flag("--version", std::string(pn_version()));
  app.require_subcommand(1);

  Options o;
  auto add_common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON run config (defaults when omitted)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Override the master seed");
    sub->add_option("--out", o.out, "Override the run directory");
    sub->add_flag("-q,--quiet", o.quiet, "No progress lines");
  };

  int rc = 0;
  const char* stage_names[] = {"synth", "train-base", "finetune", "locate",
                               "patch-eval", "inhibitft", "evaluate", "report"};
  for (const char* name : stage_names) {
    auto* sub = app.add_subcommand(name, std::string("Run only the '") + name + "' stage");
    add_common(sub);
    sub->callback([&, name] { rc = run_stages(o, name); });
  }

  auto* full = app.add_subcommand("full", "Run every stage in order");
  add_common(full);
  full->callback([&] { rc = run_stages(o, "full"); });

  auto* run = app.add_subcommand("run", "Run a list of stages");
  add_common(run);
  run->add_option("--stages", o.stages, "Comma separated stage names or 'full'")->required();
  run->callback([&] { rc = run_stages(o, o.stages); });

  auto* cfg = app.add_subcommand("config", "Print the effective config as JSON");
  add_common(cfg);
  cfg->callback([&] { rc = show_config(o); });

  std::string manifest, out_jsonl;
  std::size_t max_new = 16;
  auto* patch = app.add_subcommand("patch", "Replay a patch manifest written by patch-eval");
  patch->add_option("manifest", manifest, "Patch manifest JSON")->required()->check(CLI::ExistingFile);
  patch->add_option("-o,--output", out_jsonl, "Output JSON lines")->required();
  patch->add_option("--max-new", max_new, "Generation budget")->check(CLI::PositiveNumber);
  patch->callback([&] { rc = report(pn_patch_run(manifest.c_str(), max_new, out_jsonl.c_str())); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  return rc;
}

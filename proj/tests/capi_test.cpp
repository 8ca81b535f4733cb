#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "polneuron/polneuron.h"

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("polneuron_capi_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(POLNEURON_CLI) + " " + args + " >/dev/null 2>&1";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

// Small enough to run the whole pipeline in well under a second.
const char* kTinyConfig = R"({
  "schema_version": 1,
  "seed": 5,
  "corpus": {"synth_spec": {"examples_per_topic": 10}},
  "model": {"n_layers": 2, "d_model": 16, "d_ff": 24, "n_heads": 2, "max_seq_len": 48},
  "base_training": {"epochs": 1},
  "finetune": {"epochs": 1},
  "locate": {"gammas": [5, 10], "gamma": 10},
  "evaluate": {"max_new": 4}
})";

}  // namespace

TEST(CApi, VersionAndStatusNames) {
  EXPECT_STREQ(pn_version(), "0.1.0");
  EXPECT_STREQ(pn_status_name(PN_ERR_DEPENDENCY), "dependency error");
}

TEST(CApi, NullArgumentsAreRejected) {
  EXPECT_EQ(pn_config_default(nullptr), PN_ERR_INVALID_ARGUMENT);
  EXPECT_NE(std::string(pn_last_error()).find("out"), std::string::npos);
  EXPECT_EQ(pn_config_set_seed(nullptr, 1), PN_ERR_INVALID_ARGUMENT);
  pn_config_free(nullptr);
  pn_string_free(nullptr);
}

TEST(CApi, ConfigErrorsCarryKeyPath) {
  pn_config* cfg = nullptr;
  EXPECT_EQ(pn_config_from_json(R"({"schema_version": 1, "model": {"dff": 3}})", &cfg), PN_ERR_CONFIG);
  EXPECT_EQ(cfg, nullptr);
  EXPECT_NE(std::string(pn_last_error()).find("config.model.dff"), std::string::npos) << pn_last_error();
  EXPECT_EQ(pn_config_from_json("{not json", &cfg), PN_ERR_CONFIG);
  EXPECT_EQ(pn_config_load("/nonexistent/cfg.json", &cfg), PN_ERR_CONFIG);
}

TEST(CApi, ConfigRoundTrip) {
  pn_config* cfg = nullptr;
  ASSERT_EQ(pn_config_default(&cfg), PN_OK);
  ASSERT_EQ(pn_config_set_seed(cfg, 42), PN_OK);
  EXPECT_EQ(pn_config_set_output_dir(cfg, ""), PN_ERR_CONFIG);
  char* text = nullptr;
  ASSERT_EQ(pn_config_to_json(cfg, &text), PN_OK);
  pn_config* back = nullptr;
  ASSERT_EQ(pn_config_from_json(text, &back), PN_OK);
  char* text2 = nullptr;
  ASSERT_EQ(pn_config_to_json(back, &text2), PN_OK);
  EXPECT_STREQ(text, text2);
  EXPECT_NE(std::string(text).find("\"seed\": 42"), std::string::npos);
  pn_string_free(text);
  pn_string_free(text2);
  pn_config_free(cfg);
  pn_config_free(back);
}

TEST(CApi, RunPipelineAndPatchReplay) {
  const auto d = scratch("run");
  pn_config* cfg = nullptr;
  ASSERT_EQ(pn_config_from_json(kTinyConfig, &cfg), PN_OK);
  ASSERT_EQ(pn_config_set_output_dir(cfg, d.c_str()), PN_OK);

  EXPECT_EQ(pn_run_pipeline(cfg, "report", nullptr, nullptr, nullptr), PN_ERR_DEPENDENCY);
  EXPECT_NE(std::string(pn_last_error()).find("synth"), std::string::npos);
  EXPECT_EQ(pn_run_pipeline(cfg, "synth,nope", nullptr, nullptr, nullptr), PN_ERR_CONFIG);

  int lines = 0;
  char* manifest = nullptr;
  const auto count = [](const char*, void* user) { ++*static_cast<int*>(user); };
  ASSERT_EQ(pn_run_pipeline(cfg, "full", count, &lines, &manifest), PN_OK) << pn_last_error();
  EXPECT_GT(lines, 0);
  ASSERT_NE(manifest, nullptr);
  EXPECT_NE(std::string(manifest).find("metrics.json"), std::string::npos);
  pn_string_free(manifest);
  pn_config_free(cfg);

  const auto out = d / "replay.jsonl";
  EXPECT_EQ(pn_patch_run((d / "patch" / "manifest_S_economy_economy.json").c_str(), 4, out.c_str()), PN_OK)
      << pn_last_error();
  EXPECT_GT(fs::file_size(out), 0u);
  EXPECT_EQ(pn_patch_run((d / "patch" / "missing.json").c_str(), 4, out.c_str()), PN_ERR_IO);
  fs::remove_all(d);
}

TEST(Cli, ExitCodes) {
  const auto d = scratch("cli");
  fs::create_directories(d);
  EXPECT_EQ(cli("--help"), 0);
  EXPECT_EQ(cli("report --out " + d.string()), 3);
  std::ofstream(d / "bad.json") << R"({"schema_version": 1, "bogus": true})";
  EXPECT_EQ(cli("synth --config " + (d / "bad.json").string()), 2);
  EXPECT_EQ(cli("run --stages synth,unknown --out " + d.string()), 2);
  EXPECT_EQ(cli("no-such-command"), 2);
  std::ofstream(d / "tiny.json") << kTinyConfig;
  EXPECT_EQ(cli("run -q --stages synth,train-base --config " + (d / "tiny.json").string() + " --out " +
                (d / "run").string()),
            0);
  EXPECT_TRUE(fs::exists(d / "run" / "models" / "vanilla.ckpt"));
  fs::remove_all(d);
}

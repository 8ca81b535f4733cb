#include "pipeline/run_dir.hpp"

#include <openssl/evp.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "polneuron/error.hpp"

namespace polneuron::pipeline {

namespace {

struct StageName {
  Stage stage;
  std::string_view name;
};

constexpr StageName kStageNames[] = {
    {Stage::Synth, "synth"},         {Stage::TrainBase, "train-base"}, {Stage::Finetune, "finetune"},
    {Stage::Locate, "locate"},       {Stage::PatchEval, "patch-eval"}, {Stage::InhibitFt, "inhibitft"},
    {Stage::Evaluate, "evaluate"},   {Stage::Report, "report"},
};

std::string gamma_label(double g) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", g);
  return buf;
}

}  // namespace

std::string_view to_string(Stage s) {
  for (const auto& n : kStageNames)
    if (n.stage == s) return n.name;
  return "unknown";
}

Stage stage_from_string(std::string_view text) {
  for (const auto& n : kStageNames)
    if (n.name == text) return n.stage;
  fail(ErrorKind::Config, "unknown stage '" + std::string(text) + "'");
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> stages = [] {
    std::vector<Stage> v;
    for (const auto& n : kStageNames) v.push_back(n.stage);
    return v;
  }();
  return stages;
}

std::vector<Stage> parse_stage_list(std::string_view text) {
  std::vector<Stage> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto comma = text.find(',', start);
    if (comma == std::string_view::npos) comma = text.size();
    const auto item = text.substr(start, comma - start);
    if (item == "full") {
      out = all_stages();
    } else if (!item.empty()) {
      const auto s = stage_from_string(item);
      if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
    }
    start = comma + 1;
  }
  require(!out.empty(), ErrorKind::Config, "no stages selected");
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Stage> stage_dependencies(Stage s) {
  switch (s) {
    case Stage::Synth: return {};
    case Stage::TrainBase: return {Stage::Synth};
    case Stage::Finetune: return {Stage::Synth, Stage::TrainBase};
    case Stage::Locate: return {Stage::Synth, Stage::Finetune};
    case Stage::PatchEval: return {Stage::Synth, Stage::TrainBase, Stage::Finetune, Stage::Locate};
    case Stage::InhibitFt: return {Stage::Synth, Stage::TrainBase, Stage::Locate};
    case Stage::Evaluate: return {Stage::Synth, Stage::TrainBase, Stage::Finetune, Stage::InhibitFt};
    case Stage::Report: return {Stage::Synth, Stage::Locate, Stage::PatchEval, Stage::Evaluate};
  }
  return {};
}

namespace paths {
std::string finetuned(std::string_view side, std::string_view topic) {
  return "models/ft_" + std::string(side) + "_" + std::string(topic) + ".ckpt";
}
std::string inhibited(std::string_view topic) { return "models/ift_" + std::string(topic) + ".ckpt"; }
std::string random_inhibited(std::string_view topic) {
  return "models/random_" + std::string(topic) + ".ckpt";
}
std::string scores(std::string_view topic) { return "scores/" + std::string(topic) + ".csv"; }
std::string partition(double gamma) { return "neurons/gamma_" + gamma_label(gamma) + ".json"; }
}  // namespace paths

std::string sha256_hex(std::string_view data) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1)
    fail(ErrorKind::Io, "SHA-256 computation failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 15];
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json st = nlohmann::json::object();
  for (const auto& [name, r] : stages)
    st[name] = {{"config_sha256", r.config_sha256}, {"artifacts", r.artifacts}, {"wall_seconds", r.wall_seconds}};
  return {{"tool_version", tool_version}, {"config", config}, {"stages", st}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    m.tool_version = j.at("tool_version").get<std::string>();
    m.config = j.at("config");
    for (const auto& [name, r] : j.at("stages").items()) {
      StageRecord rec;
      rec.config_sha256 = r.at("config_sha256").get<std::string>();
      rec.artifacts = r.at("artifacts").get<std::map<std::string, std::string>>();
      rec.wall_seconds = r.at("wall_seconds").get<double>();
      m.stages[name] = std::move(rec);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Schema, std::string("run manifest: ") + e.what());
  }
  return m;
}

std::map<std::string, std::string> RunManifest::all_artifacts() const {
  std::map<std::string, std::string> out;
  for (const auto& [name, r] : stages) out.insert(r.artifacts.begin(), r.artifacts.end());
  return out;
}

RunDirLock::RunDirLock(const std::filesystem::path& dir) : path_(dir / paths::kLock) {
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (!f)
    fail(ErrorKind::Io, "run directory '" + dir.string() + "' is locked (" + path_.string() +
                            " exists); remove it if no other run is active");
  std::fprintf(f, "%ld\n", static_cast<long>(::getpid()));
  std::fclose(f);
}

RunDirLock::~RunDirLock() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

RunDir::RunDir(std::filesystem::path root, nlohmann::json config_json)
    : root_(std::move(root)), config_json_(std::move(config_json)) {
  auto key = config_json_;
  key.erase("output_dir");
  config_sha_ = sha256_hex(key.dump());
  const auto mpath = root_ / paths::kManifest;
  if (std::filesystem::exists(mpath)) {
    std::ifstream in(mpath);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::Schema, mpath.string() + ": malformed JSON (" + e.what() + ")");
    }
    manifest_ = RunManifest::from_json(j);
  }
  manifest_.tool_version = std::string(kToolVersion);
  manifest_.config = config_json_;
}

std::filesystem::path RunDir::file(std::string_view rel) const { return root_ / std::string(rel); }

std::filesystem::path RunDir::output(std::string_view rel) {
  auto p = file(rel);
  std::filesystem::create_directories(p.parent_path());
  pending_.push_back(std::string(rel));
  return p;
}

void RunDir::write_text(std::string_view rel, std::string_view text) {
  std::ofstream out(output(rel), std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write '" + file(rel).string() + "'");
  out << text;
}

void RunDir::write_json(std::string_view rel, const nlohmann::json& j) { write_text(rel, j.dump(2) + "\n"); }

nlohmann::json RunDir::read_json(std::string_view rel) const {
  std::ifstream in(file(rel));
  if (!in) fail(ErrorKind::Dependency, "missing artifact '" + std::string(rel) + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::Schema, std::string(rel) + ": malformed JSON (" + e.what() + ")");
  }
}

void RunDir::require_stage(Stage needed, Stage by) const {
  const std::string name(to_string(needed));
  const std::string who(to_string(by));
  auto it = manifest_.stages.find(name);
  if (it == manifest_.stages.end())
    fail(ErrorKind::Dependency, "stage '" + who + "' needs stage '" + name + "', which has not run in " +
                                    root_.string());
  if (it->second.config_sha256 != config_sha_)
    fail(ErrorKind::Dependency, "stage '" + who + "' needs stage '" + name +
                                    "', but its artifacts were produced with a different config; rerun '" +
                                    name + "'");
  for (const auto& [rel, sha] : it->second.artifacts) {
    const auto p = file(rel);
    if (!std::filesystem::exists(p))
      fail(ErrorKind::Dependency, "stage '" + who + "' needs '" + rel + "' from stage '" + name + "'");
    if (sha256_file(p) != sha)
      fail(ErrorKind::Dependency, "artifact '" + rel + "' from stage '" + name + "' was modified; rerun '" +
                                      name + "'");
  }
}

void RunDir::begin_stage() { pending_.clear(); }

void RunDir::finish_stage(Stage s, double wall_seconds) {
  StageRecord rec;
  rec.config_sha256 = config_sha_;
  rec.wall_seconds = wall_seconds;
  for (const auto& rel : pending_) rec.artifacts[rel] = sha256_file(file(rel));
  manifest_.stages[std::string(to_string(s))] = std::move(rec);
  pending_.clear();
  save_manifest();
}

void RunDir::save_manifest() const {
  const auto tmp = root_ / (std::string(paths::kManifest) + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write '" + tmp.string() + "'");
    out << manifest_.to_json().dump(2) << '\n';
  }
  std::filesystem::rename(tmp, root_ / paths::kManifest);
}

}  // namespace polneuron::pipeline

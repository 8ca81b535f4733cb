#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "polneuron/pipeline.hpp"

namespace polneuron::pipeline {

// Exclusive ownership of a run directory for the lifetime of the object.
class RunDirLock {
 public:
  explicit RunDirLock(const std::filesystem::path& dir);
  ~RunDirLock();
  RunDirLock(const RunDirLock&) = delete;
  RunDirLock& operator=(const RunDirLock&) = delete;

 private:
  std::filesystem::path path_;
};

// Artifact bookkeeping. Files written through output() during a stage are
// checksummed into the manifest when the stage finishes.
class RunDir {
 public:
  RunDir(std::filesystem::path root, nlohmann::json config_json);

  const std::filesystem::path& root() const { return root_; }
  const std::string& config_sha() const { return config_sha_; }
  const RunManifest& manifest() const { return manifest_; }

  std::filesystem::path file(std::string_view rel) const;
  // Path for a new artifact of the current stage; parent dirs are created.
  std::filesystem::path output(std::string_view rel);
  void write_text(std::string_view rel, std::string_view text);
  void write_json(std::string_view rel, const nlohmann::json& j);
  nlohmann::json read_json(std::string_view rel) const;

  // Throws a dependency error unless `needed` completed under this config
  // and its artifacts are intact.
  void require_stage(Stage needed, Stage by) const;

  void begin_stage();
  void finish_stage(Stage s, double wall_seconds);
  void save_manifest() const;

 private:
  std::filesystem::path root_;
  nlohmann::json config_json_;
  std::string config_sha_;
  RunManifest manifest_;
  std::vector<std::string> pending_;
};

}  // namespace polneuron::pipeline

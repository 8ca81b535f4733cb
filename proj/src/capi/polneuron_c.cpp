#include "polneuron/polneuron.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <string>

#include "polneuron/error.hpp"
#include "polneuron/pipeline.hpp"

struct pn_config {
  polneuron::pipeline::RunConfig cfg;
};

namespace {

thread_local std::string g_last_error;

pn_status status_of(polneuron::ErrorKind k) {
  switch (k) {
    case polneuron::ErrorKind::InvalidArgument: return PN_ERR_INVALID_ARGUMENT;
    case polneuron::ErrorKind::Config: return PN_ERR_CONFIG;
    case polneuron::ErrorKind::Dependency: return PN_ERR_DEPENDENCY;
    case polneuron::ErrorKind::Numeric: return PN_ERR_NUMERIC;
    case polneuron::ErrorKind::Schema: return PN_ERR_SCHEMA;
    case polneuron::ErrorKind::Io: return PN_ERR_IO;
  }
  return PN_ERR_INTERNAL;
}

// Runs f, mapping exceptions to status codes. Nothing may cross the C boundary.
template <class F>
pn_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return PN_OK;
  } catch (const polneuron::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown exception";
  }
  return PN_ERR_INTERNAL;
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void need(const void* p, const char* what) {
  if (!p) polneuron::fail(polneuron::ErrorKind::InvalidArgument, std::string(what) + " must not be null");
}

}  // namespace

extern "C" {

const char* pn_version(void) {
  static const std::string v(polneuron::pipeline::kToolVersion);
  return v.c_str();
}

const char* pn_last_error(void) { return g_last_error.c_str(); }

const char* pn_status_name(pn_status status) {
  switch (status) {
    case PN_OK: return "ok";
    case PN_ERR_INVALID_ARGUMENT: return "invalid argument";
    case PN_ERR_CONFIG: return "config error";
    case PN_ERR_DEPENDENCY: return "dependency error";
    case PN_ERR_NUMERIC: return "numeric failure";
    case PN_ERR_SCHEMA: return "schema error";
    case PN_ERR_IO: return "i/o error";
    case PN_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void pn_string_free(char* s) { std::free(s); }

pn_status pn_config_default(pn_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new pn_config{polneuron::pipeline::default_run_config()};
  });
}

pn_status pn_config_load(const char* path, pn_config** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new pn_config{polneuron::pipeline::load_run_config(path)};
  });
}

pn_status pn_config_from_json(const char* json_text, pn_config** out) {
  return guarded([&] {
    need(json_text, "json_text");
    need(out, "out");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
      polneuron::fail(polneuron::ErrorKind::Config, std::string("malformed config JSON: ") + e.what());
    }
    *out = new pn_config{polneuron::pipeline::run_config_from_json(j)};
  });
}

pn_status pn_config_set_seed(pn_config* cfg, uint64_t seed) {
  return guarded([&] {
    need(cfg, "cfg");
    cfg->cfg.seed = seed;
  });
}

pn_status pn_config_set_output_dir(pn_config* cfg, const char* dir) {
  return guarded([&] {
    need(cfg, "cfg");
    need(dir, "dir");
    polneuron::require(*dir != '\0', polneuron::ErrorKind::Config, "output_dir: must not be empty");
    cfg->cfg.output_dir = dir;
  });
}

pn_status pn_config_to_json(const pn_config* cfg, char** out_json) {
  return guarded([&] {
    need(cfg, "cfg");
    need(out_json, "out_json");
    *out_json = dup_string(polneuron::pipeline::to_json(cfg->cfg).dump(2));
  });
}

void pn_config_free(pn_config* cfg) { delete cfg; }

pn_status pn_run_pipeline(const pn_config* cfg, const char* stages, pn_log_fn log, void* user,
                          char** out_manifest_json) {
  return guarded([&] {
    need(cfg, "cfg");
    need(stages, "stages");
    const auto list = polneuron::pipeline::parse_stage_list(stages);
    polneuron::pipeline::LogFn fn;
    if (log) fn = [log, user](std::string_view line) { log(std::string(line).c_str(), user); };
    const auto manifest = polneuron::pipeline::run_pipeline(cfg->cfg, list, fn);
    if (out_manifest_json) *out_manifest_json = dup_string(manifest.to_json().dump(2));
  });
}

pn_status pn_patch_run(const char* manifest_path, size_t max_new, const char* out_jsonl) {
  return guarded([&] {
    need(manifest_path, "manifest_path");
    need(out_jsonl, "out_jsonl");
    polneuron::require(max_new > 0, polneuron::ErrorKind::InvalidArgument, "max_new must be positive");
    const std::filesystem::path p(manifest_path);
    std::ifstream in(p);
    if (!in) polneuron::fail(polneuron::ErrorKind::Io, "cannot open patch manifest '" + p.string() + "'");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      polneuron::fail(polneuron::ErrorKind::Schema, p.string() + ": malformed JSON (" + e.what() + ")");
    }
    const auto m = polneuron::patching::patch_manifest_from_json(j);
    polneuron::pipeline::run_patch_manifest(m, p.parent_path(), max_new, out_jsonl);
  });
}

}  // extern "C"

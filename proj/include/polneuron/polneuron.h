#ifndef POLNEURON_POLNEURON_H
#define POLNEURON_POLNEURON_H

/* C interface to the polneuron experiment pipeline. All functions return a
   pn_status; on failure pn_last_error() describes the problem (per thread).
   Strings handed out by the library are released with pn_string_free. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define PN_API __declspec(dllexport)
#else
#define PN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pn_status {
  PN_OK = 0,
  PN_ERR_INVALID_ARGUMENT = 1,
  PN_ERR_CONFIG = 2,
  PN_ERR_DEPENDENCY = 3,
  PN_ERR_NUMERIC = 4,
  PN_ERR_SCHEMA = 5,
  PN_ERR_IO = 6,
  PN_ERR_INTERNAL = 7
} pn_status;

typedef struct pn_config pn_config;

/* Receives one progress line per call; `line` is valid only during the call. */
typedef void (*pn_log_fn)(const char* line, void* user);

PN_API const char* pn_version(void);
PN_API const char* pn_last_error(void);
PN_API const char* pn_status_name(pn_status status);
PN_API void pn_string_free(char* s);

PN_API pn_status pn_config_default(pn_config** out);
PN_API pn_status pn_config_load(const char* path, pn_config** out);
PN_API pn_status pn_config_from_json(const char* json_text, pn_config** out);
PN_API pn_status pn_config_set_seed(pn_config* cfg, uint64_t seed);
PN_API pn_status pn_config_set_output_dir(pn_config* cfg, const char* dir);
/* Full config as JSON, every default spelled out. */
PN_API pn_status pn_config_to_json(const pn_config* cfg, char** out_json);
PN_API void pn_config_free(pn_config* cfg);

/* `stages` is a comma separated list of stage names or "full". On success
   *out_manifest_json (if non-null) receives the run manifest. */
PN_API pn_status pn_run_pipeline(const pn_config* cfg, const char* stages, pn_log_fn log, void* user,
                                 char** out_manifest_json);

/* Replays one patch manifest file; relative paths inside it resolve against
   the manifest's directory. Writes JSON lines to `out_jsonl`. */
PN_API pn_status pn_patch_run(const char* manifest_path, size_t max_new, const char* out_jsonl);

#ifdef __cplusplus
}
#endif

#endif

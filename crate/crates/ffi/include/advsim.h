#ifndef ADVSIM_H
#define ADVSIM_H

#include <stddef.h>
#include <stdint.h>

typedef enum AdvsimStatus {
  ADVSIM_STATUS_OK = 0,
  ADVSIM_STATUS_NULL_POINTER = 1,
  ADVSIM_STATUS_INVALID_UTF8 = 2,
  ADVSIM_STATUS_PARSE = 3,
  ADVSIM_STATUS_VALIDATION = 4,
  ADVSIM_STATUS_INVALID_ARGUMENT = 5,
  ADVSIM_STATUS_INTERNAL = 6,
} AdvsimStatus;

// Run configuration (the `[sim]` section plus prior and weight options).
typedef struct AdvsimConfig AdvsimConfig;

// The log of one simulated rollout.
typedef struct AdvsimRollout AdvsimRollout;

// A validated scenario.
typedef struct AdvsimScenario AdvsimScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next call into the library from this thread.
const char *advsim_last_error(void);

// Library version as a static NUL-terminated string.
const char *advsim_version(void);

// # Safety
// `s` must be null or a string returned by this library.
void advsim_string_free(char *s);

// Parses and validates a scenario JSON document of `len` bytes.
//
// # Safety
// `json` must point to `len` readable bytes; `out` must be writable.
enum AdvsimStatus advsim_scenario_from_json(const uint8_t *json,
                                            size_t len,
                                            struct AdvsimScenario **out);

// Synthesizes a scenario from a template name (`straight-following`,
// `adjacent-lane`, `intersection-crossing`, `oncoming`).
//
// # Safety
// `template_name` must be a NUL-terminated string; `out` must be writable.
enum AdvsimStatus advsim_scenario_synth(const char *template_name,
                                        uint64_t seed,
                                        struct AdvsimScenario **out);

// Canonical JSON of the scenario.
//
// # Safety
// `scenario` must be a live handle; `out` must be writable.
enum AdvsimStatus advsim_scenario_to_json(const struct AdvsimScenario *scenario, char **out);

// # Safety
// `scenario` must be null or a handle not yet freed.
void advsim_scenario_free(struct AdvsimScenario *scenario);

// Builds a configuration from TOML text, which may be null for defaults.
//
// # Safety
// `toml` must be null or a NUL-terminated string; `out` must be writable.
enum AdvsimStatus advsim_config_new(const char *toml, struct AdvsimConfig **out);

// Applies a `key=value` override such as `sim.seed=3`.
//
// # Safety
// `config` must be a live handle; `assignment` a NUL-terminated string.
enum AdvsimStatus advsim_config_set(struct AdvsimConfig *config, const char *assignment);

// Loads learned-planner weights from the JSON weight-file format.
//
// # Safety
// `config` must be a live handle; `json` a NUL-terminated string.
enum AdvsimStatus advsim_config_load_weights(struct AdvsimConfig *config, const char *json);

// The configuration as TOML.
//
// # Safety
// `config` must be a live handle; `out` must be writable.
enum AdvsimStatus advsim_config_to_toml(const struct AdvsimConfig *config, char **out);

// # Safety
// `config` must be null or a handle not yet freed.
void advsim_config_free(struct AdvsimConfig *config);

// Simulates one scenario with the configuration's `[sim]` settings.
//
// # Safety
// `scenario` and `config` must be live handles; `out` must be writable.
enum AdvsimStatus advsim_run(const struct AdvsimScenario *scenario,
                             const struct AdvsimConfig *config,
                             struct AdvsimRollout **out);

// Writes 1 to `collided` if the rollout ended in an AV collision, else 0.
//
// # Safety
// `rollout` must be a live handle; `collided` must be writable.
enum AdvsimStatus advsim_rollout_collided(const struct AdvsimRollout *rollout, int32_t *collided);

// The rollout log in its JSON-lines form.
//
// # Safety
// `rollout` must be a live handle; `out` must be writable.
enum AdvsimStatus advsim_rollout_to_jsonl(const struct AdvsimRollout *rollout, char **out);

// # Safety
// `rollout` must be null or a handle not yet freed.
void advsim_rollout_free(struct AdvsimRollout *rollout);

// Metrics report JSON over `n` rollouts and their scenarios.
//
// # Safety
// `rollouts` and `scenarios` must each point to `n` live handles; `out`
// must be writable.
enum AdvsimStatus advsim_evaluate(const struct AdvsimRollout *const *rollouts,
                                  const struct AdvsimScenario *const *scenarios,
                                  size_t n,
                                  char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADVSIM_H */

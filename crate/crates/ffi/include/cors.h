#ifndef CORS_H
#define CORS_H

#include <stddef.h>
#include <stdint.h>

#define CORS_OK 0

#define CORS_ERR_NULL 1

#define CORS_ERR_PARAM 2

#define CORS_ERR_GENERATION 3

#define CORS_ERR_STATE 4

#define CORS_ERR_FORMAT 5

#define CORS_ERR_IO 6

#define CORS_ERR_BUFFER 7

#define CORS_ERR_PANIC 8

#define CORS_ERR_OTHER 9

#define CORS_ACTION_UP 0

#define CORS_ACTION_DOWN 1

#define CORS_ACTION_LEFT 2

#define CORS_ACTION_RIGHT 3

#define CORS_ACTION_STOP 4

#define CORS_METRIC_MEAN_ALL 0

#define CORS_METRIC_EXACT_MAX 1

#define CORS_METRIC_NEIGHBOR_FACTORED_MAX 2

/**
 * A map with its initial and current world state.
 */
typedef struct CorsEnv CorsEnv;

/**
 * A greedy policy loaded from a snapshot.
 */
typedef struct CorsPolicy CorsPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds an environment from scenario JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t cors_env_from_scenario_json(const char *json, struct CorsEnv **out);

/**
 * Generates a random map with agents placed on it.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
int32_t cors_env_generate(uint32_t width,
                          uint32_t height,
                          double density,
                          uint32_t n_agents,
                          uint64_t seed,
                          struct CorsEnv **out);

/**
 * # Safety
 * `env` must come from this library and not be used afterwards.
 */
void cors_env_free(struct CorsEnv *env);

/**
 * # Safety
 * `env` must be a live handle and `out` a valid pointer.
 */
int32_t cors_env_n_agents(const struct CorsEnv *env, uint32_t *out);

/**
 * Writes `x0, y0, x1, y1, ...` into `xy`, which holds `len` values.
 *
 * # Safety
 * `xy` must point to `len` writable values.
 */
int32_t cors_env_positions(const struct CorsEnv *env, int32_t *xy, size_t len);

/**
 * Steps the joint action. `rewards` receives one base reward per agent;
 * `done` is set to 1 once every agent is on its goal or the step limit is hit.
 *
 * # Safety
 * `actions_ptr` holds `n` codes, `rewards` has room for `n` values, `done` is valid.
 */
int32_t cors_env_step(struct CorsEnv *env,
                      const uint8_t *actions_ptr,
                      size_t n,
                      double *rewards,
                      int32_t *done);

/**
 * Shaped rewards for `actions` from the current state, without stepping.
 *
 * # Safety
 * As for [`cors_env_step`].
 */
int32_t cors_env_shaped_rewards(const struct CorsEnv *env,
                                const uint8_t *actions_ptr,
                                size_t n,
                                double alpha,
                                uint8_t metric,
                                double *rewards);

/**
 * Returns the environment to its initial state.
 *
 * # Safety
 * `env` must be a live handle.
 */
int32_t cors_env_reset(struct CorsEnv *env);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t cors_policy_load(const char *path, struct CorsPolicy **out);

/**
 * # Safety
 * `policy` must come from this library and not be used afterwards.
 */
void cors_policy_free(struct CorsPolicy *policy);

/**
 * Greedy action codes for every agent in the current state.
 *
 * # Safety
 * `actions_out` must have room for `n` codes.
 */
int32_t cors_policy_act(const struct CorsPolicy *policy,
                        const struct CorsEnv *env,
                        uint8_t *actions_out,
                        size_t n);

/**
 * Copies the calling thread's last error message, NUL-terminated and
 * truncated to `len` bytes. Returns the full message length.
 *
 * # Safety
 * `buf` must point to `len` writable bytes, or be null with `len` 0.
 */
size_t cors_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cors_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CORS_H */

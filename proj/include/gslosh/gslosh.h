#ifndef GSLOSH_H
#define GSLOSH_H

/* C interface to the gslosh pipeline. Every function returns a status code;
 * on failure gslosh_last_error() describes the problem (per thread). Handles
 * are opaque and must be released with the matching _free function.
 *
 * Functions producing text write at most `cap` bytes including the trailing
 * NUL into `buf` and always store the full length (without NUL) in `*len`.
 * Passing buf = NULL with cap = 0 queries the length. A short buffer yields
 * GSLOSH_ERR_ARGUMENT with the text truncated. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define GSLOSH_API __declspec(dllexport)
#else
#define GSLOSH_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gslosh_status {
  GSLOSH_OK = 0,
  GSLOSH_ERR_CONFIG = 1,
  GSLOSH_ERR_STATE = 2,
  GSLOSH_ERR_TRAINING = 3,
  GSLOSH_ERR_DATA = 4,
  GSLOSH_ERR_INTEGRATION = 5,
  GSLOSH_ERR_PROJECTION = 6,
  GSLOSH_ERR_IO = 7,
  GSLOSH_ERR_PIPELINE = 8,
  GSLOSH_ERR_ARGUMENT = 9,
  GSLOSH_ERR_INTERNAL = 10
} gslosh_status;

/* Free-surface observation: 21 (x, h) pairs interleaved. */
#define GSLOSH_OBSERVATION_WIDTH 42
/* Frames per observation window fed to the recurrent encoder. */
#define GSLOSH_SEQUENCE_LENGTH 16

typedef struct gslosh_config gslosh_config;
typedef struct gslosh_bundle gslosh_bundle;

GSLOSH_API const char* gslosh_version(void);
GSLOSH_API const char* gslosh_status_name(int status);
/* Message of the last failed call on this thread; "" after a success. */
GSLOSH_API const char* gslosh_last_error(void);
/* Silences (0) or enables (1) warnings on stderr. */
GSLOSH_API void gslosh_set_warnings(int enabled);

/* ---- configuration ---------------------------------------------------- */

/* "paper-scale", "desk-scale" or "tiny". */
GSLOSH_API int gslosh_config_preset(const char* name, gslosh_config** out);
/* JSON document: "preset" selects the base, other keys override it. */
GSLOSH_API int gslosh_config_from_json(const char* json, gslosh_config** out);
GSLOSH_API int gslosh_config_load(const char* path, gslosh_config** out);
GSLOSH_API void gslosh_config_free(gslosh_config* config);
GSLOSH_API int gslosh_config_set_seed(gslosh_config* config, uint64_t seed);
/* key: "data_dir", "bundle" or "out_dir". */
GSLOSH_API int gslosh_config_set_path(gslosh_config* config, const char* key, const char* path);
GSLOSH_API int gslosh_config_to_json(const gslosh_config* config, char* buf, size_t cap,
                                     size_t* len);

/* ---- pipeline commands ------------------------------------------------ */

GSLOSH_API int gslosh_generate(const gslosh_config* config, size_t* files_written);
/* stage: "sae", "spnn" or "gru". Updates the bundle at the config path. */
GSLOSH_API int gslosh_train(const gslosh_config* config, const char* stage);
/* sequence_file may be NULL (seed from the first held-out snapshot).
 * Writes rollout.csv and decoded.gslosh into out_dir. */
GSLOSH_API int gslosh_rollout(const gslosh_config* config, const char* sequence_file,
                              size_t steps, size_t* steps_done, int* completed);
/* Writes the report files into out_dir; *audit_passed is 0 or 1. */
GSLOSH_API int gslosh_evaluate(const gslosh_config* config, int* audit_passed);
/* Text summary of out_dir/report.json. */
GSLOSH_API int gslosh_report(const gslosh_config* config, char* buf, size_t cap, size_t* len);

/* ---- bundles ---------------------------------------------------------- */

GSLOSH_API int gslosh_bundle_load(const char* path, gslosh_bundle** out);
GSLOSH_API void gslosh_bundle_free(gslosh_bundle* bundle);
/* stage: "sae", "spnn" or "gru"; *present is 0 or 1. */
GSLOSH_API int gslosh_bundle_has_stage(const gslosh_bundle* bundle, const char* stage,
                                       int* present);
GSLOSH_API int gslosh_bundle_latent_dim(const gslosh_bundle* bundle, size_t* dim);
/* Full-state width D of a snapshot (13 values per particle). */
GSLOSH_API int gslosh_bundle_state_dim(const gslosh_bundle* bundle, size_t* dim);
/* Integration step of the latent model, seconds. */
GSLOSH_API int gslosh_bundle_dt(const gslosh_bundle* bundle, double* dt);
GSLOSH_API int gslosh_bundle_checksum(const gslosh_bundle* bundle, char* buf, size_t cap,
                                      size_t* len);

/* Full snapshot (q, v, e, sigma, tau concatenated, `state_dim` values) to
 * the latent vector (`latent_dim` values). */
GSLOSH_API int gslosh_encode_state(const gslosh_bundle* bundle, const double* state,
                                   double* latent);
/* GSLOSH_SEQUENCE_LENGTH frames of GSLOSH_OBSERVATION_WIDTH values each, in
 * physical units, oldest first. */
GSLOSH_API int gslosh_encode_observations(const gslosh_bundle* bundle, const double* frames,
                                          double* latent);
/* One structure-preserving Euler step at the bundle dt. */
GSLOSH_API int gslosh_step(const gslosh_bundle* bundle, const double* latent, double* next);
/* Latent to full snapshot (`state_dim` values). */
GSLOSH_API int gslosh_decode_state(const gslosh_bundle* bundle, const double* latent,
                                   double* state);
/* Latent to the free-surface observation (GSLOSH_OBSERVATION_WIDTH values). */
GSLOSH_API int gslosh_decode_surface(const gslosh_bundle* bundle, const double* latent,
                                     double* surface);

#ifdef __cplusplus
}
#endif

#endif

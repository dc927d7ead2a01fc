/* robustbf — public C API for the robust downlink beamforming pipeline.
 *
 * Every entry point returns an rbf_status; on failure, rbf_last_error()
 * yields a human-readable message for the calling thread.  Strings returned
 * through char** out-parameters are heap-allocated and must be released with
 * rbf_string_free().  Handles are opaque and must be closed with their
 * matching close function.
 *
 * Commands take an optional JSON configuration document (NULL or "" selects
 * the built-in defaults) plus zero or more "dotted.path=value" overrides;
 * unknown keys and unknown override paths are rejected.  The environment
 * variable RBF_THREADS (default 1) sets the worker count for evaluation
 * commands; results are identical for any thread count.
 */
#ifndef ROBUSTBF_H
#define ROBUSTBF_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum rbf_status {
  RBF_OK = 0,
  RBF_ERR = 1,         /* unexpected failure */
  RBF_ERR_CONFIG = 2,  /* invalid configuration or arguments */
  RBF_ERR_IO = 3,      /* file missing, unreadable, or unwritable */
  RBF_ERR_NUMERIC = 4, /* numerical abort (NaN loss, singular solve, ...) */
} rbf_status;

/* Message for the most recent failure on this thread; never NULL. */
const char* rbf_last_error(void);

const char* rbf_version(void);

void rbf_string_free(char* s);

/* ---- Configuration ---- */

/* Merge defaults + optional JSON text + overrides; returns the canonical
 * JSON document (pretty-printed, stable key order). */
rbf_status rbf_config_render(const char* config_json,
                             const char* const* overrides, size_t n_overrides,
                             char** out_json);

/* 16 hex digits identifying the merged configuration; out_hex must hold at
 * least 17 bytes. */
rbf_status rbf_config_hash(const char* config_json,
                           const char* const* overrides, size_t n_overrides,
                           char* out_hex);

/* ---- Commands (the CLI is a thin veneer over these) ---- */

/* Generate the channel dataset described by the config and write it to
 * out_path (binary format; see rbf_dataset_open). */
rbf_status rbf_cmd_gen(const char* config_json, const char* const* overrides,
                       size_t n_overrides, const char* out_path);

/* Train a model on data_path.  mode overrides config train.mode when
 * non-NULL ("proposed" | "s_zero" | "rzf_power_only" | "direct_dnn").
 * resume_path continues a previous run's checkpoint when non-NULL.  Writes
 * a resumable checkpoint to checkpoint_out and, when history_csv is
 * non-NULL, one CSV row per completed epoch. */
rbf_status rbf_cmd_train(const char* config_json, const char* const* overrides,
                         size_t n_overrides, const char* data_path,
                         const char* mode, const char* resume_path,
                         const char* checkpoint_out, const char* history_csv);

/* Evaluate checkpoints over a transmit-power grid ("lo:hi:step" dBm or a
 * comma list) on the test split; CSV columns p_dbm,method,mean_rhat_mbps,
 * std_rhat_mbps with one method per checkpoint (file stem). */
rbf_status rbf_cmd_rate_curve(const char* config_json,
                              const char* const* overrides, size_t n_overrides,
                              const char* data_path,
                              const char* const* checkpoint_paths,
                              size_t n_checkpoints, const char* p_grid,
                              const char* csv_out);

/* Empirical CDF of the achievable rate for one test channel under n_errors
 * fresh error draws at p_dbm; CSV columns rate_mbps,empirical_cdf. */
rbf_status rbf_cmd_cdf(const char* config_json, const char* const* overrides,
                       size_t n_overrides, const char* data_path,
                       const char* checkpoint_path, size_t channel_index,
                       size_t n_errors, double p_dbm, const char* csv_out);

/* Minimum-power search per test channel for each rate target ("lo:hi:step"
 * Mbps or comma list); CSV columns rate_target_mbps,
 * mean_pstar_dbm_over_feasible,feasibility,mean_ms. */
rbf_status rbf_cmd_power_min(const char* config_json,
                             const char* const* overrides, size_t n_overrides,
                             const char* data_path, const char* checkpoint_path,
                             const char* rate_targets, const char* csv_out);

/* Timing benchmark: `rounds` measurements of the inference forward pass and
 * of a full minimum-power bisection; CSV columns phase,mean_ms,p95_ms. */
rbf_status rbf_cmd_bench(const char* config_json, const char* const* overrides,
                         size_t n_overrides, const char* data_path,
                         const char* checkpoint_path, size_t rounds,
                         const char* csv_out);

/* ---- Opaque handles ---- */

typedef struct rbf_dataset_s rbf_dataset;
typedef struct rbf_model_s rbf_model;

rbf_status rbf_dataset_open(const char* path, rbf_dataset** out);
void rbf_dataset_close(rbf_dataset* ds);
rbf_status rbf_dataset_info(const rbf_dataset* ds, size_t* n, size_t* k,
                            size_t* n_train, size_t* n_val, size_t* n_test);

rbf_status rbf_model_open(const char* path, rbf_model** out);
void rbf_model_close(rbf_model* m);
/* Mode name as a static string; valid for the process lifetime. */
rbf_status rbf_model_mode(const rbf_model* m, const char** mode);

/* Beamform one channel estimate.  h_re/h_im hold the N x K estimate in
 * row-major order (antenna-major); w_re/w_im receive the N x K beam matrix
 * in the same layout.  noise_mw is the per-user noise power and msg_seed
 * seeds the model's message draw (fixed seed => fixed output). */
rbf_status rbf_model_beamform(const rbf_model* m, size_t n, size_t k,
                              const double* h_re, const double* h_im,
                              double p_dbm, double noise_mw,
                              unsigned long long msg_seed, double* w_re,
                              double* w_im);

#ifdef __cplusplus
}
#endif

#endif /* ROBUSTBF_H */

/* C interface to the masked-EEG driving-intention pipeline.
 *
 * Conventions:
 *   - Functions return mem_status; MEM_OK is 0 and the values double as
 *     process exit codes for the bundled CLI.
 *   - On failure, mem_last_error() returns a thread-local message describing
 *     the most recent error on the calling thread.
 *   - Output strings (char**) are heap-allocated; release them with
 *     mem_string_free. They are valid UTF-8 JSON or CSV documents.
 *   - Configs are JSON documents as described in the repository README; an
 *     empty object "{}" selects every default.
 */
#ifndef MEM_MEM_H
#define MEM_MEM_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mem_status {
  MEM_OK = 0,
  MEM_ERR_INTERNAL = 1, /* broken invariant or unexpected exception */
  MEM_ERR_CONFIG = 2,   /* bad config, malformed input file, bad shapes */
  MEM_ERR_NUMERIC = 3,  /* non-finite loss or other numeric failure */
  MEM_ERR_MISMATCH = 4  /* checkpoint/config fingerprint disagreement */
} mem_status;

/* Thread-local message for the last failing call on this thread. */
const char* mem_last_error(void);

/* Frees any string returned through a char** out-parameter. */
void mem_string_free(char* s);

/* Hex fingerprint of the compatibility-critical part of the config. */
mem_status mem_config_hash(const char* config_json, char** out_hex);

/* Synthesize a labeled corpus into the config's corpus_dir.
 * Returns a JSON summary (class/state counts, split sizes). */
mem_status mem_synth(const char* config_json, char** out_summary);

/* Build a corpus from a raw recording (JSON sidecar next to a float32 sample
 * file) plus a driving-events CSV. */
mem_status mem_prepare(const char* config_json, const char* events_csv,
                       const char* recording_sidecar, char** out_summary);

/* Train on the corpus; writes train_log.jsonl, model.ckpt, and
 * train_result.json under output_dir. Returns train_result.json. */
mem_status mem_train(const char* config_json, char** out_result);

/* Score a checkpoint on the test split; refuses a checkpoint whose config
 * fingerprint disagrees unless force is nonzero. Returns metrics JSON. */
mem_status mem_eval(const char* config_json, const char* checkpoint_path, int force,
                    char** out_report);

/* Accuracy-vs-masking-ratio sweep; returns the CSV curve. */
mem_status mem_robustness(const char* config_json, const char* checkpoint_path, int force,
                          char** out_csv);

/* Reconstruction exports for a few test samples; returns the JSON manifest. */
mem_status mem_reconstruct(const char* config_json, const char* checkpoint_path, int force,
                           char** out_manifest);

/* Masking-strategy comparison across vigilance regimes; returns the CSV. */
mem_status mem_compare(const char* config_json, char** out_csv);

/* ---- checkpoint handle API ---------------------------------------------- */

typedef struct mem_model mem_model;

/* Loads a trained checkpoint into an opaque handle. */
mem_status mem_model_load(const char* checkpoint_path, mem_model** out_model);
void mem_model_free(mem_model* model);

/* Model metadata: config, fingerprint, channel names, bin grid. */
mem_status mem_model_info(const mem_model* model, char** out_json);

/* Classifies one spectrogram (row-major n_channels x n_bins doubles).
 * plan_json may be NULL for no masking, or a mask-plan document
 * {"strategy", "ratio", "masked_indices", "total_tokens"}.
 * Returns {"prediction", "probs"}. */
mem_status mem_model_predict(const mem_model* model, const double* features, int n_channels,
                             int n_bins, const char* plan_json, char** out_json);

#ifdef __cplusplus
}
#endif

#endif /* MEM_MEM_H */

/* C interface of the piano-timbre conversion library.
 *
 * Every fallible call returns a pt_status; on failure pt_last_error() holds a
 * message for the calling thread until its next failing call. Objects are
 * opaque handles released with the matching *_free function; strings returned
 * through char** are released with pt_string_free. */
#ifndef PIANOTIMBRE_H
#define PIANOTIMBRE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define PT_API __declspec(dllexport)
#else
#define PT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pt_status {
    PT_OK = 0,
    PT_ERR_INVALID_ARGUMENT = 1,
    PT_ERR_MISSING_FILE = 2,
    PT_ERR_IO = 3,
    PT_ERR_UNSUPPORTED_ENCODING = 4,
    PT_ERR_MALFORMED_HEADER = 5,
    PT_ERR_EMPTY_CLIP = 6,
    PT_ERR_DIM_MISMATCH = 7,
    PT_ERR_GRAPH_NOT_RECORDED = 8,
    PT_ERR_CLIP_TOO_SHORT = 9,
    PT_ERR_NEGATIVE_FREQUENCY = 10,
    PT_ERR_INDEX_OUT_OF_RANGE = 11,
    PT_ERR_WRONG_SAMPLE_RATE = 12,
    PT_ERR_EMPTY_INPUT = 13,
    PT_ERR_EMPTY_CODEBOOK = 14,
    PT_ERR_INSUFFICIENT_DISTINCT_VALUES = 15,
    PT_ERR_SCHEMA_VERSION_MISMATCH = 16,
    PT_ERR_T_OUT_OF_RANGE = 17,
    PT_ERR_NON_FINITE_LOSS = 18,
    PT_ERR_BAD_MAGIC = 19,
    PT_ERR_VERSION_MISMATCH = 20,
    PT_ERR_TENSOR_DIM_MISMATCH = 21,
    PT_ERR_PITCH_INDEX_ZERO_IN_SCORE = 22,
    PT_ERR_GRID_MISMATCH = 23,
    PT_ERR_DURATION_MISMATCH = 24,
    PT_ERR_UNKNOWN_CONFIG_KEY = 25,
    PT_ERR_INTERNAL = 100
} pt_status;

typedef struct pt_clip pt_clip;
typedef struct pt_codebook pt_codebook;
typedef struct pt_trainer pt_trainer;
typedef struct pt_model pt_model;

typedef enum pt_log_level { PT_LOG_INFO = 0, PT_LOG_WARNING = 1, PT_LOG_ERROR = 2 } pt_log_level;
typedef void (*pt_log_fn)(pt_log_level level, const char* message, void* user);
/* Return nonzero to continue training, zero to stop after the current step. */
typedef int (*pt_progress_fn)(long step, double loss, void* user);

PT_API const char* pt_version(void);
PT_API const char* pt_status_name(pt_status status);
PT_API const char* pt_last_error(void);
PT_API void pt_string_free(char* s);
/* NULL restores the default stderr sink. */
PT_API void pt_set_log_callback(pt_log_fn fn, void* user);

/* ---- configuration ---- */

/* Validates a run configuration (NULL or "" for defaults) and returns it with
 * every field filled in. Unknown keys fail with PT_ERR_UNKNOWN_CONFIG_KEY. */
PT_API pt_status pt_config_resolve(const char* json, char** resolved_json);

/* ---- audio ---- */

/* Reads a WAV file and mixes it down to mono. */
PT_API pt_status pt_clip_read(const char* path, pt_clip** out);
PT_API pt_status pt_clip_from_samples(const float* samples, size_t length, int sample_rate, pt_clip** out);
/* float32 != 0 writes IEEE float, else 16-bit PCM. clipped may be NULL. */
PT_API pt_status pt_clip_write(const pt_clip* clip, const char* path, int float32, size_t* clipped);
PT_API size_t pt_clip_length(const pt_clip* clip);
PT_API int pt_clip_sample_rate(const pt_clip* clip);
PT_API const float* pt_clip_samples(const pt_clip* clip);
PT_API void pt_clip_free(pt_clip* clip);

/* ---- synthetic corpus ---- */

/* Writes WAV files plus manifest.json into out_dir using the "synth" section
 * of the given run configuration. */
PT_API pt_status pt_synth_corpus(const char* config_json, const char* out_dir, size_t* clips_written);

/* ---- loudness codebook ---- */

/* Fits on a manifest's corpus using the "codebook" section and the segment
 * length of the "train" section. */
PT_API pt_status pt_codebook_fit(const char* config_json, const char* manifest_path, pt_codebook** out);
PT_API pt_status pt_codebook_load(const char* path, pt_codebook** out);
PT_API pt_status pt_codebook_save(const pt_codebook* codebook, const char* path);
PT_API size_t pt_codebook_size(const pt_codebook* codebook);
PT_API double pt_codebook_centroid(const pt_codebook* codebook, size_t index);
PT_API void pt_codebook_free(pt_codebook* codebook);

/* ---- training ---- */

PT_API pt_status pt_trainer_create(const char* config_json, const char* manifest_path, const pt_codebook* codebook,
                                   pt_trainer** out);
PT_API pt_status pt_trainer_resume(pt_trainer* trainer, const char* checkpoint_path);
PT_API pt_status pt_trainer_step(pt_trainer* trainer, double* loss);
/* Runs to completion, writing loss.csv and checkpoints into out_dir. */
PT_API pt_status pt_trainer_run(pt_trainer* trainer, const char* out_dir, pt_progress_fn progress, void* user);
PT_API pt_status pt_trainer_save(const pt_trainer* trainer, const char* checkpoint_path);
PT_API long pt_trainer_current_step(const pt_trainer* trainer);
PT_API long pt_trainer_total_steps(const pt_trainer* trainer);
PT_API void pt_trainer_free(pt_trainer* trainer);

/* ---- conversion ---- */

PT_API pt_status pt_model_load(const char* checkpoint_path, pt_model** out);
PT_API pt_status pt_model_config(const pt_model* model, char** train_config_json);
PT_API long pt_model_step(const pt_model* model);
/* Converts with the "convert" section of the run configuration. */
PT_API pt_status pt_model_convert(pt_model* model, const pt_codebook* codebook, const pt_clip* input,
                                  const char* config_json, pt_clip** out);
PT_API pt_status pt_model_save(const pt_model* model, const char* checkpoint_path);
PT_API void pt_model_free(pt_model* model);

/* ---- evaluation ---- */

typedef struct pt_eval_summary {
    double pitch_accuracy;
    double mean_abs_difference_lu;
    double max_abs_difference_lu;
    size_t windows;
} pt_eval_summary;

/* Writes report.json, curves.csv and curves.svg into out_dir. The names are
 * recorded as report metadata and may be NULL. summary may be NULL. */
PT_API pt_status pt_evaluate(const pt_clip* source, const pt_clip* converted, const char* config_json,
                             const char* out_dir, const char* source_name, const char* converted_name,
                             const char* checkpoint_id, pt_eval_summary* summary);

#ifdef __cplusplus
}
#endif

#endif /* PIANOTIMBRE_H */

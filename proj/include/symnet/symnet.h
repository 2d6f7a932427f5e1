/* C interface to the symnet few-shot segmentation library.
 *
 * Every function returns a symnet_status. On failure the thread-local
 * message from symnet_last_error_message() describes the cause. Functions
 * that produce text follow the buffer-size pattern: pass a buffer and its
 * capacity; *needed receives the size including the terminating NUL, and
 * SYMNET_ERR_BUFFER_TOO_SMALL is returned when it does not fit. */
#ifndef SYMNET_SYMNET_H
#define SYMNET_SYMNET_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SYMNET_API __declspec(dllexport)
#else
#define SYMNET_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum symnet_status {
  SYMNET_OK = 0,
  SYMNET_ERR_INVALID_ARGUMENT = 1,
  SYMNET_ERR_NOT_FOUND = 2,
  SYMNET_ERR_IO = 3,
  SYMNET_ERR_FORMAT = 4,
  SYMNET_ERR_VERSION = 5,
  SYMNET_ERR_NUMERIC = 6,
  SYMNET_ERR_EMPTY_FOREGROUND = 7,
  SYMNET_ERR_INVALID_CONFIG = 8,
  SYMNET_ERR_STATE = 9,
  SYMNET_ERR_BUFFER_TOO_SMALL = 10,
  SYMNET_ERR_INTERNAL = 11
} symnet_status;

typedef struct symnet_session symnet_session;

SYMNET_API const char* symnet_last_error_message(void);
SYMNET_API const char* symnet_status_string(symnet_status status);

/* Default configuration as JSON. */
SYMNET_API symnet_status symnet_default_config(char* buf, size_t cap, size_t* needed);

typedef struct symnet_dataset_options {
  unsigned n_classes;
  unsigned per_class;
  unsigned resolution;
  uint64_t seed;
  double distractor_prob;
} symnet_dataset_options;

SYMNET_API void symnet_dataset_options_init(symnet_dataset_options* opts);
SYMNET_API symnet_status symnet_generate_dataset(const char* out_dir, const symnet_dataset_options* opts);

/* A session owns one model and its optimizer state. config_json may be NULL
 * for the defaults. */
SYMNET_API symnet_status symnet_session_create(const char* config_json, symnet_session** out);
SYMNET_API symnet_status symnet_session_load(const char* checkpoint_path, symnet_session** out);
SYMNET_API symnet_status symnet_session_save(const symnet_session* session, const char* path);
SYMNET_API void symnet_session_destroy(symnet_session* session);

SYMNET_API symnet_status symnet_session_config(const symnet_session* session, char* buf, size_t cap,
                                               size_t* needed);
SYMNET_API symnet_status symnet_session_set_ablation(symnet_session* session, int use_spm, int use_apa,
                                                     int use_tdc);
SYMNET_API symnet_status symnet_session_steps(const symnet_session* session, uint64_t* steps);

typedef struct symnet_train_options {
  const char* data_dir;        /* NULL: the config's data_dir */
  uint64_t steps;              /* 0: the config's step count */
  const char* log_path;        /* JSON lines; NULL to skip */
  const char* checkpoint_dir;  /* periodic checkpoints and NaN dumps; NULL to skip */
  uint64_t checkpoint_every;   /* 0: the config's cadence */
} symnet_train_options;

SYMNET_API void symnet_train_options_init(symnet_train_options* opts);
SYMNET_API symnet_status symnet_train(symnet_session* session, const symnet_train_options* opts);

typedef struct symnet_eval_options {
  const char* data_dir; /* NULL: the config's data_dir */
  int fold;             /* -1: the config's test fold */
  unsigned k_shot;
  unsigned rounds;
  unsigned episodes;
  uint64_t seed;        /* round r uses seed + r */
  const char* dump_dir; /* prior / prediction PGMs; NULL to skip */
  unsigned threads;
} symnet_eval_options;

SYMNET_API void symnet_eval_options_init(symnet_eval_options* opts);
/* Runs the evaluation; the JSON report is kept for symnet_session_last_report. */
SYMNET_API symnet_status symnet_evaluate(symnet_session* session, const symnet_eval_options* opts,
                                         double* mean_miou);
SYMNET_API symnet_status symnet_session_last_report(const symnet_session* session, char* buf, size_t cap,
                                                    size_t* needed);

/* Writes the prior mask of test episode `episode` as a PGM, plus one map per
 * pooling window next to it as <stem>_w<i><ext>. */
SYMNET_API symnet_status symnet_prior_mask(symnet_session* session, const char* data_dir, int fold,
                                           uint64_t episode, uint64_t seed, const char* out_path);

#ifdef __cplusplus
}
#endif

#endif /* SYMNET_SYMNET_H */

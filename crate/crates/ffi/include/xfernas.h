#ifndef XFERNAS_H
#define XFERNAS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes.
 */
typedef enum XfnStatus {
  XFN_STATUS_OK = 0,
  XFN_STATUS_NULL_POINTER = 1,
  XFN_STATUS_INVALID_ARGUMENT = 2,
  XFN_STATUS_INVALID_CONFIG = 3,
  XFN_STATUS_FORMAT = 4,
  XFN_STATUS_UNKNOWN_TASK = 5,
  XFN_STATUS_DATA = 6,
  XFN_STATUS_IO = 7,
  XFN_STATUS_CHECKPOINT = 8,
  XFN_STATUS_SEARCH = 9,
  XFN_STATUS_BUFFER_TOO_SMALL = 10,
  XFN_STATUS_PANIC = 11,
} XfnStatus;

/*
 A genome (normal and reduction cell).
 */
typedef struct XfnGenome XfnGenome;

/*
 An observation history.
 */
typedef struct XfnHistory XfnHistory;

/*
 A trained surrogate.
 */
typedef struct XfnModel XfnModel;

/*
 A synthetic multi-task oracle.
 */
typedef struct XfnSuite XfnSuite;

/*
 Surrogate training settings. `max_steps < 0` means no cap.
 */
typedef struct XfnTrainConfig {
  double alpha;
  double lr;
  double weight_decay;
  uint64_t epochs;
  uint64_t batch_size;
  uint64_t seed;
  int64_t max_steps;
  double clip_norm;
  uint64_t head_epochs;
} XfnTrainConfig;

/*
 Search settings.
 */
typedef struct XfnSearchConfig {
  uint64_t budget;
  double eta;
  uint64_t max_ascent_steps;
  uint64_t starts_per_round;
  uint64_t rounds;
  uint64_t seed;
  struct XfnTrainConfig train;
} XfnSearchConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *xfn_version(void);

/*
 Copies the calling thread's last error message into `buf`. Returns the
 message length (excluding the terminator), or 0 if there is none. The
 message is truncated to fit `cap`.
 */
size_t xfn_last_error_message(char *buf, size_t cap);

/*
 Releases a string returned by this library. Null is ignored.
 */
void xfn_string_free(char *s);

/*
 Default training settings.
 */
struct XfnTrainConfig xfn_train_config_default(void);

/*
 Default search settings.
 */
struct XfnSearchConfig xfn_search_config_default(void);

/*
 Draws a random genome with `blocks` blocks per cell.
 */
enum XfnStatus xfn_genome_sample(uint64_t seed, size_t blocks, struct XfnGenome **genome_out);

/*
 Parses a genome from its JSON form.
 */
enum XfnStatus xfn_genome_from_json(const char *json, struct XfnGenome **genome_out);

/*
 Serializes a genome to JSON. Free the result with `xfn_string_free`.
 */
enum XfnStatus xfn_genome_to_json(const struct XfnGenome *genome, char **json_out);

/*
 Writes the 32-character hex fingerprint into `buf` (at least 33 bytes).
 */
enum XfnStatus xfn_genome_fingerprint(const struct XfnGenome *genome, char *buf, size_t cap);

/*
 Blocks per cell.
 */
size_t xfn_genome_blocks(const struct XfnGenome *genome);

/*
 Copies the token sequence into `tokens` (capacity `cap`); the sequence
 length is written to `len_out` even when the buffer is too small.
 */
enum XfnStatus xfn_genome_tokens(const struct XfnGenome *genome,
                                 uint32_t *tokens,
                                 size_t cap,
                                 size_t *len_out);

void xfn_genome_free(struct XfnGenome *genome);

/*
 Creates a suite; the last of `n_tasks` tasks is the target.
 */
enum XfnStatus xfn_suite_new(uint64_t seed,
                             size_t n_tasks,
                             double tau,
                             double noise_sigma,
                             size_t blocks,
                             struct XfnSuite **suite_out);

/*
 Loads a suite descriptor file.
 */
enum XfnStatus xfn_suite_load(const char *path, struct XfnSuite **suite_out);

size_t xfn_suite_num_tasks(const struct XfnSuite *suite);

/*
 Scores `genome` on the task named `task` (e.g. `"task_4"`).
 */
enum XfnStatus xfn_suite_evaluate(const struct XfnSuite *suite,
                                  const char *task,
                                  const struct XfnGenome *genome,
                                  double *score_out);

/*
 Builds source knowledge: `per_task` random genomes per source task.
 */
enum XfnStatus xfn_suite_build_knowledge(const struct XfnSuite *suite,
                                         size_t per_task,
                                         uint64_t seed,
                                         struct XfnHistory **history_out);

void xfn_suite_free(struct XfnSuite *suite);

/*
 Loads a JSONL history.
 */
enum XfnStatus xfn_history_load(const char *path, struct XfnHistory **history_out);

enum XfnStatus xfn_history_save(const struct XfnHistory *history, const char *path);

/*
 Number of records.
 */
size_t xfn_history_len(const struct XfnHistory *history);

void xfn_history_free(struct XfnHistory *history);

/*
 Trains a fresh surrogate on `history`.
 */
enum XfnStatus xfn_model_train(const struct XfnHistory *history,
                               const struct XfnTrainConfig *config,
                               struct XfnModel **model_out);

/*
 Loads a checkpoint written by `xfn_model_save`.
 */
enum XfnStatus xfn_model_load(const char *path, struct XfnModel **model_out);

/*
 Writes the checkpoint to `path` and the task list to
 `<path>.tasks.json`.
 */
enum XfnStatus xfn_model_save(const struct XfnModel *model, const char *path);

/*
 Predicted score of `genome`. `task` selects a task head; null selects
 the universal head.
 */
enum XfnStatus xfn_model_predict(const struct XfnModel *model,
                                 const struct XfnGenome *genome,
                                 const char *task,
                                 double *score_out);

/*
 Encodes and greedily decodes `genome`.
 */
enum XfnStatus xfn_model_reconstruct(const struct XfnModel *model,
                                     const struct XfnGenome *genome,
                                     struct XfnGenome **genome_out);

void xfn_model_free(struct XfnModel *model);

/*
 Runs the search on the suite's target task. `source` may be null for
 the no-transfer variant. The report is returned as JSON (free with
 `xfn_string_free`); `best_score_out` may be null.
 */
enum XfnStatus xfn_search(const struct XfnSuite *suite,
                          const struct XfnHistory *source,
                          const struct XfnSearchConfig *config,
                          char **report_json_out,
                          double *best_score_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* XFERNAS_H */

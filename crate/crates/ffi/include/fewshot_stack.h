#ifndef FEWSHOT_STACK_H
#define FEWSHOT_STACK_H

/* Generated by cbindgen from crates/ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Maximum number of dense layers in [`FssHeadConfig`].
 */
#define FSS_MAX_HIDDEN 8

typedef enum FssStatus {
  FSS_STATUS_OK = 0,
  FSS_STATUS_NULL_POINTER = 1,
  FSS_STATUS_INVALID_ARGUMENT = 2,
  FSS_STATUS_IO = 3,
  FSS_STATUS_CONFIG = 4,
  FSS_STATUS_DATA = 5,
  FSS_STATUS_INCOMPATIBLE = 6,
  FSS_STATUS_PANIC = 7,
} FssStatus;

/**
 * Feature files joined on their item keys.
 */
typedef struct FssDataset FssDataset;

/**
 * A trained head of either precision.
 */
typedef struct FssHead FssHead;

/**
 * Result of a repeated-episode evaluation.
 */
typedef struct FssReport FssReport;

/**
 * A feature file loaded into memory.
 */
typedef struct FssStore FssStore;

typedef struct FssEpisodeConfig {
  uint32_t n_way;
  uint32_t k_shot;
  uint32_t q_query;
  uint32_t pool_per_class;
  uint64_t seed;
} FssEpisodeConfig;

/**
 * Head architecture. `input_channels` is derived from the data where a
 * dataset is given; `n_classes` follows `n_way` in evaluations.
 */
typedef struct FssHeadConfig {
  uint32_t input_side;
  uint32_t input_channels;
  uint32_t conv_filters;
  uint32_t conv_kernel;
  uint32_t hidden_sizes[FSS_MAX_HIDDEN];
  uint32_t n_hidden;
  uint32_t n_classes;
  double l2_lambda;
} FssHeadConfig;

typedef struct FssTrainConfig {
  double learning_rate;
  uint32_t epochs;
  uint64_t seed;
  /**
   * 0 for f32 arithmetic, 1 for f64.
   */
  uint32_t precision;
} FssTrainConfig;

typedef struct FssParamCount {
  uint64_t trainable;
  uint64_t non_trainable;
} FssParamCount;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *fss_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *fss_last_error(void);

/**
 * Fills `out` with the default episode settings.
 *
 * # Safety
 * `out` must be null or a valid pointer.
 */
enum FssStatus fss_episode_config_default(struct FssEpisodeConfig *out);

/**
 * Fills `out` with the default head settings.
 *
 * # Safety
 * `out` must be null or a valid pointer.
 */
enum FssStatus fss_head_config_default(struct FssHeadConfig *out);

/**
 * Fills `out` with the default training settings.
 *
 * # Safety
 * `out` must be null or a valid pointer.
 */
enum FssStatus fss_train_config_default(struct FssTrainConfig *out);

/**
 * Trainable and non-trainable parameter counts of a head.
 *
 * # Safety
 * `config` and `out` must be valid pointers.
 */
enum FssStatus fss_count_params(const struct FssHeadConfig *config, struct FssParamCount *out);

/**
 * Reads and validates a feature file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FssStatus fss_store_open(const char *path, struct FssStore **out);

/**
 * Feature dimension, or 0 for a null handle.
 *
 * # Safety
 * `store` must be null or a live handle.
 */
size_t fss_store_dim(const struct FssStore *store);

/**
 * Record count, or 0 for a null handle.
 *
 * # Safety
 * `store` must be null or a live handle.
 */
size_t fss_store_len(const struct FssStore *store);

/**
 * Class count, or 0 for a null handle.
 *
 * # Safety
 * `store` must be null or a live handle.
 */
size_t fss_store_n_classes(const struct FssStore *store);

/**
 * # Safety
 * `store` must be null or a handle not yet freed.
 */
void fss_store_free(struct FssStore *store);

/**
 * Joins `count` stores in the given order. With `lenient`, keys missing
 * from some store are dropped instead of failing.
 *
 * # Safety
 * `stores` must point to `count` live handles and `out` be a valid pointer.
 */
enum FssStatus fss_dataset_join(const struct FssStore *const *stores,
                                size_t count,
                                bool lenient,
                                struct FssDataset **out);

/**
 * Joined dimension, or 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t fss_dataset_dim(const struct FssDataset *dataset);

/**
 * Item count, or 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t fss_dataset_len(const struct FssDataset *dataset);

/**
 * # Safety
 * `dataset` must be null or a handle not yet freed.
 */
void fss_dataset_free(struct FssDataset *dataset);

/**
 * Runs `n_episodes` episodes seeded `episode.seed + i` on up to `jobs` threads.
 *
 * # Safety
 * All pointers must be valid; `out` receives a report handle.
 */
enum FssStatus fss_cross_validate(const struct FssDataset *dataset,
                                  const struct FssEpisodeConfig *episode,
                                  const struct FssHeadConfig *head,
                                  const struct FssTrainConfig *train,
                                  uint32_t n_episodes,
                                  uint32_t jobs,
                                  struct FssReport **out);

/**
 * # Safety
 * `report` must be null or a live handle.
 */
size_t fss_report_episodes(const struct FssReport *report);

/**
 * Accuracy of episode `index`, or NaN when out of range.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
double fss_report_accuracy(const struct FssReport *report, size_t index);

/**
 * # Safety
 * `report` must be null or a live handle.
 */
double fss_report_mean(const struct FssReport *report);

/**
 * Population standard deviation of the episode accuracies.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
double fss_report_std(const struct FssReport *report);

/**
 * Side of the square confusion matrix.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
size_t fss_report_n_classes(const struct FssReport *report);

/**
 * Copies the pooled confusion matrix, row-major with rows as true labels,
 * into `out`, which must hold `n_classes²` values.
 *
 * # Safety
 * `report` must be a live handle and `out` point to `len` writable values.
 */
enum FssStatus fss_report_confusion(const struct FssReport *report, uint64_t *out, size_t len);

/**
 * # Safety
 * `report` must be null or a handle not yet freed.
 */
void fss_report_free(struct FssReport *report);

/**
 * Trains a head on dataset items `indices` with labels `labels`.
 * `input_channels` is derived from the dataset dimension and `input_side`.
 *
 * # Safety
 * `indices` and `labels` must each hold `count` values; other pointers valid.
 */
enum FssStatus fss_head_train(const struct FssDataset *dataset,
                              const size_t *indices,
                              const uint32_t *labels,
                              size_t count,
                              const struct FssHeadConfig *head,
                              const struct FssTrainConfig *train,
                              struct FssHead **out);

/**
 * Classifies `count` joined feature vectors of length `dim`, stored
 * row-major in `features`. Writes one label per vector and, when `probs` is
 * non-null, `count · n_classes` probabilities.
 *
 * # Safety
 * `features` must hold `count · dim` values, `labels` `count` slots and
 * `probs` (if non-null) `count · n_classes` slots.
 */
enum FssStatus fss_head_predict(const struct FssHead *head,
                                const float *features,
                                size_t count,
                                size_t dim,
                                uint32_t *labels,
                                float *probs);

/**
 * Number of output classes, or 0 for a null handle.
 *
 * # Safety
 * `head` must be null or a live handle.
 */
size_t fss_head_n_classes(const struct FssHead *head);

/**
 * Length of the joined feature vectors the head accepts, or 0 for null.
 *
 * # Safety
 * `head` must be null or a live handle.
 */
size_t fss_head_input_len(const struct FssHead *head);

/**
 * # Safety
 * `head` must be a live handle and `path` a NUL-terminated string.
 */
enum FssStatus fss_head_save(const struct FssHead *head, const char *path);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FssStatus fss_head_load(const char *path, struct FssHead **out);

/**
 * # Safety
 * `head` must be null or a handle not yet freed.
 */
void fss_head_free(struct FssHead *head);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEWSHOT_STACK_H */

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef CHAINLABEL_H
#define CHAINLABEL_H

#include <stddef.h>
#include <stdint.h>

typedef enum ChainlabelStatus {
  CHAINLABEL_STATUS_OK = 0,
  CHAINLABEL_STATUS_NULL_POINTER = 1,
  CHAINLABEL_STATUS_INVALID_ARGUMENT = 2,
  CHAINLABEL_STATUS_IO = 3,
  CHAINLABEL_STATUS_PARSE = 4,
  CHAINLABEL_STATUS_SHAPE = 5,
  CHAINLABEL_STATUS_UNKNOWN_LABEL = 6,
  CHAINLABEL_STATUS_BUFFER_TOO_SMALL = 7,
  CHAINLABEL_STATUS_PANIC = 8,
  CHAINLABEL_STATUS_INTERNAL = 9,
} ChainlabelStatus;

// Loaded checkpoint. Opaque to C.
typedef struct ChainlabelModel ChainlabelModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or NULL. The pointer
// stays valid until the next `chainlabel_*` call on the same thread.
const char *chainlabel_last_error(void);

// Static name of a status code.
const char *chainlabel_status_name(enum ChainlabelStatus status);

// Loads a JSON checkpoint. On success `*out` owns a new handle.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum ChainlabelStatus chainlabel_model_load(const char *path, struct ChainlabelModel **out);

// Releases a handle. NULL is ignored.
//
// # Safety
// `model` must come from [`chainlabel_model_load`] and not be used afterwards.
void chainlabel_model_free(struct ChainlabelModel *model);

// Number of real labels K.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum ChainlabelStatus chainlabel_model_vocab_size(const struct ChainlabelModel *model, size_t *out);

// Length of the feature vector the model expects.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum ChainlabelStatus chainlabel_model_feature_dim(const struct ChainlabelModel *model,
                                                   size_t *out);

// Copies the name of label `id` into `buf` with a trailing NUL.
// `*required` receives the size needed including the NUL, also when the
// call fails with `BUFFER_TOO_SMALL`.
//
// # Safety
// `buf` must have room for `buf_len` bytes (it may be NULL when `buf_len`
// is 0); `required` may be NULL.
enum ChainlabelStatus chainlabel_model_label_name(const struct ChainlabelModel *model,
                                                  size_t id,
                                                  char *buf,
                                                  size_t buf_len,
                                                  size_t *required);

// Looks up the id of a label name.
//
// # Safety
// `name` must be NUL-terminated and `out` writable.
enum ChainlabelStatus chainlabel_model_label_id(const struct ChainlabelModel *model,
                                                const char *name,
                                                size_t *out);

// Decodes up to `k` ranked label ids for one image with beam search.
//
// `min_len` labels are emitted before END may end the path; `beam_width`
// of 0 selects 3. Ids are written to `out_ids` (capacity `k`), their count
// to `*out_count` and the path log-probability to `*out_log_prob` (may be
// NULL).
//
// # Safety
// `features` must point to `n_features` doubles and `out_ids` to `k`
// writable slots.
enum ChainlabelStatus chainlabel_predict(const struct ChainlabelModel *model,
                                         const double *features,
                                         size_t n_features,
                                         size_t k,
                                         size_t min_len,
                                         size_t beam_width,
                                         size_t *out_ids,
                                         size_t *out_count,
                                         double *out_log_prob);

// The `m` labels closest to label `id` by cosine similarity of their
// embeddings, most similar first, `id` itself excluded.
//
// # Safety
// `out_ids` and `out_similarity` must each have `m` writable slots.
enum ChainlabelStatus chainlabel_nearest_labels(const struct ChainlabelModel *model,
                                                size_t id,
                                                size_t m,
                                                size_t *out_ids,
                                                double *out_similarity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHAINLABEL_H */

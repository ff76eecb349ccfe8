#ifndef POLYCHAIN_H
#define POLYCHAIN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PcStatus {
  PC_STATUS_OK = 0,
  PC_STATUS_NULL_POINTER = 1,
  PC_STATUS_INVALID_UTF8 = 2,
  PC_STATUS_PARSE = 3,
  PC_STATUS_IO = 4,
  PC_STATUS_MODEL = 5,
  PC_STATUS_INVALID_ARGUMENT = 6,
  PC_STATUS_PANIC = 7,
} PcStatus;

/**
 * Loaded model checkpoint.
 */
typedef struct PcModel PcModel;

/**
 * Parsed repeat unit.
 */
typedef struct PcRepeatUnit PcRepeatUnit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next call into the library on this thread.
 */
const char *pc_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pc_version(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void pc_string_free(char *s);

/**
 * Parses a repeat unit with exactly two `*` anchors.
 *
 * # Safety
 * `text` must be NUL-terminated; `out` must be writable.
 */
enum PcStatus pc_repeat_unit_parse(const char *text, struct PcRepeatUnit **out);

/**
 * # Safety
 * `unit` must come from [`pc_repeat_unit_parse`] and not have been freed.
 */
void pc_repeat_unit_free(struct PcRepeatUnit *unit);

/**
 * Atom count of the unit, anchors included.
 *
 * # Safety
 * Pointers must be valid.
 */
enum PcStatus pc_repeat_unit_atom_count(const struct PcRepeatUnit *unit, size_t *out);

/**
 * Canonical text; release with [`pc_string_free`].
 *
 * # Safety
 * Pointers must be valid.
 */
enum PcStatus pc_repeat_unit_canonical(const struct PcRepeatUnit *unit, char **out);

/**
 * Node and edge counts of the unit chained `n` times.
 *
 * # Safety
 * Pointers must be valid.
 */
enum PcStatus pc_chain_size(const struct PcRepeatUnit *unit,
                            size_t n,
                            size_t *out_nodes,
                            size_t *out_edges);

/**
 * Loads a JSON checkpoint from a file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum PcStatus pc_model_load(const char *path, struct PcModel **out);

/**
 * Loads a checkpoint from an in-memory JSON string.
 *
 * # Safety
 * `json` must be NUL-terminated; `out` must be writable.
 */
enum PcStatus pc_model_load_json(const char *json, struct PcModel **out);

/**
 * # Safety
 * `model` must come from a `pc_model_load*` call and not have been freed.
 */
void pc_model_free(struct PcModel *model);

/**
 * Prediction for the unit chained `n` times.
 *
 * # Safety
 * Pointers must be valid.
 */
enum PcStatus pc_model_predict(const struct PcModel *model,
                               const struct PcRepeatUnit *unit,
                               size_t n,
                               double *out);

/**
 * Back-propagated gradient sum on a chain of `n` units with contraction
 * `lipschitz`, and its closed form.
 *
 * # Safety
 * Output pointers must be writable.
 */
enum PcStatus pc_grad_sum(size_t n,
                          double lipschitz,
                          double delta,
                          double *out_measured,
                          double *out_closed_form);

/**
 * Weight of the maximum spanning tree of an edge list.
 *
 * # Safety
 * `us`, `vs` and `ws` must each hold `num_edges` elements.
 */
enum PcStatus pc_mst_weight(size_t num_nodes,
                            const size_t *us,
                            const size_t *vs,
                            const double *ws,
                            size_t num_edges,
                            size_t start,
                            double *out_weight);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POLYCHAIN_H */

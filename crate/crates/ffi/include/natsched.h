#ifndef NATSCHED_H
#define NATSCHED_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NatStatus {
  NAT_STATUS_OK = 0,
  NAT_STATUS_NULL_POINTER = 1,
  NAT_STATUS_INVALID_ARGUMENT = 2,
  NAT_STATUS_CONFIG = 3,
  NAT_STATUS_RUNTIME = 4,
  NAT_STATUS_PANIC = 5,
} NatStatus;

// Ground-truth Markov chain.
typedef struct NatChain NatChain;

// Trained predictor.
typedef struct NatModel NatModel;

// Generation schedule.
typedef struct NatSchedule NatSchedule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *nat_last_error(void);

// Library version as a static NUL-terminated string.
const char *nat_version(void);

// # Safety
// `s` must come from a natsched function returning an owned string, or be null.
void nat_string_free(char *s);

// Builds the class-conditional chain with `k` tokens, length `n` and `c`
// classes from `seed`.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum NatStatus nat_chain_new(size_t k, size_t n, size_t c, uint64_t seed, struct NatChain **out);

// # Safety
// `chain` must come from [`nat_chain_new`] and not be used afterwards, or be null.
void nat_chain_free(struct NatChain *chain);

// Probability of the complete sequence `tokens[0..len]` under `class`.
//
// # Safety
// `chain` must be a live handle, `tokens` must point to `len` values and
// `out` to one writable double.
enum NatStatus nat_chain_joint_prob(const struct NatChain *chain,
                                    size_t class_,
                                    const size_t *tokens,
                                    size_t len,
                                    double *out);

// Exact conditional distribution of position `pos` given the observed
// entries of `tokens` (negative values are masks). Writes `K` probabilities.
//
// # Safety
// `chain` must be a live handle, `tokens` must point to `len` values and
// `out_probs` to `out_len` writable doubles.
enum NatStatus nat_chain_exact_conditional(const struct NatChain *chain,
                                           size_t class_,
                                           const int64_t *tokens,
                                           size_t len,
                                           size_t pos,
                                           double *out_probs,
                                           size_t out_len);

// Heuristic schedule with `steps` steps for sequences of length `n`.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum NatStatus nat_schedule_heuristic(size_t steps,
                                      size_t n,
                                      double lambda,
                                      double k,
                                      struct NatSchedule **out);

// Parses and validates a schedule JSON document.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum NatStatus nat_schedule_from_json(const char *json, struct NatSchedule **out);

// Serializes a schedule; free the result with [`nat_string_free`].
//
// # Safety
// `sched` must be a live handle and `out` a valid pointer.
enum NatStatus nat_schedule_to_json(const struct NatSchedule *sched, char **out);

// Number of decoding steps of a schedule.
//
// # Safety
// `sched` must be a live handle and `out` a valid pointer.
enum NatStatus nat_schedule_steps(const struct NatSchedule *sched, size_t *out);

// Projects a schedule onto the valid set for length `n` as a new handle.
//
// # Safety
// `sched` must be a live handle and `out` a valid pointer.
enum NatStatus nat_schedule_project(const struct NatSchedule *sched,
                                    size_t n,
                                    struct NatSchedule **out);

// # Safety
// `sched` must come from a natsched constructor and not be used afterwards, or be null.
void nat_schedule_free(struct NatSchedule *sched);

// Loads a binary checkpoint.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum NatStatus nat_model_load(const char *path, struct NatModel **out);

// # Safety
// `model` must come from [`nat_model_load`] and not be used afterwards, or be null.
void nat_model_free(struct NatModel *model);

// Decodes one sequence with the exact oracle of `chain`; a negative `class`
// selects the unconditional mixture.
//
// # Safety
// Handles must be live and `out_tokens` must point to `len` writable values.
enum NatStatus nat_generate_oracle(const struct NatChain *chain,
                                   const struct NatSchedule *sched,
                                   int64_t class_,
                                   uint64_t seed,
                                   size_t *out_tokens,
                                   size_t len);

// Decodes one sequence with a trained model; a negative `class` selects the
// null class.
//
// # Safety
// Handles must be live and `out_tokens` must point to `len` writable values.
enum NatStatus nat_generate_model(const struct NatModel *model,
                                  const struct NatSchedule *sched,
                                  int64_t class_,
                                  uint64_t seed,
                                  size_t *out_tokens,
                                  size_t len);

// Beta(`alpha`, `beta`) density at `r`.
//
// # Safety
// `out` must point to one writable double.
enum NatStatus nat_beta_density(double r, double alpha, double beta, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NATSCHED_H */

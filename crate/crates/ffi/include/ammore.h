/* C interface to the ammore grading core. */

#ifndef AMMORE_H
#define AMMORE_H

/* Generated by cbindgen from crates/ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible FFI call.
typedef enum AmmoreStatus {
  AmmoreStatus_Ok = 0,
  AmmoreStatus_NullArgument = 1,
  AmmoreStatus_InvalidUtf8 = 2,
  AmmoreStatus_InvalidArgument = 3,
} AmmoreStatus;

// Opaque grader handle holding the text-normalization rules.
typedef struct AmmoreGrader AmmoreGrader;

// Knowledge-tracing parameters: initial knowledge, learn, slip, guess.
typedef struct AmmoreBktParams {
  double p_init;
  double p_learn;
  double p_slip;
  double p_guess;
} AmmoreBktParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Create a grader with the default normalization rules. Release with
// [`ammore_grader_free`].
struct AmmoreGrader *ammore_grader_new(void);

// # Safety
// `grader` must be a pointer from [`ammore_grader_new`] that has not
// been freed, or null (a no-op).
void ammore_grader_free(struct AmmoreGrader *grader);

// Naive grading: trimmed, case-folded equality. Writes 1 into
// `out_is_correct` for a correct answer, 0 otherwise.
//
// # Safety
// `grader` must be a live grader handle; string pointers must be
// NUL-terminated; `out_is_correct` must be writable.
enum AmmoreStatus ammore_grade_naive(const struct AmmoreGrader *grader,
                                     const char *expected,
                                     const char *student,
                                     int *out_is_correct);

// Text-processing grading: canonicalization plus exact symbolic
// equivalence, falling back from naive matching.
//
// # Safety
// As [`ammore_grade_naive`].
enum AmmoreStatus ammore_grade_text(const struct AmmoreGrader *grader,
                                    const char *question,
                                    const char *expected,
                                    const char *student,
                                    int *out_is_correct);

// Exact mathematical equivalence of two answers after normalization
// and parsing.
//
// # Safety
// As [`ammore_grade_naive`].
enum AmmoreStatus ammore_answers_equivalent(const struct AmmoreGrader *grader,
                                            const char *a,
                                            const char *b,
                                            int *out_equivalent);

// Canonicalize raw answer text. On success `*out_text` holds a newly
// allocated string; release it with [`ammore_string_free`].
//
// # Safety
// As [`ammore_grade_naive`]; `out_text` must be writable.
enum AmmoreStatus ammore_canonicalize(const struct AmmoreGrader *grader,
                                      const char *raw,
                                      char **out_text);

// Release a string returned by this library. Null is a no-op.
//
// # Safety
// `text` must come from this library and must not be freed twice.
void ammore_string_free(char *text);

// The default knowledge-tracing parameters.
struct AmmoreBktParams ammore_bkt_default_params(void);

// One knowledge update from `p_know` given a correct (nonzero) or
// incorrect (zero) observation. Parameters and `p_know` must lie
// strictly inside (0,1).
//
// # Safety
// `out_p` must be writable.
enum AmmoreStatus ammore_bkt_step(struct AmmoreBktParams params,
                                  double p_know,
                                  int observed_correct,
                                  double *out_p);

// Final knowledge probability after folding a whole observation
// sequence (nonzero entries are correct answers) from the initial
// probability in `params`. Empty sequences are invalid.
//
// # Safety
// `observations` must point at `len` readable ints; `out_final` must
// be writable.
enum AmmoreStatus ammore_bkt_final_score(struct AmmoreBktParams params,
                                         const int *observations,
                                         size_t len,
                                         double *out_final);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AMMORE_H */
